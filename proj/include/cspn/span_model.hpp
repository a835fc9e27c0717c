#pragma once

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "cspn/chart.hpp"
#include "cspn/encoder.hpp"
#include "cspn/errors.hpp"
#include "cspn/matrix.hpp"
#include "cspn/tape.hpp"
#include "cspn/treebank.hpp"

namespace cspn {

struct SpanScorerParams {
  Parameter* m1 = nullptr;       // d_model x d_hidden
  Parameter* c1 = nullptr;       // 1 x d_hidden
  Parameter* ln_gain = nullptr;  // 1 x d_hidden
  Parameter* ln_bias = nullptr;  // 1 x d_hidden
  Parameter* m2 = nullptr;       // d_hidden x |L|  (column 0 is the dummy label)
  double ln_eps = 1e-6;
};

struct PosHeadParams {
  Parameter* w = nullptr;  // d_model x |POS|
  Parameter* b = nullptr;  // 1 x |POS|
};

inline SpanScorerParams make_span_scorer_params(ParamStore& store, int d_model, int d_hidden,
                                                int num_labels, std::mt19937_64& rng,
                                                double ln_eps = 1e-6) {
  SpanScorerParams p;
  p.m1 = &store.create("span.m1", d_model, d_hidden);
  p.c1 = &store.create("span.c1", 1, d_hidden);
  p.ln_gain = &store.create("span.ln.gain", 1, d_hidden);
  p.ln_bias = &store.create("span.ln.bias", 1, d_hidden);
  p.m2 = &store.create("span.m2", d_hidden, num_labels);
  init_glorot(p.m1->value, rng);
  init_glorot(p.m2->value, rng);
  init_const(p.ln_gain->value, 1.0);
  p.ln_eps = ln_eps;
  return p;
}

inline SpanScorerParams bind_span_scorer_params(ParamStore& store, double ln_eps = 1e-6) {
  return {&store.at("span.m1"), &store.at("span.c1"), &store.at("span.ln.gain"),
          &store.at("span.ln.bias"), &store.at("span.m2"), ln_eps};
}

inline PosHeadParams make_pos_head_params(ParamStore& store, int d_model, int num_tags,
                                          std::mt19937_64& rng) {
  PosHeadParams p;
  p.w = &store.create("pos.w", d_model, num_tags);
  p.b = &store.create("pos.b", 1, num_tags);
  init_glorot(p.w->value, rng);
  return p;
}

inline PosHeadParams bind_pos_head_params(ParamStore& store) {
  return {&store.at("pos.w"), &store.at("pos.b")};
}

// ---------------------------------------------------------------------------
// Span vectors
// ---------------------------------------------------------------------------

/// Row index of span (i, j) in the packed all-spans matrix (i ascending,
/// then j), for a sentence of n words.
inline int span_row(int i, int j, int n) {
  return i * n - i * (i - 1) / 2 + (j - i - 1);
}

inline int num_spans(int n) { return n * (n + 1) / 2; }

/// Fencepost matrix: row t is [forward half of Y_t ; backward half of Y_{t+1}]
/// for t = 0..n, where Y is the (n+2) x d_model encoder output with START at
/// row 0. Span vectors are differences of these rows.
inline Var fencepost_matrix(Tape& tape, Var encoded) {
  const Matrix& y = tape.value(encoded);
  const int d = y.cols;
  const int n = y.rows - 2;
  Var fwd = tape.slice_cols(tape.slice_rows(encoded, 0, n + 1), 0, d / 2);
  Var bwd = tape.slice_cols(tape.slice_rows(encoded, 1, n + 2), d / 2, d);
  return tape.concat_cols(fwd, bwd);
}

/// Value-level span vector v_ij for one span, taken straight from an encoder
/// output matrix. The training path computes all spans at once on the tape;
/// this is the reference form.
inline Matrix span_vector(const Matrix& y, int i, int j) {
  const int n = y.rows - 2;
  const int d = y.cols;
  if (i < 0 || j > n || i >= j) throw SpanOutOfRange(i, j, n);
  Matrix v(1, d);
  const int h = d / 2;
  for (int c = 0; c < h; ++c) v(0, c) = y(j, c) - y(i, c);
  for (int c = h; c < d; ++c) v(0, c) = y(j + 1, c) - y(i + 1, c);
  return v;
}

/// Value-level label scores for one span vector:
/// M_2 relu(LN(M_1 v + c_1)), a 1 x |L| row. The dummy component is NOT
/// zeroed here; chart assembly does that.
inline Matrix score_span(const Matrix& v, const SpanScorerParams& p) {
  Matrix h = relu(layer_norm(add_rowvec(matmul(v, p.m1->value), p.c1->value),
                             p.ln_gain->value, p.ln_bias->value, p.ln_eps));
  return matmul(h, p.m2->value);
}

// ---------------------------------------------------------------------------
// Chart scoring
// ---------------------------------------------------------------------------

/// Tape-resident pieces of a scored sentence, kept so losses can route
/// gradients back through the span-score matrix and POS logits.
struct ChartComputation {
  int n = 0;
  Var encoded;      // (n+2) x d_model
  Var span_scores;  // num_spans(n) x |L|
  Var pos_logits;   // n x |POS|
  Chart chart;      // values with the dummy column forced to 0
};

/// Scores every span of the sentence and assembles the chart. The dummy
/// label's column is overwritten with exact zeros.
inline ChartComputation score_chart(Tape& tape, const std::vector<int>& word_ids,
                                    const EncoderParams& enc, const SpanScorerParams& scorer,
                                    const PosHeadParams& pos, const LabelVocab& labels,
                                    const Matrix* external = nullptr) {
  ChartComputation c;
  c.n = int(word_ids.size());
  c.encoded = encode(tape, word_ids, enc, external);
  Var spans = tape.span_differences(fencepost_matrix(tape, c.encoded));
  Var hidden = tape.relu(tape.layer_norm(
      tape.add_rowvec(tape.matmul(spans, tape.leaf(*scorer.m1)), tape.leaf(*scorer.c1)),
      tape.leaf(*scorer.ln_gain), tape.leaf(*scorer.ln_bias), scorer.ln_eps));
  c.span_scores = tape.matmul(hidden, tape.leaf(*scorer.m2));
  c.pos_logits = tape.add_rowvec(
      tape.matmul(tape.slice_rows(c.encoded, 1, c.n + 1), tape.leaf(*pos.w)),
      tape.leaf(*pos.b));

  const Matrix& s = tape.value(c.span_scores);
  if (s.cols != labels.size())
    throw ShapeMismatch("span scorer emits " + std::to_string(s.cols) + " labels, vocab has " +
                        std::to_string(labels.size()));
  c.chart = Chart(c.n, labels);
  for (int i = 0; i < c.n; ++i)
    for (int j = i + 1; j <= c.n; ++j) {
      const int r = span_row(i, j, c.n);
      for (int l = 1; l < labels.size(); ++l) c.chart.at(i, j, l) = s(r, l);
    }
  return c;
}

/// Value-only chart on a private tape.
inline Chart score_chart_values(const std::vector<int>& word_ids, const EncoderParams& enc,
                                const SpanScorerParams& scorer, const PosHeadParams& pos,
                                const LabelVocab& labels, const Matrix* external = nullptr) {
  Tape tape;
  return score_chart(tape, word_ids, enc, scorer, pos, labels, external).chart;
}

/// Per-token POS logits (START/STOP rows excluded): n x |POS|.
inline Var pos_logits(Tape& tape, Var encoded, const PosHeadParams& p) {
  const int n = tape.value(encoded).rows - 2;
  return tape.add_rowvec(tape.matmul(tape.slice_rows(encoded, 1, n + 1), tape.leaf(*p.w)),
                         tape.leaf(*p.b));
}

/// Debug dump for decoder diffing: one "i j label score" line per labeled
/// chart cell, dummy column omitted.
inline std::string chart_debug_dump(const Chart& chart) {
  std::string out;
  char buf[64];
  for (int i = 0; i < chart.n; ++i)
    for (int j = i + 1; j <= chart.n; ++j)
      for (int l = 1; l < chart.num_labels; ++l) {
        std::snprintf(buf, sizeof buf, " %.17g\n", chart.at(i, j, l));
        out += std::to_string(i) + " " + std::to_string(j) + " " + chart.labels->name(l) + buf;
      }
  return out;
}

}  // namespace cspn
