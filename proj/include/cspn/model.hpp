#pragma once

#include <random>
#include <string>
#include <vector>

#include "cspn/chart.hpp"
#include "cspn/encoder.hpp"
#include "cspn/errors.hpp"
#include "cspn/params.hpp"
#include "cspn/span_model.hpp"
#include "cspn/treebank.hpp"

namespace cspn {

struct ModelConfig {
  EncoderConfig encoder;
  int d_hidden = 250;  // span-scorer hidden width
  int d_ext = 0;       // external context-vector width, 0 = none
};

/// Everything a trained parser consists of: configuration, vocabularies, and
/// the parameter store with typed handles into it. Movable, not copyable.
struct Model {
  ModelConfig config;
  ParamStore store;
  Vocab words{"<UNK>"};
  Vocab pos_tags{"<UNK>"};
  LabelVocab labels;  // index 0 is the dummy label
  EncoderParams encoder;
  SpanScorerParams scorer;
  PosHeadParams pos_head;

  std::vector<int> word_ids(const std::vector<std::string>& ws) const {
    std::vector<int> ids;
    ids.reserve(ws.size());
    for (const std::string& w : ws) ids.push_back(words.id_or_reserved(w));
    return ids;
  }
};

/// Builds vocabularies from the training corpus (labels are collapsed chain
/// labels) and initializes all parameters with the given seed.
inline Model init_model(const Corpus& train, const ModelConfig& config, uint64_t seed) {
  Model m;
  m.config = config;
  for (const ParseTree& t : train) {
    for (const LabeledSpan& s : tree_to_spans(t)) m.labels.add(s.label);
    Sentence sent = sentence_of(t);
    for (const std::string& w : sent.words) m.words.add(w);
    for (const std::string& p : sent.pos_tags) m.pos_tags.add(p);
  }
  if (m.labels.size() < 2) throw EmptyLabelVocab();
  std::mt19937_64 rng(seed);
  m.encoder = make_encoder_params(m.store, config.encoder, m.words.size(), config.d_ext, rng);
  m.scorer = make_span_scorer_params(m.store, config.encoder.d_model, config.d_hidden,
                                     m.labels.size(), rng, config.encoder.ln_eps);
  m.pos_head = make_pos_head_params(m.store, config.encoder.d_model, m.pos_tags.size(), rng);
  return m;
}

/// Rebuilds parameter handles for a model whose store was filled from disk.
inline void bind_model_params(Model& m) {
  m.encoder = bind_encoder_params(m.store, m.config.encoder, m.config.d_ext > 0);
  m.scorer = bind_span_scorer_params(m.store, m.config.encoder.ln_eps);
  m.pos_head = bind_pos_head_params(m.store);
}

struct ParseResult {
  ParseTree tree;
  double score = 0.0;
  std::vector<std::string> tags;  // predicted POS tags, one per word
};

/// Parses one pre-tokenized sentence: scores the chart, picks POS tags by
/// argmax, and decodes the best tree.
inline ParseResult parse_sentence(Model& m, const std::vector<std::string>& words,
                                  const Matrix* external = nullptr,
                                  std::string* chart_dump = nullptr) {
  Tape tape;
  ChartComputation cc = score_chart(tape, m.word_ids(words), m.encoder, m.scorer, m.pos_head,
                                    m.labels, external);
  ParseResult r;
  const Matrix& logits = tape.value(cc.pos_logits);
  for (int t = 0; t < logits.rows; ++t) {
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (logits(t, j) > logits(t, best)) best = j;
    r.tags.push_back(m.pos_tags.name(best));
  }
  if (chart_dump) *chart_dump = chart_debug_dump(cc.chart);
  ScoredTree st = cky_decode(cc.chart, Sentence{words, r.tags});
  r.tree = std::move(st.tree);
  r.score = st.score;
  return r;
}

}  // namespace cspn
