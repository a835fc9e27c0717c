#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cspn/errors.hpp"
#include "cspn/treebank.hpp"

namespace cspn {

/// Dense (n+1) x (n+1) x |L| span-score table, defined for i < j. Label index
/// 0 is the dummy label; model-produced charts keep its column at exactly 0,
/// loss-augmented copies may not.
struct Chart {
  int n = 0;
  int num_labels = 0;
  const LabelVocab* labels = nullptr;  // not owned; needed to build trees
  std::vector<double> scores;

  Chart() = default;
  Chart(int n_, const LabelVocab& vocab)
      : n(n_), num_labels(vocab.size()), labels(&vocab),
        scores(size_t(n_ + 1) * (n_ + 1) * vocab.size(), 0.0) {}

  double& at(int i, int j, int l) {
    return scores[(size_t(i) * (n + 1) + j) * num_labels + l];
  }
  double at(int i, int j, int l) const {
    return scores[(size_t(i) * (n + 1) + j) * num_labels + l];
  }
};

/// A chart cell visited by a derivation: span (i, j) labeled with vocabulary
/// index `label` (0 = dummy).
struct LabeledCell {
  int i = 0;
  int j = 0;
  int label = 0;

  bool operator==(const LabeledCell&) const = default;
};

struct ScoredTree {
  ParseTree tree;
  double score = 0.0;
};

/// Full result of a chart decode: the optimum, every cell of the optimal
/// binary derivation (dummy-labeled cells included), and the reconstructed
/// tree with dummy nodes spliced out and unary chains re-expanded.
struct Derivation {
  double score = 0.0;
  std::vector<LabeledCell> cells;
  ParseTree tree;
};

// ---------------------------------------------------------------------------
// Tree scoring
// ---------------------------------------------------------------------------

/// Sum of chart scores over the tree's collapsed labeled spans. In strict
/// mode a label absent from the vocabulary is an error; in lenient mode it
/// scores 0 like the dummy label.
inline double tree_score(const Chart& chart, const ParseTree& tree, bool strict = true) {
  double total = 0.0;
  for (const LabeledSpan& s : tree_to_spans(tree)) {
    if (s.i < 0 || s.j > chart.n || s.i >= s.j) throw SpanOutOfRange(s.i, s.j, chart.n);
    int l = chart.labels->id(s.label);
    if (l < 0) {
      if (strict) throw UnknownLabel(s.label);
      continue;
    }
    total += chart.at(s.i, s.j, l);
  }
  return total;
}

// ---------------------------------------------------------------------------
// CKY-style decoding
// ---------------------------------------------------------------------------

namespace detail {

struct DecodeTables {
  int n = 0;
  std::vector<double> total;        // best derivation score of span
  std::vector<double> label_score;  // best label's score
  std::vector<int> label;           // best label index
  std::vector<int> split;           // best split point, -1 for length-1 spans

  explicit DecodeTables(int n_)
      : n(n_), total(size_t(n_ + 1) * (n_ + 1), 0.0),
        label_score(size_t(n_ + 1) * (n_ + 1), 0.0),
        label(size_t(n_ + 1) * (n_ + 1), 0), split(size_t(n_ + 1) * (n_ + 1), -1) {}

  size_t idx(int i, int j) const { return size_t(i) * (n + 1) + j; }
};

/// Bottom-up dynamic program. Ties break to the lowest label index and the
/// smallest split point. The root span may not take the dummy label.
inline DecodeTables run_cky(const Chart& chart) {
  const int n = chart.n;
  if (n < 1) throw SpanOutOfRange(0, 0, n);
  if (chart.num_labels < 2) throw EmptyLabelVocab();
  DecodeTables t(n);
  for (int len = 1; len <= n; ++len) {
    for (int i = 0; i + len <= n; ++i) {
      const int j = i + len;
      const bool is_root = (i == 0 && j == n);
      int best_l = is_root ? 1 : 0;
      double best_ls = chart.at(i, j, best_l);
      for (int l = best_l + 1; l < chart.num_labels; ++l) {
        double s = chart.at(i, j, l);
        if (s > best_ls) {
          best_ls = s;
          best_l = l;
        }
      }
      const size_t ij = t.idx(i, j);
      t.label[ij] = best_l;
      t.label_score[ij] = best_ls;
      if (len == 1) {
        t.total[ij] = best_ls;
      } else {
        int best_k = i + 1;
        double best_ks = t.total[t.idx(i, i + 1)] + t.total[t.idx(i + 1, j)];
        for (int k = i + 2; k < j; ++k) {
          double s = t.total[t.idx(i, k)] + t.total[t.idx(k, j)];
          if (s > best_ks) {
            best_ks = s;
            best_k = k;
          }
        }
        t.split[ij] = best_k;
        t.total[ij] = best_ls + best_ks;
      }
    }
  }
  return t;
}

/// Rebuilds the derivation's subtrees over [i, j). Dummy-labeled spans splice
/// their children into the parent; chain labels expand to nested nodes.
inline std::vector<ParseTree> rebuild(const DecodeTables& t, const Chart& chart,
                                      const Sentence& sent, int i, int j,
                                      std::vector<LabeledCell>& cells) {
  const size_t ij = t.idx(i, j);
  const int l = t.label[ij];
  cells.push_back({i, j, l});
  std::vector<ParseTree> children;
  if (j - i == 1) {
    children.push_back(ParseTree::leaf(sent.words[size_t(i)], sent.pos_tags[size_t(i)]));
  } else {
    const int k = t.split[ij];
    children = rebuild(t, chart, sent, i, k, cells);
    std::vector<ParseTree> right = rebuild(t, chart, sent, k, j, cells);
    for (ParseTree& r : right) children.push_back(std::move(r));
  }
  if (l == 0) return children;
  ParseTree node = ParseTree::internal(chart.labels->name(l), std::move(children));
  std::vector<ParseTree> out;
  out.push_back(expand_unaries(node));
  return out;
}

inline Sentence placeholder_sentence(int n) {
  Sentence s;
  for (int i = 0; i < n; ++i) {
    s.words.push_back("w" + std::to_string(i + 1));
    s.pos_tags.push_back("XX");
  }
  return s;
}

}  // namespace detail

/// Exact argmax over binary derivations with per-span labels (dummy allowed
/// everywhere except the root). Returns the optimum, its cells, and the tree.
inline Derivation decode_derivation(const Chart& chart, const Sentence& sent) {
  if (int(sent.size()) != chart.n)
    throw LengthMismatch("sentence has " + std::to_string(sent.size()) + " words, chart n=" +
                         std::to_string(chart.n));
  detail::DecodeTables t = detail::run_cky(chart);
  Derivation d;
  d.score = t.total[t.idx(0, chart.n)];
  std::vector<ParseTree> roots = detail::rebuild(t, chart, sent, 0, chart.n, d.cells);
  d.tree = std::move(roots[0]);
  return d;
}

inline ScoredTree cky_decode(const Chart& chart, const Sentence& sent) {
  Derivation d = decode_derivation(chart, sent);
  return {std::move(d.tree), d.score};
}

inline ScoredTree cky_decode(const Chart& chart) {
  return cky_decode(chart, detail::placeholder_sentence(chart.n));
}

// ---------------------------------------------------------------------------
// Hamming distance on labeled spans
// ---------------------------------------------------------------------------

/// Number of predicted spans whose label disagrees with the gold label of the
/// same interval; an interval gold does not bracket counts as dummy-labeled.
/// Predicted entries may carry the dummy label explicitly.
inline int hamming_delta(const std::vector<LabeledSpan>& pred,
                         const std::vector<LabeledSpan>& gold) {
  std::map<std::pair<int, int>, const std::string*> gold_by_span;
  for (const LabeledSpan& g : gold) gold_by_span[{g.i, g.j}] = &g.label;
  int delta = 0;
  for (const LabeledSpan& p : pred) {
    auto it = gold_by_span.find({p.i, p.j});
    const std::string& gl = it == gold_by_span.end() ? kNullLabel : *it->second;
    if (p.label != gl) ++delta;
  }
  return delta;
}

inline int hamming_delta(const ParseTree& pred, const ParseTree& gold) {
  if (count_leaves(pred) != count_leaves(gold))
    throw LengthMismatch("hamming_delta over trees of different lengths");
  return hamming_delta(tree_to_spans(pred), tree_to_spans(gold));
}

// ---------------------------------------------------------------------------
// Loss-augmented decoding and hinge loss
// ---------------------------------------------------------------------------

/// Gold span labels as vocabulary ids, keyed by (i, j). Unbracketed spans are
/// implicitly the dummy label 0.
inline std::map<std::pair<int, int>, int> gold_label_ids(const Chart& chart,
                                                         const ParseTree& gold_tree) {
  std::map<std::pair<int, int>, int> ids;
  for (const LabeledSpan& s : tree_to_spans(gold_tree)) {
    if (s.i < 0 || s.j > chart.n || s.i >= s.j) throw SpanOutOfRange(s.i, s.j, chart.n);
    int l = chart.labels->id(s.label);
    if (l < 0) throw UnknownLabel(s.label);
    ids[{s.i, s.j}] = l;
  }
  return ids;
}

struct LossAugResult {
  ParseTree tree;
  double augmented_score = 0.0;        // S(T) + Delta(T, T*) at the optimum
  double model_score = 0.0;            // S(T) part (dummy cells contribute 0)
  int delta = 0;                       // Hamming part, exact integer
  std::vector<LabeledCell> pred_cells; // non-dummy cells, for gradients
};

/// Maximizes S(T) + Delta(T, T*) over all trees by decoding the chart with
/// +1 added to every cell whose label differs from gold's for that span.
inline LossAugResult loss_augmented_decode(const Chart& chart, const ParseTree& gold_tree,
                                           const Sentence& sent) {
  auto gold_ids = gold_label_ids(chart, gold_tree);
  auto gold_of = [&](int i, int j) {
    auto it = gold_ids.find({i, j});
    return it == gold_ids.end() ? 0 : it->second;
  };
  Chart aug = chart;
  for (int i = 0; i < chart.n; ++i)
    for (int j = i + 1; j <= chart.n; ++j) {
      const int g = gold_of(i, j);
      for (int l = 0; l < chart.num_labels; ++l)
        if (l != g) aug.at(i, j, l) += 1.0;
    }
  Derivation d = decode_derivation(aug, sent);
  LossAugResult r;
  r.tree = std::move(d.tree);
  r.augmented_score = d.score;
  for (const LabeledCell& c : d.cells) {
    if (c.label != gold_of(c.i, c.j)) ++r.delta;
    if (c.label != 0) {
      r.model_score += chart.at(c.i, c.j, c.label);
      r.pred_cells.push_back(c);
    }
  }
  return r;
}

inline LossAugResult loss_augmented_decode(const Chart& chart, const ParseTree& gold_tree) {
  return loss_augmented_decode(chart, gold_tree, detail::placeholder_sentence(chart.n));
}

struct HingeLoss {
  double value = 0.0;
  double gold_score = 0.0;
  LossAugResult violator;
  std::vector<LabeledCell> gold_cells;  // for gradients
};

/// max(0, [S(T') + Delta(T', T*)] - S(T*)) with T' from loss-augmented
/// decoding. Zero exactly when the margin constraints hold for every tree.
inline HingeLoss hinge_loss_detailed(const Chart& chart, const ParseTree& gold_tree,
                                     const Sentence& sent) {
  HingeLoss h;
  h.violator = loss_augmented_decode(chart, gold_tree, sent);
  for (const LabeledSpan& s : tree_to_spans(gold_tree)) {
    int l = chart.labels->id(s.label);
    h.gold_score += chart.at(s.i, s.j, l);
    h.gold_cells.push_back({s.i, s.j, l});
  }
  h.value = std::max(0.0, h.violator.augmented_score - h.gold_score);
  return h;
}

inline double hinge_loss(const Chart& chart, const ParseTree& gold_tree) {
  return hinge_loss_detailed(chart, gold_tree, detail::placeholder_sentence(chart.n)).value;
}

}  // namespace cspn
