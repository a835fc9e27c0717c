#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cspn/errors.hpp"
#include "cspn/treebank.hpp"

namespace cspn {

struct BracketCounts {
  int64_t correct = 0;  // T_C
  int64_t pred = 0;     // T_P
  int64_t gold = 0;     // T_G

  BracketCounts& operator+=(const BracketCounts& o) {
    correct += o.correct;
    pred += o.pred;
    gold += o.gold;
    return *this;
  }
};

struct PRF {
  double p = 0.0;
  double r = 0.0;
  double f1 = 0.0;
};

/// Precision/recall/F1 as percentages from bracket counts. By convention the
/// ratios are 0 when their denominators are 0, and F1 is 0 when P + R = 0.
inline PRF prf(int64_t t_c, int64_t t_p, int64_t t_g) {
  PRF r;
  r.p = t_p == 0 ? 0.0 : 100.0 * double(t_c) / double(t_p);
  r.r = t_g == 0 ? 0.0 : 100.0 * double(t_c) / double(t_g);
  r.f1 = (r.p + r.r) == 0.0 ? 0.0 : 2.0 * r.p * r.r / (r.p + r.r);
  return r;
}

/// Half-up rounding to two decimals, for report formatting.
inline double round2(double x) { return std::floor(x * 100.0 + 0.5) / 100.0; }

struct EvalOptions {
  bool ignore_root = false;   // drop the (0, n) root bracket of every tree
  bool delete_punct = false;  // remove punctuation tokens before matching
};

/// Tags treated as punctuation by --delete-punct, following the usual evalb
/// delete list plus the PU tag.
inline bool is_punct_tag(const std::string& tag) {
  static const std::set<std::string> kPunct = {"PU",  "PUNCT", ".",    ",",     ":",  "``",
                                               "''",  "'",     "`",    "-LRB-", "-RRB-",
                                               "SYM", "$",     "#"};
  return kPunct.count(tag) > 0;
}

namespace detail {

/// Removes the leaves at the given positions, dropping internal nodes that
/// become empty.
inline bool prune_leaves(const ParseTree& t, const std::vector<bool>& drop, int& pos,
                         ParseTree& out) {
  if (t.is_leaf()) {
    bool keep = !drop[size_t(pos)];
    ++pos;
    if (keep) out = t;
    return keep;
  }
  std::vector<ParseTree> children;
  for (const ParseTree& c : t.children) {
    ParseTree kept;
    if (prune_leaves(c, drop, pos, kept)) children.push_back(std::move(kept));
  }
  if (children.empty()) return false;
  out = ParseTree::internal(t.label, std::move(children));
  return true;
}

inline std::multiset<std::tuple<int, int, std::string>> bracket_multiset(
    const ParseTree& t, const EvalOptions& opt) {
  std::vector<LabeledSpan> brackets = tree_to_brackets(t);
  std::multiset<std::tuple<int, int, std::string>> out;
  const int n = count_leaves(t);
  for (const LabeledSpan& b : brackets) {
    if (opt.ignore_root && b.i == 0 && b.j == n) continue;
    out.insert({b.i, b.j, b.label});
  }
  return out;
}

}  // namespace detail

/// Labeled bracket matching between one predicted and one gold tree, with
/// multiset semantics (duplicate brackets pair off) and per-label tallies.
/// Unary chains are NOT collapsed: each node is its own bracket.
inline BracketCounts match_brackets(const ParseTree& pred, const ParseTree& gold,
                                    std::map<std::string, BracketCounts>* per_label = nullptr,
                                    const EvalOptions& opt = {}) {
  ParseTree p = pred;
  ParseTree g = gold;
  if (opt.delete_punct) {
    // Deletion is decided by the gold tags and applied to both trees, so the
    // token check below sees the pruned sentences.
    Sentence gs0 = sentence_of(gold);
    Sentence ps0 = sentence_of(pred);
    if (ps0.words.size() != gs0.words.size())
      throw TokenMismatch(std::to_string(ps0.words.size()) + " vs " +
                          std::to_string(gs0.words.size()) + " words");
    std::vector<bool> drop(gs0.words.size(), false);
    bool any_kept = false;
    for (size_t i = 0; i < gs0.pos_tags.size(); ++i) {
      drop[i] = is_punct_tag(gs0.pos_tags[i]);
      any_kept = any_kept || !drop[i];
    }
    if (any_kept) {
      int pos = 0;
      ParseTree pp, gg;
      detail::prune_leaves(pred, drop, pos, pp);
      pos = 0;
      detail::prune_leaves(gold, drop, pos, gg);
      p = std::move(pp);
      g = std::move(gg);
    }
  }
  Sentence ps = sentence_of(p);
  Sentence gs = sentence_of(g);
  if (ps.words != gs.words) {
    std::string detail = ps.words.size() != gs.words.size()
                             ? std::to_string(ps.words.size()) + " vs " +
                                   std::to_string(gs.words.size()) + " words"
                             : "same length, different words";
    throw TokenMismatch(detail);
  }
  auto pred_set = detail::bracket_multiset(p, opt);
  auto gold_set = detail::bracket_multiset(g, opt);
  BracketCounts c;
  c.pred = int64_t(pred_set.size());
  c.gold = int64_t(gold_set.size());
  if (per_label) {
    for (const auto& b : pred_set) ++(*per_label)[std::get<2>(b)].pred;
    for (const auto& b : gold_set) ++(*per_label)[std::get<2>(b)].gold;
  }
  for (const auto& b : pred_set) {
    auto it = gold_set.find(b);
    if (it != gold_set.end()) {
      gold_set.erase(it);
      ++c.correct;
      if (per_label) ++(*per_label)[std::get<2>(b)].correct;
    }
  }
  return c;
}

inline double pos_accuracy(const std::vector<std::string>& pred_tags,
                           const std::vector<std::string>& gold_tags) {
  if (pred_tags.size() != gold_tags.size())
    throw LengthMismatch("pos_accuracy over tag sequences of different lengths");
  if (pred_tags.empty()) return 0.0;
  int64_t hit = 0;
  for (size_t i = 0; i < pred_tags.size(); ++i)
    if (pred_tags[i] == gold_tags[i]) ++hit;
  return 100.0 * double(hit) / double(pred_tags.size());
}

struct LabelReport {
  std::string label;
  BracketCounts counts;
  PRF scores;
};

struct EvalReport {
  BracketCounts totals;
  PRF scores;  // micro-averaged: corpus counts summed before division
  std::vector<LabelReport> per_label;
  double pos_acc = 0.0;
  int64_t sentences = 0;
  int64_t exact_match = 0;
};

/// evalb-style corpus evaluation: counts are aggregated over the corpus and
/// divided once. POS accuracy is token-level over all sentences.
inline EvalReport evaluate_corpus(const Corpus& pred, const Corpus& gold,
                                  const EvalOptions& opt = {}) {
  if (pred.size() != gold.size())
    throw LengthMismatch("pred has " + std::to_string(pred.size()) + " trees, gold " +
                         std::to_string(gold.size()));
  EvalReport rep;
  std::map<std::string, BracketCounts> per_label;
  int64_t tokens = 0, tag_hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    BracketCounts c;
    try {
      c = match_brackets(pred[i], gold[i], &per_label, opt);
    } catch (const TokenMismatch& e) {
      throw TokenMismatch("sentence " + std::to_string(i + 1) + ": " + e.what());
    }
    rep.totals += c;
    ++rep.sentences;
    if (c.correct == c.pred && c.correct == c.gold) ++rep.exact_match;
    Sentence ps = sentence_of(pred[i]);
    Sentence gs = sentence_of(gold[i]);
    tokens += int64_t(gs.words.size());
    for (size_t t = 0; t < gs.words.size(); ++t)
      if (t < ps.pos_tags.size() && ps.pos_tags[t] == gs.pos_tags[t]) ++tag_hits;
  }
  rep.scores = prf(rep.totals.correct, rep.totals.pred, rep.totals.gold);
  rep.pos_acc = tokens == 0 ? 0.0 : 100.0 * double(tag_hits) / double(tokens);
  for (const auto& [label, counts] : per_label)
    rep.per_label.push_back({label, counts, prf(counts.correct, counts.pred, counts.gold)});
  return rep;
}

/// Human-readable report table.
inline std::string format_report(const EvalReport& rep) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "sentences     %lld\n", (long long)rep.sentences);
  out += buf;
  std::snprintf(buf, sizeof buf, "exact match   %lld\n", (long long)rep.exact_match);
  out += buf;
  std::snprintf(buf, sizeof buf, "brackets      gold=%lld pred=%lld correct=%lld\n",
                (long long)rep.totals.gold, (long long)rep.totals.pred,
                (long long)rep.totals.correct);
  out += buf;
  std::snprintf(buf, sizeof buf, "precision     %.2f\nrecall        %.2f\nF1            %.2f\n",
                round2(rep.scores.p), round2(rep.scores.r), round2(rep.scores.f1));
  out += buf;
  std::snprintf(buf, sizeof buf, "POS accuracy  %.2f\n", round2(rep.pos_acc));
  out += buf;
  if (!rep.per_label.empty()) {
    out += "\nlabel        T_G    T_P    T_C       P       R      F1\n";
    for (const LabelReport& l : rep.per_label) {
      std::snprintf(buf, sizeof buf, "%-10s %6lld %6lld %6lld %7.2f %7.2f %7.2f\n",
                    l.label.c_str(), (long long)l.counts.gold, (long long)l.counts.pred,
                    (long long)l.counts.correct, round2(l.scores.p), round2(l.scores.r),
                    round2(l.scores.f1));
      out += buf;
    }
  }
  return out;
}

/// Machine-readable per-label table: one row per label plus a TOTAL row.
inline std::string report_to_csv(const EvalReport& rep) {
  std::string out = "label,T_G,T_P,T_C,P,R,F1\n";
  char buf[256];
  for (const LabelReport& l : rep.per_label) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%lld,%.2f,%.2f,%.2f\n", l.label.c_str(),
                  (long long)l.counts.gold, (long long)l.counts.pred,
                  (long long)l.counts.correct, round2(l.scores.p), round2(l.scores.r),
                  round2(l.scores.f1));
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "TOTAL,%lld,%lld,%lld,%.2f,%.2f,%.2f\n",
                (long long)rep.totals.gold, (long long)rep.totals.pred,
                (long long)rep.totals.correct, round2(rep.scores.p), round2(rep.scores.r),
                round2(rep.scores.f1));
  out += buf;
  return out;
}

}  // namespace cspn
