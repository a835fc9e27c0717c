#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cspn/errors.hpp"

namespace cspn {

/// Reserved separator used to join collapsed unary chain labels.
inline const std::string kChainSeparator = "⋄";  // ⋄
/// Display name of the dummy label at vocabulary index 0.
inline const std::string kNullLabel = "∅";  // ∅

/// A tokenized sentence, optionally with per-token part-of-speech tags.
struct Sentence {
  std::vector<std::string> words;
  std::vector<std::string> pos_tags;  // empty or same length as words

  size_t size() const { return words.size(); }
};

/// A constituency tree node. Leaves carry (word, pos tag in `label`); internal
/// nodes carry a constituent label and at least one child. Immutable by
/// convention after construction.
struct ParseTree {
  std::string label;                 // constituent tag, or POS tag for a leaf
  std::string word;                  // nonempty iff leaf
  std::vector<ParseTree> children;   // empty iff leaf

  bool is_leaf() const { return children.empty(); }

  static ParseTree leaf(std::string word, std::string pos) {
    ParseTree t;
    t.label = std::move(pos);
    t.word = std::move(word);
    return t;
  }
  static ParseTree internal(std::string label, std::vector<ParseTree> children) {
    ParseTree t;
    t.label = std::move(label);
    t.children = std::move(children);
    return t;
  }

  bool operator==(const ParseTree& o) const = default;
};

/// (i, j, label) over fencepost positions, 0 <= i < j <= n.
struct LabeledSpan {
  int i = 0;
  int j = 0;
  std::string label;

  bool operator==(const LabeledSpan& o) const = default;
  auto operator<=>(const LabeledSpan& o) const = default;
};

/// Bidirectional tag-string <-> dense index map with a reserved entry at
/// index 0 (the dummy label for charts, or <UNK> for word/tag vocabularies).
class Vocab {
 public:
  explicit Vocab(std::string reserved = kNullLabel) { add(std::move(reserved)); }

  int add(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    int id = int(names_.size());
    names_.push_back(name);
    ids_.emplace(name, id);
    return id;
  }

  /// -1 if absent.
  int id(const std::string& name) const {
    auto it = ids_.find(name);
    return it == ids_.end() ? -1 : it->second;
  }

  /// Index 0 (the reserved entry) if absent.
  int id_or_reserved(const std::string& name) const {
    int i = id(name);
    return i < 0 ? 0 : i;
  }

  const std::string& name(int id) const { return names_.at(size_t(id)); }
  int size() const { return int(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
};

using LabelVocab = Vocab;

// ---------------------------------------------------------------------------
// Bracketed I/O
// ---------------------------------------------------------------------------

namespace detail {

struct Token {
  std::string text;  // "(", ")", or an atom
  int line;
};

inline std::vector<Token> tokenize_brackets(const std::string& text) {
  std::vector<Token> toks;
  std::string cur;
  int line = 1;
  int cur_line = 1;
  auto flush = [&]() {
    if (!cur.empty()) {
      toks.push_back({cur, cur_line});
      cur.clear();
    }
  };
  for (char c : text) {
    if (c == '(' || c == ')') {
      flush();
      toks.push_back({std::string(1, c), line});
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      flush();
      if (c == '\n') ++line;
    } else {
      if (cur.empty()) cur_line = line;
      cur += c;
    }
  }
  flush();
  return toks;
}

inline std::string unescape_word(const std::string& w) {
  if (w == "-LRB-") return "(";
  if (w == "-RRB-") return ")";
  return w;
}

inline std::string escape_word(const std::string& w) {
  if (w == "(") return "-LRB-";
  if (w == ")") return "-RRB-";
  return w;
}

// Parses one "( ... )" expression starting at pos (which must point at "(").
// Advances pos past the closing paren.
inline ParseTree parse_expr(const std::vector<Token>& toks, size_t& pos, bool top_level);

inline ParseTree parse_node_body(const std::vector<Token>& toks, size_t& pos, int open_line,
                                 const std::string& label) {
  std::vector<ParseTree> children;
  std::vector<Token> atoms;
  while (pos < toks.size() && toks[pos].text != ")") {
    if (toks[pos].text == "(") {
      children.push_back(parse_expr(toks, pos, false));
    } else {
      atoms.push_back(toks[pos]);
      ++pos;
    }
  }
  if (pos >= toks.size()) throw UnbalancedParens(open_line);
  ++pos;  // consume ")"
  if (children.empty() && atoms.size() == 1)
    return ParseTree::leaf(unescape_word(atoms[0].text), label);
  if (!atoms.empty())
    // A bare word sitting next to bracketed children (or several words under
    // one tag) has no preterminal of its own.
    throw LeafWithoutTag(atoms[0].line);
  if (children.empty()) throw EmptyNode(open_line);
  return ParseTree::internal(label, std::move(children));
}

inline ParseTree parse_expr(const std::vector<Token>& toks, size_t& pos, bool top_level) {
  int open_line = toks[pos].line;
  ++pos;  // consume "("
  if (pos >= toks.size()) throw UnbalancedParens(open_line);
  if (toks[pos].text == ")") throw EmptyNode(open_line);
  if (toks[pos].text == "(") {
    // Unlabeled wrapper "( ... )": allowed only at top level with exactly one
    // subtree, which it passes through.
    if (!top_level) throw EmptyNode(open_line);
    std::vector<ParseTree> children;
    while (pos < toks.size() && toks[pos].text != ")") {
      if (toks[pos].text != "(") throw LeafWithoutTag(toks[pos].line);
      children.push_back(parse_expr(toks, pos, false));
    }
    if (pos >= toks.size()) throw UnbalancedParens(open_line);
    ++pos;  // consume ")"
    if (children.size() != 1) throw EmptyNode(open_line);
    return std::move(children[0]);
  }
  std::string label = toks[pos].text;
  ++pos;
  return parse_node_body(toks, pos, open_line, label);
}

}  // namespace detail

/// Parses a sequence of bracketed trees. Trees may span lines; an optional
/// unlabeled outer wrapper "( ... )" around a single tree is stripped.
inline std::vector<ParseTree> parse_bracketed(const std::string& text) {
  std::vector<detail::Token> toks = detail::tokenize_brackets(text);
  std::vector<ParseTree> trees;
  size_t pos = 0;
  while (pos < toks.size()) {
    if (toks[pos].text == ")") throw UnbalancedParens(toks[pos].line);
    if (toks[pos].text != "(") throw LeafWithoutTag(toks[pos].line);
    trees.push_back(detail::parse_expr(toks, pos, true));
  }
  return trees;
}

/// Canonical single-line bracketed form; inverse of parse_bracketed.
inline void write_bracketed(const ParseTree& t, std::string& out) {
  out += '(';
  out += t.label;
  if (t.is_leaf()) {
    out += ' ';
    out += detail::escape_word(t.word);
  } else {
    for (const ParseTree& c : t.children) {
      out += ' ';
      write_bracketed(c, out);
    }
  }
  out += ')';
}

inline std::string write_bracketed(const ParseTree& t) {
  std::string out;
  write_bracketed(t, out);
  return out;
}

// ---------------------------------------------------------------------------
// Tree transforms
// ---------------------------------------------------------------------------

inline void check_no_separator(const std::string& label, const std::string& sep) {
  if (label.find(sep) != std::string::npos) throw SeparatorInLabel(label);
}

/// Merges maximal chains of single-child internal nodes into one node whose
/// label joins the chain with `sep`. Preterminal leaves are untouched.
inline ParseTree collapse_unaries(const ParseTree& t, const std::string& sep = kChainSeparator) {
  if (t.is_leaf()) return t;
  check_no_separator(t.label, sep);
  std::string label = t.label;
  const ParseTree* node = &t;
  while (node->children.size() == 1 && !node->children[0].is_leaf()) {
    node = &node->children[0];
    check_no_separator(node->label, sep);
    label += sep + node->label;
  }
  std::vector<ParseTree> children;
  children.reserve(node->children.size());
  for (const ParseTree& c : node->children) children.push_back(collapse_unaries(c, sep));
  return ParseTree::internal(std::move(label), std::move(children));
}

/// Exact inverse of collapse_unaries.
inline ParseTree expand_unaries(const ParseTree& t, const std::string& sep = kChainSeparator) {
  if (t.is_leaf()) return t;
  std::vector<ParseTree> children;
  children.reserve(t.children.size());
  for (const ParseTree& c : t.children) children.push_back(expand_unaries(c, sep));
  size_t start = t.label.rfind(sep);
  if (start == std::string::npos)
    return ParseTree::internal(t.label, std::move(children));
  // Split the chain label from the right so nesting rebuilds innermost-first.
  ParseTree node = ParseTree::internal(t.label.substr(start + sep.size()), std::move(children));
  std::string rest = t.label.substr(0, start);
  while (true) {
    size_t cut = rest.rfind(sep);
    std::string head = cut == std::string::npos ? rest : rest.substr(cut + sep.size());
    std::vector<ParseTree> single;
    single.push_back(std::move(node));
    node = ParseTree::internal(std::move(head), std::move(single));
    if (cut == std::string::npos) break;
    rest = rest.substr(0, cut);
  }
  return node;
}

// ---------------------------------------------------------------------------
// Sentences and spans
// ---------------------------------------------------------------------------

inline void collect_leaves(const ParseTree& t, Sentence& s) {
  if (t.is_leaf()) {
    s.words.push_back(t.word);
    s.pos_tags.push_back(t.label);
    return;
  }
  for (const ParseTree& c : t.children) collect_leaves(c, s);
}

inline Sentence sentence_of(const ParseTree& t) {
  Sentence s;
  collect_leaves(t, s);
  return s;
}

inline int count_leaves(const ParseTree& t) {
  if (t.is_leaf()) return 1;
  int n = 0;
  for (const ParseTree& c : t.children) n += count_leaves(c);
  return n;
}

namespace detail {

inline int spans_walk(const ParseTree& t, int start, const std::string& sep,
                      std::vector<LabeledSpan>& out) {
  if (t.is_leaf()) return start + 1;
  check_no_separator(t.label, sep);
  std::string label = t.label;
  const ParseTree* node = &t;
  while (node->children.size() == 1 && !node->children[0].is_leaf()) {
    node = &node->children[0];
    check_no_separator(node->label, sep);
    label += sep + node->label;
  }
  int end = start;
  for (const ParseTree& c : node->children) end = spans_walk(c, end, sep, out);
  out.push_back({start, end, std::move(label)});
  return end;
}

}  // namespace detail

/// One span per internal node, with unary chains over the same interval
/// collapsed into a single joined label. Preterminals contribute nothing.
inline std::vector<LabeledSpan> tree_to_spans(const ParseTree& t,
                                              const std::string& sep = kChainSeparator) {
  std::vector<LabeledSpan> out;
  detail::spans_walk(t, 0, sep, out);
  return out;
}

/// Every internal node as its own (i, j, label), unary chains not collapsed.
/// This is the bracket set used for evalb-style scoring.
inline std::vector<LabeledSpan> tree_to_brackets(const ParseTree& t) {
  std::vector<LabeledSpan> out;
  struct Walk {
    std::vector<LabeledSpan>& out;
    int operator()(const ParseTree& node, int start) {
      if (node.is_leaf()) return start + 1;
      int end = start;
      for (const ParseTree& c : node.children) end = (*this)(c, end);
      out.push_back({start, end, node.label});
      return end;
    }
  };
  Walk{out}(t, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus loading, statistics, splitting
// ---------------------------------------------------------------------------

using Corpus = std::vector<ParseTree>;

/// Parses a whole treebank text. Rejects trees that carry no internal node
/// (a bare preterminal cannot carry a root span).
inline Corpus read_corpus_text(const std::string& text) {
  Corpus corpus = parse_bracketed(text);
  for (size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].is_leaf())
      throw TreebankError("tree " + std::to_string(i + 1) +
                          " is a bare preterminal with no internal node");
  return corpus;
}

struct TreebankStats {
  std::map<std::string, int64_t> label_counts;  // internal-node labels
  std::map<std::string, int64_t> pos_counts;    // preterminal tags
  int64_t sentences = 0;
  int64_t tokens = 0;
  double mean_length = 0.0;
  int64_t max_length = 0;
};

inline void count_nodes(const ParseTree& t, TreebankStats& s) {
  if (t.is_leaf()) {
    ++s.pos_counts[t.label];
    return;
  }
  ++s.label_counts[t.label];
  for (const ParseTree& c : t.children) count_nodes(c, s);
}

inline TreebankStats compute_stats(const Corpus& corpus) {
  TreebankStats s;
  for (const ParseTree& t : corpus) {
    count_nodes(t, s);
    int64_t len = count_leaves(t);
    ++s.sentences;
    s.tokens += len;
    s.max_length = std::max(s.max_length, len);
  }
  s.mean_length = s.sentences == 0 ? 0.0 : double(s.tokens) / double(s.sentences);
  return s;
}

/// Deterministic corpus split. Default (tail-cut) keeps order: train is the
/// first train_count trees, dev the following dev_count. Shuffled mode
/// permutes with the seed first.
inline std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, size_t train_count,
                                              size_t dev_count, uint64_t seed = 0,
                                              bool shuffled = false) {
  if (train_count + dev_count > corpus.size())
    throw CountsExceedCorpus(train_count + dev_count, corpus.size());
  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t(0));
  if (shuffled) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  Corpus train, dev;
  train.reserve(train_count);
  dev.reserve(dev_count);
  for (size_t k = 0; k < train_count; ++k) train.push_back(corpus[order[k]]);
  for (size_t k = 0; k < dev_count; ++k) dev.push_back(corpus[order[train_count + k]]);
  return {std::move(train), std::move(dev)};
}

}  // namespace cspn
