#pragma once

#include <stdexcept>
#include <string>

namespace cspn {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric core.
struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error("shape mismatch: " + msg) {}
};
struct NonScalarLoss : Error {
  explicit NonScalarLoss(const std::string& msg) : Error("loss must be 1x1: " + msg) {}
};

// Treebank ingestion.
struct TreebankError : Error {
  using Error::Error;
};
struct UnbalancedParens : TreebankError {
  int line;
  explicit UnbalancedParens(int line_)
      : TreebankError("unbalanced parentheses at line " + std::to_string(line_)), line(line_) {}
};
struct EmptyNode : TreebankError {
  int line;
  explicit EmptyNode(int line_)
      : TreebankError("empty node at line " + std::to_string(line_)), line(line_) {}
};
struct LeafWithoutTag : TreebankError {
  int line;
  explicit LeafWithoutTag(int line_)
      : TreebankError("word without a preterminal tag at line " + std::to_string(line_)),
        line(line_) {}
};
struct SeparatorInLabel : TreebankError {
  explicit SeparatorInLabel(const std::string& label)
      : TreebankError("label contains the reserved chain separator: " + label) {}
};
struct CountsExceedCorpus : TreebankError {
  CountsExceedCorpus(size_t want, size_t have)
      : TreebankError("split counts " + std::to_string(want) + " exceed corpus size " +
                      std::to_string(have)) {}
};

// Encoder / model.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};
struct SentenceTooLong : Error {
  SentenceTooLong(size_t len, size_t max_len)
      : Error("sentence of length " + std::to_string(len) + " exceeds max_len " +
              std::to_string(max_len)) {}
};
struct ExternalShapeMismatch : Error {
  explicit ExternalShapeMismatch(const std::string& msg)
      : Error("external vectors: " + msg) {}
};

// Chart decoding.
struct SpanOutOfRange : Error {
  SpanOutOfRange(int i, int j, int n)
      : Error("span (" + std::to_string(i) + "," + std::to_string(j) +
              ") out of range for n=" + std::to_string(n)) {}
};
struct UnknownLabel : Error {
  explicit UnknownLabel(const std::string& label) : Error("unknown label: " + label) {}
};
struct EmptyLabelVocab : Error {
  EmptyLabelVocab() : Error("label vocabulary has no non-null label") {}
};
struct LengthMismatch : Error {
  explicit LengthMismatch(const std::string& msg) : Error("length mismatch: " + msg) {}
};

// Evaluation.
struct TokenMismatch : Error {
  explicit TokenMismatch(const std::string& msg) : Error("token mismatch: " + msg) {}
};

// Serialization.
struct VersionError : Error {
  explicit VersionError(const std::string& msg) : Error("bad file header: " + msg) {}
};
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("i/o error: " + msg) {}
};

// Training.
struct EmptyCorpus : Error {
  EmptyCorpus() : Error("training corpus is empty") {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& msg) : Error("training diverged: " + msg) {}
};

}  // namespace cspn
