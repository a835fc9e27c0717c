#pragma once

#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cspn/errors.hpp"
#include "cspn/matrix.hpp"
#include "cspn/model.hpp"
#include "cspn/training.hpp"

namespace cspn {

/// All tunables reachable from the config file and the command line. Flags
/// win over file values; unknown file keys are errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig training;
  int threads = 0;  // 0 = machine parallelism
  std::string chain_separator = kChainSeparator;
};

namespace detail {

struct ConfigKey {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + " wants an integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + " wants a number, got '" + v + "'");
  }
}

inline const std::vector<ConfigKey>& config_keys() {
  auto int_key = [](const char* name, auto member) {
    return ConfigKey{
        name,
        [member](const RunConfig& c) { return std::to_string(c.*member); },
        [member, name](RunConfig& c, const std::string& v) { c.*member = parse_int(name, v); }};
  };
  (void)int_key;
  static const std::vector<ConfigKey> keys = {
      {"d_model", [](const RunConfig& c) { return std::to_string(c.model.encoder.d_model); },
       [](RunConfig& c, const std::string& v) { c.model.encoder.d_model = parse_int("d_model", v); }},
      {"d_k", [](const RunConfig& c) { return std::to_string(c.model.encoder.d_k); },
       [](RunConfig& c, const std::string& v) { c.model.encoder.d_k = parse_int("d_k", v); }},
      {"d_v", [](const RunConfig& c) { return std::to_string(c.model.encoder.d_v); },
       [](RunConfig& c, const std::string& v) { c.model.encoder.d_v = parse_int("d_v", v); }},
      {"num_heads", [](const RunConfig& c) { return std::to_string(c.model.encoder.num_heads); },
       [](RunConfig& c, const std::string& v) { c.model.encoder.num_heads = parse_int("num_heads", v); }},
      {"num_layers", [](const RunConfig& c) { return std::to_string(c.model.encoder.num_layers); },
       [](RunConfig& c, const std::string& v) { c.model.encoder.num_layers = parse_int("num_layers", v); }},
      {"d_ff", [](const RunConfig& c) { return std::to_string(c.model.encoder.d_ff); },
       [](RunConfig& c, const std::string& v) { c.model.encoder.d_ff = parse_int("d_ff", v); }},
      {"max_len", [](const RunConfig& c) { return std::to_string(c.model.encoder.max_len); },
       [](RunConfig& c, const std::string& v) { c.model.encoder.max_len = parse_int("max_len", v); }},
      {"d_hidden", [](const RunConfig& c) { return std::to_string(c.model.d_hidden); },
       [](RunConfig& c, const std::string& v) { c.model.d_hidden = parse_int("d_hidden", v); }},
      {"max_epochs", [](const RunConfig& c) { return std::to_string(c.training.max_epochs); },
       [](RunConfig& c, const std::string& v) { c.training.max_epochs = parse_int("max_epochs", v); }},
      {"batch_size", [](const RunConfig& c) { return std::to_string(c.training.batch_size); },
       [](RunConfig& c, const std::string& v) { c.training.batch_size = parse_int("batch_size", v); }},
      {"sub_batch_max_tokens",
       [](const RunConfig& c) { return std::to_string(c.training.sub_batch_max_tokens); },
       [](RunConfig& c, const std::string& v) {
         c.training.sub_batch_max_tokens = parse_int("sub_batch_max_tokens", v);
       }},
      {"learning_rate",
       [](const RunConfig& c) {
         std::ostringstream os;
         os << c.training.learning_rate;
         return os.str();
       },
       [](RunConfig& c, const std::string& v) {
         c.training.learning_rate = parse_double("learning_rate", v);
       }},
      {"pos_loss_weight",
       [](const RunConfig& c) {
         std::ostringstream os;
         os << c.training.pos_loss_weight;
         return os.str();
       },
       [](RunConfig& c, const std::string& v) {
         c.training.pos_loss_weight = parse_double("pos_loss_weight", v);
       }},
      {"seed", [](const RunConfig& c) { return std::to_string(c.training.seed); },
       [](RunConfig& c, const std::string& v) {
         c.training.seed = uint64_t(parse_int("seed", v));
       }},
      {"patience", [](const RunConfig& c) { return std::to_string(c.training.patience); },
       [](RunConfig& c, const std::string& v) { c.training.patience = parse_int("patience", v); }},
      {"threads", [](const RunConfig& c) { return std::to_string(c.threads); },
       [](RunConfig& c, const std::string& v) { c.threads = parse_int("threads", v); }},
  };
  return keys;
}

}  // namespace detail

/// Applies `key = value` lines (with # comments) to a RunConfig.
inline void apply_config_text(const std::string& text, RunConfig& cfg) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    size_t eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + " is not 'key = value'");
    std::string key = trim(trimmed.substr(0, eq));
    std::string value = trim(trimmed.substr(eq + 1));
    bool found = false;
    for (const auto& k : detail::config_keys()) {
      if (key == k.name) {
        k.set(cfg, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("unknown key '" + key + "' at line " + std::to_string(line_no));
  }
}

inline void apply_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  apply_config_text(buf.str(), cfg);
}

/// Every key with its default, in config-file syntax.
inline std::string dump_default_config() {
  RunConfig defaults;
  std::string out;
  for (const auto& k : detail::config_keys()) out += std::string(k.name) + " = " + k.get(defaults) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// External context-vector files: per sentence a "n d" header line, then n
// lines of d floats. Sentence order matches the treebank file.
// ---------------------------------------------------------------------------

inline std::vector<Matrix> read_external_vectors(std::istream& is, const std::string& what) {
  std::vector<Matrix> out;
  int d_common = -1;
  std::string line;
  size_t line_no = 0;
  auto next_content_line = [&](std::string& into) {
    while (std::getline(is, line)) {
      ++line_no;
      bool blank = true;
      for (char c : line)
        if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
      if (!blank) {
        into = line;
        return true;
      }
    }
    return false;
  };
  std::string header;
  while (next_content_line(header)) {
    std::istringstream hs(header);
    int n = 0, d = 0;
    if (!(hs >> n >> d) || n <= 0 || d <= 0)
      throw ExternalShapeMismatch(what + ": bad block header at line " + std::to_string(line_no));
    if (d_common == -1) d_common = d;
    if (d != d_common)
      throw ExternalShapeMismatch(what + ": width changes from " + std::to_string(d_common) +
                                  " to " + std::to_string(d) + " at line " +
                                  std::to_string(line_no));
    Matrix m(n, d);
    for (int r = 0; r < n; ++r) {
      std::string row;
      if (!next_content_line(row))
        throw ExternalShapeMismatch(what + ": truncated block near line " +
                                    std::to_string(line_no));
      std::istringstream rs(row);
      for (int c = 0; c < d; ++c)
        if (!(rs >> m(r, c)))
          throw ExternalShapeMismatch(what + ": bad float at line " + std::to_string(line_no));
      double extra;
      if (rs >> extra)
        throw ExternalShapeMismatch(what + ": too many values at line " + std::to_string(line_no));
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<Matrix> read_external_vectors_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read vectors file " + path);
  return read_external_vectors(is, path);
}

/// Checks one vectors-per-sentence alignment against a corpus.
inline void check_vectors_alignment(const std::vector<Matrix>& vecs, const Corpus& corpus,
                                    const std::string& what) {
  if (vecs.size() != corpus.size())
    throw ExternalShapeMismatch(what + ": " + std::to_string(vecs.size()) + " blocks for " +
                                std::to_string(corpus.size()) + " sentences");
  for (size_t i = 0; i < vecs.size(); ++i)
    if (vecs[i].rows != count_leaves(corpus[i]))
      throw ExternalShapeMismatch(what + ": block " + std::to_string(i + 1) + " has " +
                                  std::to_string(vecs[i].rows) + " rows for a " +
                                  std::to_string(count_leaves(corpus[i])) + "-word sentence");
}

}  // namespace cspn
