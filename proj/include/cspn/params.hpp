#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cspn/errors.hpp"
#include "cspn/matrix.hpp"

namespace cspn {

/// A named trainable matrix with its gradient accumulator and optimizer slots.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;

  Parameter(std::string n, int rows, int cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}
};

/// Owns all parameters of a model in creation order. Creation order is the
/// serialization order, so save/load round-trips preserve it.
class ParamStore {
 public:
  Parameter& create(const std::string& name, int rows, int cols) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter>(name, rows, cols));
    Parameter* p = params_.back().get();
    by_name_[name] = p;
    return *p;
  }

  Parameter* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  Parameter& at(const std::string& name) const {
    Parameter* p = find(name);
    if (!p) throw ConfigError("no such parameter: " + name);
    return *p;
  }

  size_t size() const { return params_.size(); }
  Parameter& operator[](size_t i) { return *params_[i]; }
  const Parameter& operator[](size_t i) const { return *params_[i]; }

  void zero_grads() {
    for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

// ---------------------------------------------------------------------------
// Flat binary parameter container. Layout: magic "CSPN1", then for each
// parameter: u32 name length, name bytes, u32 rows, u32 cols, row-major
// f64 values. All integers and floats little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("truncated u32");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

inline void write_f64_le(std::ostream& os, double x) {
  uint64_t v = std::bit_cast<uint64_t>(x);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("truncated f64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline constexpr char kParamMagic[] = "CSPN1";

inline void save_params(std::ostream& os, const ParamStore& store) {
  os.write(kParamMagic, 5);
  for (size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    detail::write_u32_le(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    detail::write_u32_le(os, static_cast<uint32_t>(p.value.rows));
    detail::write_u32_le(os, static_cast<uint32_t>(p.value.cols));
    for (double x : p.value.data) detail::write_f64_le(os, x);
  }
  if (!os) throw IoError("writing parameter container failed");
}

/// Reads parameters until end of stream, returning how many were read. With
/// allow_create, names absent from the store are created; otherwise they are
/// an error. Existing parameters must match shape.
inline size_t load_params(std::istream& is, ParamStore& store, bool allow_create = true) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::string(magic, 5) != kParamMagic)
    throw VersionError("expected parameter container magic CSPN1");
  size_t count = 0;
  while (true) {
    is.peek();
    if (is.eof()) break;
    uint32_t name_len = detail::read_u32_le(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("truncated parameter name");
    uint32_t rows = detail::read_u32_le(is);
    uint32_t cols = detail::read_u32_le(is);
    Parameter* p = store.find(name);
    if (!p) {
      if (!allow_create) throw VersionError("container holds unknown parameter " + name);
      p = &store.create(name, int(rows), int(cols));
    }
    if (p->value.rows != int(rows) || p->value.cols != int(cols))
      throw ShapeMismatch("parameter " + name + " stored as " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " but declared " + p->value.shape_str());
    for (double& x : p->value.data) x = detail::read_f64_le(is);
    ++count;
  }
  return count;
}

/// load_params over an already-declared store: unknown names are an error.
inline size_t load_params_strict(std::istream& is, ParamStore& store) {
  return load_params(is, store, false);
}

// ---------------------------------------------------------------------------
// Seeded initializers.
// ---------------------------------------------------------------------------

inline void init_uniform(Matrix& m, std::mt19937_64& rng, double lo = -0.1, double hi = 0.1) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& x : m.data) x = dist(rng);
}

/// Glorot-style scaled uniform for projection matrices.
inline void init_glorot(Matrix& m, std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / (m.rows + m.cols));
  init_uniform(m, rng, -bound, bound);
}

inline void init_const(Matrix& m, double v) { std::fill(m.data.begin(), m.data.end(), v); }

}  // namespace cspn
