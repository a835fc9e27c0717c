#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <random>

#include "cspn/tape.hpp"
#include "testutil.hpp"

using namespace cspn;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int r, int c) {
  Matrix m(r, c);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& x : m.data) x = dist(rng);
  return m;
}

/// Finite-difference check of one op. The op's output is mixed through two
/// fixed random constant matrices so every entry sees a distinct upstream
/// gradient, then reduced to a scalar.
void check_op(const std::string& name, const std::vector<std::pair<int, int>>& shapes,
              const std::function<Var(Tape&, std::vector<Var>&)>& op, uint64_t seed) {
  ParamStore store;
  std::mt19937_64 rng(seed);
  std::vector<Parameter*> params;
  for (size_t i = 0; i < shapes.size(); ++i) {
    Parameter& p = store.create("p" + std::to_string(i), shapes[i].first, shapes[i].second);
    init_uniform(p.value, rng, -1.0, 1.0);
    params.push_back(&p);
  }
  // Probe the output shape once, then freeze the mixing matrices.
  int out_rows, out_cols;
  {
    Tape t;
    std::vector<Var> leaves;
    for (Parameter* p : params) leaves.push_back(t.leaf(*p));
    Var o = op(t, leaves);
    out_rows = t.value(o).rows;
    out_cols = t.value(o).cols;
  }
  Matrix mix_left = random_matrix(rng, 3, out_rows);
  Matrix mix_right = random_matrix(rng, out_cols, 3);

  auto loss = [&](bool accumulate) {
    Tape t;
    std::vector<Var> leaves;
    for (Parameter* p : params) leaves.push_back(t.leaf(*p));
    Var o = op(t, leaves);
    Var l = t.sum_all(t.matmul(t.matmul(t.constant(mix_left), o), t.constant(mix_right)));
    double v = t.value(l)(0, 0);
    if (accumulate) t.backward(l);
    return v;
  };
  testutil::GradCheck r = testutil::check_gradients(store, loss);
  INFO(name << ": " << r.failures << "/" << r.checked << " failures, worst " << r.worst);
  REQUIRE(r.failures == 0);
}

}  // namespace

TEST_CASE("gradient of a plain sum is all ones") {
  ParamStore store;
  Parameter& a = store.create("a", 2, 3);
  std::mt19937_64 rng(11);
  init_uniform(a.value, rng);
  Tape t;
  Var loss = t.sum_all(t.leaf(a));
  t.backward(loss);
  for (double g : a.grad.data) REQUIRE(g == 1.0);
}

TEST_CASE("gradient of sum(A*B) matches the closed form") {
  ParamStore store;
  Parameter& a = store.create("a", 2, 3);
  Parameter& b = store.create("b", 3, 4);
  std::mt19937_64 rng(12);
  init_uniform(a.value, rng, -1, 1);
  init_uniform(b.value, rng, -1, 1);
  Tape t;
  t.backward(t.sum_all(t.matmul(t.leaf(a), t.leaf(b))));
  // dA = ones(2,4) * B^T: entry (i,k) = sum_j B(k,j).
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) {
      double want = 0.0;
      for (int j = 0; j < 4; ++j) want += b.value(k, j);
      REQUIRE(a.grad(i, k) == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("backward requires a scalar") {
  ParamStore store;
  Parameter& a = store.create("a", 2, 2);
  Tape t;
  Var v = t.leaf(a);
  REQUIRE_THROWS_AS(t.backward(v), NonScalarLoss);
}

TEST_CASE("backward runs once per tape") {
  ParamStore store;
  Parameter& a = store.create("a", 1, 1);
  Tape t;
  Var l = t.sum_all(t.leaf(a));
  t.backward(l);
  REQUIRE_THROWS_AS(t.backward(l), Error);
}

TEST_CASE("relu gradient mask matches the sign pattern") {
  ParamStore store;
  Parameter& a = store.create("a", 4, 4);
  std::mt19937_64 rng(13);
  init_uniform(a.value, rng, -1, 1);
  Tape t;
  t.backward(t.sum_all(t.relu(t.leaf(a))));
  for (size_t i = 0; i < a.value.size(); ++i)
    REQUIRE(a.grad.data[i] == (a.value.data[i] > 0.0 ? 1.0 : 0.0));
}

TEST_CASE("every op passes finite-difference checks") {
  check_op("matmul", {{3, 4}, {4, 2}},
           [](Tape& t, std::vector<Var>& v) { return t.matmul(v[0], v[1]); }, 100);
  check_op("add", {{3, 3}, {3, 3}},
           [](Tape& t, std::vector<Var>& v) { return t.add(v[0], v[1]); }, 101);
  check_op("sub", {{2, 5}, {2, 5}},
           [](Tape& t, std::vector<Var>& v) { return t.sub(v[0], v[1]); }, 102);
  check_op("scale", {{4, 3}},
           [](Tape& t, std::vector<Var>& v) { return t.scale(v[0], -1.7); }, 103);
  check_op("add_scalar", {{2, 2}},
           [](Tape& t, std::vector<Var>& v) { return t.add_scalar(v[0], 2.5); }, 104);
  check_op("transpose", {{3, 5}},
           [](Tape& t, std::vector<Var>& v) { return t.transpose(v[0]); }, 105);
  check_op("concat_cols", {{3, 2}, {3, 4}},
           [](Tape& t, std::vector<Var>& v) { return t.concat_cols(v[0], v[1]); }, 106);
  check_op("concat_rows", {{2, 3}, {4, 3}},
           [](Tape& t, std::vector<Var>& v) { return t.concat_rows(v[0], v[1]); }, 107);
  check_op("slice_rows", {{6, 3}},
           [](Tape& t, std::vector<Var>& v) { return t.slice_rows(v[0], 1, 4); }, 108);
  check_op("slice_cols", {{3, 6}},
           [](Tape& t, std::vector<Var>& v) { return t.slice_cols(v[0], 2, 5); }, 109);
  check_op("add_rowvec", {{4, 3}, {1, 3}},
           [](Tape& t, std::vector<Var>& v) { return t.add_rowvec(v[0], v[1]); }, 110);
  check_op("relu", {{5, 5}},
           [](Tape& t, std::vector<Var>& v) { return t.relu(v[0]); }, 111);
  check_op("softmax_rows", {{4, 6}},
           [](Tape& t, std::vector<Var>& v) { return t.softmax_rows(v[0]); }, 112);
  check_op("layer_norm", {{4, 6}, {1, 6}, {1, 6}},
           [](Tape& t, std::vector<Var>& v) { return t.layer_norm(v[0], v[1], v[2], 1e-6); },
           113);
  check_op("span_differences", {{5, 4}},
           [](Tape& t, std::vector<Var>& v) { return t.span_differences(v[0]); }, 114);
  check_op("gather_sum", {{4, 4}},
           [](Tape& t, std::vector<Var>& v) {
             return t.gather_sum(v[0], {{0, 0}, {1, 2}, {3, 3}, {1, 2}});
           },
           115);
  check_op("composite attention block", {{4, 6}, {6, 3}, {6, 3}, {6, 4}},
           [](Tape& t, std::vector<Var>& v) {
             Var q = t.matmul(v[0], v[1]);
             Var k = t.matmul(v[0], v[2]);
             Var a = t.softmax_rows(t.scale(t.matmul(q, t.transpose(k)), 0.57));
             return t.matmul(a, t.matmul(v[0], v[3]));
           },
           116);
}

TEST_CASE("core ops pass gradient checks on random shapes up to 8x8") {
  std::mt19937_64 rng(1234);
  auto dim = [&]() { return std::uniform_int_distribution<int>(1, 8)(rng); };
  for (int trial = 0; trial < 8; ++trial) {
    int m = dim(), k = dim(), n = dim();
    uint64_t seed = 500 + uint64_t(trial);
    check_op("matmul " + std::to_string(trial), {{m, k}, {k, n}},
             [](Tape& t, std::vector<Var>& v) { return t.matmul(v[0], v[1]); }, seed);
    check_op("softmax " + std::to_string(trial), {{m, k}},
             [](Tape& t, std::vector<Var>& v) { return t.softmax_rows(v[0]); }, seed + 50);
    check_op("layer_norm " + std::to_string(trial), {{m, k}, {1, k}, {1, k}},
             [](Tape& t, std::vector<Var>& v) { return t.layer_norm(v[0], v[1], v[2], 1e-6); },
             seed + 100);
    check_op("add+relu " + std::to_string(trial), {{m, n}, {m, n}},
             [](Tape& t, std::vector<Var>& v) { return t.relu(t.add(v[0], v[1])); },
             seed + 150);
  }
}

TEST_CASE("gather_rows scatters gradients into the table") {
  ParamStore store;
  Parameter& table = store.create("table", 5, 3);
  std::mt19937_64 rng(14);
  init_uniform(table.value, rng, -1, 1);
  Matrix mix(3, 2);
  init_uniform(mix, rng, -1, 1);
  auto loss = [&](bool accumulate) {
    Tape t;
    Var g = t.gather_rows(table, {4, 1, 1, 0});
    Var l = t.sum_all(t.matmul(g, t.constant(mix)));
    double v = t.value(l)(0, 0);
    if (accumulate) t.backward(l);
    return v;
  };
  testutil::GradCheck r = testutil::check_gradients(store, loss);
  INFO(r.worst);
  REQUIRE(r.failures == 0);
  // Row 2 and 3 were never gathered.
  store.zero_grads();
  loss(true);
  for (int j = 0; j < 3; ++j) {
    REQUIRE(table.grad(2, j) == 0.0);
    REQUIRE(table.grad(3, j) == 0.0);
  }
}

TEST_CASE("cross entropy mean value and gradient") {
  ParamStore store;
  Parameter& logits = store.create("logits", 3, 4);
  std::mt19937_64 rng(15);
  init_uniform(logits.value, rng, -2, 2);
  std::vector<int> targets = {2, 0, 3};
  auto loss = [&](bool accumulate) {
    Tape t;
    Var l = t.cross_entropy_mean(t.leaf(logits), targets);
    double v = t.value(l)(0, 0);
    if (accumulate) t.backward(l);
    return v;
  };
  // Value agrees with a direct computation.
  double direct = 0.0;
  for (int i = 0; i < 3; ++i) {
    double mx = logits.value(i, 0);
    for (int j = 1; j < 4; ++j) mx = std::max(mx, logits.value(i, j));
    double lse = 0.0;
    for (int j = 0; j < 4; ++j) lse += std::exp(logits.value(i, j) - mx);
    direct += mx + std::log(lse) - logits.value(i, targets[size_t(i)]);
  }
  direct /= 3;
  REQUIRE(loss(false) == Catch::Approx(direct).margin(1e-12));
  testutil::GradCheck r = testutil::check_gradients(store, loss);
  INFO(r.worst);
  REQUIRE(r.failures == 0);
}

TEST_CASE("independent tapes accumulate into shared parameter gradients") {
  ParamStore store;
  Parameter& a = store.create("a", 2, 2);
  std::mt19937_64 rng(16);
  init_uniform(a.value, rng);
  {
    Tape t;
    t.backward(t.sum_all(t.leaf(a)));
  }
  {
    Tape t;
    t.backward(t.sum_all(t.scale(t.leaf(a), 2.0)));
  }
  for (double g : a.grad.data) REQUIRE(g == 3.0);
}
