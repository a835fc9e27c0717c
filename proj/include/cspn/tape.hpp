#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "cspn/errors.hpp"
#include "cspn/matrix.hpp"
#include "cspn/params.hpp"

namespace cspn {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode differentiation tape over Matrix values. Operations compute
/// eagerly and record a backward closure; node creation order is a topological
/// order, so the backward sweep visits each node exactly once in reverse.
/// Leaves created from a Parameter flush their accumulated gradient into
/// Parameter::grad at the end of backward(), which lets independent tapes
/// (one per sentence) accumulate into a shared gradient buffer.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // -- node constructors ----------------------------------------------------

  /// Value with no gradient tracking.
  Var constant(Matrix m) { return push("const", std::move(m), {}, nullptr); }

  /// Copy of a parameter's value; gradient flows back into p.grad.
  Var leaf(Parameter& p) {
    Var v = push("leaf", p.value, {}, nullptr);
    nodes_[v.id].back = [this, id = v.id, pp = &p]() {
      Matrix& g = nodes_[id].grad;
      for (size_t i = 0; i < g.size(); ++i) pp->grad.data[i] += g.data[i];
    };
    return v;
  }

  /// Selected rows of a parameter table (embedding lookup). Gradients scatter
  /// back into the table without materializing it on the tape.
  Var gather_rows(Parameter& table, std::vector<int> rows) {
    const Matrix& t = table.value;
    Matrix out(int(rows.size()), t.cols);
    for (size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] < 0 || rows[r] >= t.rows)
        throw ShapeMismatch("gather_rows: row " + std::to_string(rows[r]) + " of " +
                            t.shape_str());
      for (int j = 0; j < t.cols; ++j) out(int(r), j) = t(int(rows[r]), j);
    }
    Var v = push("gather", std::move(out), {}, nullptr);
    nodes_[v.id].back = [this, id = v.id, pp = &table, rows = std::move(rows)]() {
      const Matrix& g = nodes_[id].grad;
      for (size_t r = 0; r < rows.size(); ++r)
        for (int j = 0; j < g.cols; ++j) pp->grad(rows[r], j) += g(int(r), j);
    };
    return v;
  }

  // -- arithmetic -----------------------------------------------------------

  Var matmul(Var a, Var b) {
    Var c = push("matmul", cspn::matmul(value(a), value(b)), {a, b}, nullptr);
    nodes_[c.id].back = [this, a, b, c]() {
      const Matrix& g = nodes_[c.id].grad;
      accumulate(a, cspn::matmul(g, cspn::transpose(value(b))));
      accumulate(b, cspn::matmul(cspn::transpose(value(a)), g));
    };
    return c;
  }

  Var add(Var a, Var b) {
    Var c = push("add", cspn::add(value(a), value(b)), {a, b}, nullptr);
    nodes_[c.id].back = [this, a, b, c]() {
      accumulate(a, nodes_[c.id].grad);
      accumulate(b, nodes_[c.id].grad);
    };
    return c;
  }

  Var sub(Var a, Var b) {
    Var c = push("sub", cspn::sub(value(a), value(b)), {a, b}, nullptr);
    nodes_[c.id].back = [this, a, b, c]() {
      accumulate(a, nodes_[c.id].grad);
      accumulate(b, cspn::scale(nodes_[c.id].grad, -1.0));
    };
    return c;
  }

  Var scale(Var a, double s) {
    Var c = push("scale", cspn::scale(value(a), s), {a}, nullptr);
    nodes_[c.id].back = [this, a, c, s]() { accumulate(a, cspn::scale(nodes_[c.id].grad, s)); };
    return c;
  }

  /// Adds a constant to every entry.
  Var add_scalar(Var a, double s) {
    Matrix m = value(a);
    for (double& x : m.data) x += s;
    Var c = push("add_scalar", std::move(m), {a}, nullptr);
    nodes_[c.id].back = [this, a, c]() { accumulate(a, nodes_[c.id].grad); };
    return c;
  }

  Var transpose(Var a) {
    Var c = push("transpose", cspn::transpose(value(a)), {a}, nullptr);
    nodes_[c.id].back = [this, a, c]() {
      accumulate(a, cspn::transpose(nodes_[c.id].grad));
    };
    return c;
  }

  Var concat_cols(Var a, Var b) {
    Var c = push("concat_cols", cspn::concat_cols(value(a), value(b)), {a, b}, nullptr);
    nodes_[c.id].back = [this, a, b, c]() {
      const Matrix& g = nodes_[c.id].grad;
      int ac = value(a).cols;
      accumulate(a, cspn::slice_cols(g, 0, ac));
      accumulate(b, cspn::slice_cols(g, ac, g.cols));
    };
    return c;
  }

  Var concat_rows(Var a, Var b) {
    Var c = push("concat_rows", cspn::concat_rows(value(a), value(b)), {a, b}, nullptr);
    nodes_[c.id].back = [this, a, b, c]() {
      const Matrix& g = nodes_[c.id].grad;
      int ar = value(a).rows;
      accumulate(a, cspn::slice_rows(g, 0, ar));
      accumulate(b, cspn::slice_rows(g, ar, g.rows));
    };
    return c;
  }

  Var slice_rows(Var a, int r0, int r1) {
    Var c = push("slice_rows", cspn::slice_rows(value(a), r0, r1), {a}, nullptr);
    nodes_[c.id].back = [this, a, c, r0]() {
      const Matrix& g = nodes_[c.id].grad;
      Matrix& ag = nodes_[a.id].grad;
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ag(r0 + i, j) += g(i, j);
    };
    return c;
  }

  Var slice_cols(Var a, int c0, int c1) {
    Var c = push("slice_cols", cspn::slice_cols(value(a), c0, c1), {a}, nullptr);
    nodes_[c.id].back = [this, a, c, c0]() {
      const Matrix& g = nodes_[c.id].grad;
      Matrix& ag = nodes_[a.id].grad;
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ag(i, c0 + j) += g(i, j);
    };
    return c;
  }

  Var add_rowvec(Var a, Var bias) {
    Var c = push("add_rowvec", cspn::add_rowvec(value(a), value(bias)), {a, bias}, nullptr);
    nodes_[c.id].back = [this, a, bias, c]() {
      const Matrix& g = nodes_[c.id].grad;
      accumulate(a, g);
      Matrix bg(1, g.cols);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) bg(0, j) += g(i, j);
      accumulate(bias, bg);
    };
    return c;
  }

  /// Elementwise max(0, x); subgradient at 0 is 0.
  Var relu(Var a) {
    Var c = push("relu", cspn::relu(value(a)), {a}, nullptr);
    nodes_[c.id].back = [this, a, c]() {
      const Matrix& g = nodes_[c.id].grad;
      const Matrix& x = value(a);
      Matrix ag(g.rows, g.cols);
      for (size_t i = 0; i < g.size(); ++i) ag.data[i] = x.data[i] > 0.0 ? g.data[i] : 0.0;
      accumulate(a, ag);
    };
    return c;
  }

  Var softmax_rows(Var a) {
    Var c = push("softmax_rows", cspn::softmax_rows(value(a)), {a}, nullptr);
    nodes_[c.id].back = [this, a, c]() {
      const Matrix& g = nodes_[c.id].grad;
      const Matrix& y = value(c);
      Matrix ag(g.rows, g.cols);
      for (int i = 0; i < g.rows; ++i) {
        double dot = 0.0;
        for (int j = 0; j < g.cols; ++j) dot += g(i, j) * y(i, j);
        for (int j = 0; j < g.cols; ++j) ag(i, j) = y(i, j) * (g(i, j) - dot);
      }
      accumulate(a, ag);
    };
    return c;
  }

  /// Per-row layer normalization with 1 x d gain and bias parameters.
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6) {
    Var c = push("layer_norm", cspn::layer_norm(value(x), value(gain), value(bias), eps),
                 {x, gain, bias}, nullptr);
    nodes_[c.id].back = [this, x, gain, bias, c, eps]() {
      const Matrix& g = nodes_[c.id].grad;
      const Matrix& xv = value(x);
      const Matrix& gv = value(gain);
      const int d = xv.cols;
      Matrix xg(xv.rows, d);
      Matrix gaing(1, d);
      Matrix biasg(1, d);
      for (int i = 0; i < xv.rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xv(i, j);
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
          double cdev = xv(i, j) - mean;
          var += cdev * cdev;
        }
        var /= d;
        double inv_sigma = 1.0 / std::sqrt(var + eps);
        // dxhat, and the two row means needed for dx.
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
          double xhat = (xv(i, j) - mean) * inv_sigma;
          double dxhat = g(i, j) * gv(0, j);
          mean_dxhat += dxhat;
          mean_dxhat_xhat += dxhat * xhat;
          gaing(0, j) += g(i, j) * xhat;
          biasg(0, j) += g(i, j);
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        for (int j = 0; j < d; ++j) {
          double xhat = (xv(i, j) - mean) * inv_sigma;
          double dxhat = g(i, j) * gv(0, j);
          xg(i, j) = inv_sigma * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
      }
      accumulate(x, xg);
      accumulate(gain, gaing);
      accumulate(bias, biasg);
    };
    return c;
  }

  /// All pairwise row differences of an (n+1) x d fencepost matrix: output row
  /// index(i,j) = F[j] - F[i] for 0 <= i < j <= n, ordered by i then j.
  Var span_differences(Var f) {
    const Matrix& fv = value(f);
    const int n = fv.rows - 1;
    Matrix out(n * (n + 1) / 2, fv.cols);
    int r = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j <= n; ++j, ++r)
        for (int c = 0; c < fv.cols; ++c) out(r, c) = fv(j, c) - fv(i, c);
    Var v = push("span_diff", std::move(out), {f}, nullptr);
    nodes_[v.id].back = [this, f, v, n]() {
      const Matrix& g = nodes_[v.id].grad;
      Matrix& fg = nodes_[f.id].grad;
      int r = 0;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j <= n; ++j, ++r)
          for (int c = 0; c < g.cols; ++c) {
            fg(j, c) += g(r, c);
            fg(i, c) -= g(r, c);
          }
    };
    return v;
  }

  /// Sum of selected entries, as a 1x1 scalar. Duplicate cells accumulate.
  Var gather_sum(Var m, std::vector<std::pair<int, int>> cells) {
    const Matrix& mv = value(m);
    double s = 0.0;
    for (auto [r, c] : cells) {
      if (r < 0 || r >= mv.rows || c < 0 || c >= mv.cols)
        throw ShapeMismatch("gather_sum cell (" + std::to_string(r) + "," +
                            std::to_string(c) + ") of " + mv.shape_str());
      s += mv(r, c);
    }
    Var v = push("gather_sum", Matrix::scalar(s), {m}, nullptr);
    nodes_[v.id].back = [this, m, v, cells = std::move(cells)]() {
      double g = nodes_[v.id].grad(0, 0);
      Matrix& mg = nodes_[m.id].grad;
      for (auto [r, c] : cells) mg(r, c) += g;
    };
    return v;
  }

  /// Mean per-row cross-entropy of logits against integer targets, as 1x1.
  Var cross_entropy_mean(Var logits, std::vector<int> targets) {
    const Matrix& lv = value(logits);
    if (int(targets.size()) != lv.rows)
      throw ShapeMismatch("cross_entropy_mean: " + std::to_string(targets.size()) +
                          " targets for " + lv.shape_str());
    double loss = 0.0;
    for (int i = 0; i < lv.rows; ++i) {
      double mx = lv(i, 0);
      for (int j = 1; j < lv.cols; ++j) mx = std::max(mx, lv(i, j));
      double lse = 0.0;
      for (int j = 0; j < lv.cols; ++j) lse += std::exp(lv(i, j) - mx);
      lse = mx + std::log(lse);
      loss += lse - lv(i, targets[size_t(i)]);
    }
    loss /= lv.rows;
    Var v = push("xent", Matrix::scalar(loss), {logits}, nullptr);
    nodes_[v.id].back = [this, logits, v, targets = std::move(targets)]() {
      double g = nodes_[v.id].grad(0, 0);
      const Matrix& lv2 = value(logits);
      Matrix p = cspn::softmax_rows(lv2);
      Matrix lg(lv2.rows, lv2.cols);
      for (int i = 0; i < lv2.rows; ++i)
        for (int j = 0; j < lv2.cols; ++j)
          lg(i, j) = (p(i, j) - (j == targets[size_t(i)] ? 1.0 : 0.0)) * g / lv2.rows;
      accumulate(logits, lg);
    };
    return v;
  }

  /// Sum of all entries as 1x1.
  Var sum_all(Var a) {
    const Matrix& av = value(a);
    double s = 0.0;
    for (double x : av.data) s += x;
    Var v = push("sum", Matrix::scalar(s), {a}, nullptr);
    nodes_[v.id].back = [this, a, v]() {
      double g = nodes_[v.id].grad(0, 0);
      Matrix& ag = nodes_[a.id].grad;
      for (double& x : ag.data) x += g;
    };
    return v;
  }

  // -- access and backward --------------------------------------------------

  const Matrix& value(Var v) const { return nodes_[size_t(v.id)].value; }
  const Matrix& grad(Var v) const { return nodes_[size_t(v.id)].grad; }
  size_t num_nodes() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Each node is visited once; parameter
  /// leaves flush into Parameter::grad.
  void backward(Var loss) {
    if (ran_backward_) throw Error("backward already ran on this tape");
    const Matrix& lv = value(loss);
    if (lv.rows != 1 || lv.cols != 1) throw NonScalarLoss(lv.shape_str());
    ran_backward_ = true;
    nodes_[size_t(loss.id)].grad(0, 0) = 1.0;
    for (int id = loss.id; id >= 0; --id)
      if (nodes_[size_t(id)].back) nodes_[size_t(id)].back();
  }

 private:
  struct Node {
    const char* op;
    Matrix value;
    Matrix grad;
    std::vector<int> parents;
    std::function<void()> back;
  };

  Var push(const char* op, Matrix value, std::initializer_list<Var> parents,
           std::function<void()> back) {
    Node n;
    n.op = op;
    n.grad = Matrix(value.rows, value.cols);
    n.value = std::move(value);
    for (Var p : parents) n.parents.push_back(p.id);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  void accumulate(Var v, const Matrix& g) {
    Matrix& dst = nodes_[size_t(v.id)].grad;
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += g.data[i];
  }

  // Deque keeps value/grad references stable while later nodes are pushed.
  std::deque<Node> nodes_;
  bool ran_backward_ = false;
};

}  // namespace cspn
