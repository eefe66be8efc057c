#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// Every value is a 2-D Tensor (a scalar is 1x1, a vector is 1xn). Operations
// are recorded on a Tape; Tape::backward walks the recorded nodes in reverse
// and accumulates gradients into the Parameters that fed the graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adsnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(Shape s) {
  return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, values_(rows * cols, fill) {
    check_dims();
  }

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
      : shape_{rows, cols}, values_(std::move(values)) {
    check_dims();
    if (values_.size() != shape_.size()) {
      throw Error("tensor: " + std::to_string(values_.size()) +
                  " values do not fill shape " + to_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(1, 1, std::vector<double>{v}); }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(1, n, std::move(values));
  }

  Shape shape() const { return shape_; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_.cols + c]; }

  std::span<double> row_span(std::size_t r) {
    return {values_.data() + r * shape_.cols, shape_.cols};
  }
  std::span<const double> row_span(std::size_t r) const {
    return {values_.data() + r * shape_.cols, shape_.cols};
  }

  std::vector<double>& data() { return values_; }
  const std::vector<double>& data() const { return values_; }

  double item() const {
    if (size() != 1) throw Error("tensor: item() on shape " + to_string(shape_));
    return values_[0];
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    if (other.shape_ != shape_) {
      throw Error("tensor: += shape mismatch " + to_string(shape_) + " vs " +
                  to_string(other.shape_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  bool operator==(const Tensor&) const = default;

 private:
  void check_dims() const {
    if (shape_.rows == 0 || shape_.cols == 0) {
      throw Error("tensor: dimensions must be positive, got " + to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> values_;
};

inline Tensor uniform_tensor(std::size_t rows, std::size_t cols, double lo, double hi,
                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

/// A learnable tensor. Dense parameters accumulate into `grad`; sparse ones
/// (embedding tables) accumulate only the rows a batch touched into
/// `row_grads` and leave `grad` empty.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool sparse = false;
  std::map<std::size_t, std::vector<double>> row_grads;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool is_sparse = false)
      : name(std::move(n)), value(std::move(v)), sparse(is_sparse) {
    if (!sparse) grad = Tensor(value.rows(), value.cols());
  }

  void zero_grad() {
    if (sparse) {
      row_grads.clear();
    } else {
      grad.fill(0.0);
    }
  }

  /// Gradient materialized with the parameter's shape, whichever storage is used.
  Tensor dense_grad() const {
    if (!sparse) return grad;
    Tensor g(value.rows(), value.cols());
    for (const auto& [r, row] : row_grads) {
      std::copy(row.begin(), row.end(), g.row_span(r).begin());
    }
    return g;
  }
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  Shape shape() const { return value().shape(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor v) {
    nodes_.push_back(Node{std::move(v), {}, false, false, {}});
    return {this, nodes_.size() - 1};
  }

  Var parameter(Parameter& p) {
    if (p.sparse) throw Error("tape: sparse parameter '" + p.name + "' must be read via gather_rows");
    Parameter* target = &p;
    return record(p.value, {}, [target](Tape& t, std::size_t self) { target->grad += t.grad(self); },
                  true);
  }

  /// Appends a node. `requires_grad` defaults to "any input requires it".
  Var record(Tensor value, const std::vector<std::size_t>& inputs, Backward backward,
             std::optional<bool> requires_grad = std::nullopt) {
    bool needs = false;
    for (auto in : inputs) {
      if (in >= nodes_.size()) throw Error("tape: input node out of order");
      needs = needs || nodes_[in].requires_grad;
    }
    if (requires_grad) needs = *requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{}});
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
      n.grad = Tensor(n.value.rows(), n.value.cols());
      n.grad_live = true;
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Accumulates d(loss)/d(parameter) into every reachable Parameter and
  /// consumes the tape.
  void backward(Var loss) {
    if (loss.tape != this) throw Error("backward: loss recorded on a different tape");
    if (value(loss.id).size() != 1) {
      throw Error("backward: loss must be scalar, got " + to_string(value(loss.id).shape()));
    }
    grad(loss.id).fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad_live && n.backward) n.backward(*this, i);
    }
    nodes_.clear();
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_live = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline void require_same_tape(const char* op, Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw Error(std::string(op) + ": operands on different tapes");
}

[[noreturn]] inline void shape_error(const char* op, Shape a, Shape b) {
  throw Error(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x k] += G[m x n] * B^T   where B is [k x n]
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_nn(g, bt.data(), c, m, n, k);
}

// C[k x n] += A^T * G   where A is [m x k], G is [m x n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

template <class F, class DF>
Var unary(const char*, Var x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out.data()[i] = f(xv.data()[i]);
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, df](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& in = t.value(xi);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i] * df(in.data()[i], y.data()[i]);
  });
}

}  // namespace detail

inline Var detach(Var x) { return x.tape->constant(x.value()); }

inline Var matmul(Var a, Var b) {
  detail::require_same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) detail::shape_error("matmul", av.shape(), bv.shape());
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(m, n);
  detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [ai, bi, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ai)) {
      detail::gemm_nt(g.data().data(), t.value(bi).data().data(), t.grad(ai).data().data(), m, n, k);
    }
    if (t.requires_grad(bi)) {
      detail::gemm_tn(t.value(ai).data().data(), g.data().data(), t.grad(bi).data().data(), m, k, n);
    }
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape("add", a, b);
  if (a.shape() != b.shape()) detail::shape_error("add", a.shape(), b.shape());
  Tensor out = a.value();
  out += b.value();
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(bi)) t.grad(bi) += g;
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape("sub", a, b);
  if (a.shape() != b.shape()) detail::shape_error("sub", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.value().data()[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] -= g.data()[i];
    }
  });
}

/// x[m x n] + bias[1 x n], bias broadcast over rows.
inline Var add_row(Var x, Var bias) {
  detail::require_same_tape("add_row", x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) detail::shape_error("add_row", xv.shape(), bv.shape());
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv.data()[c];
  }
  const std::size_t xi = x.id, bi = bias.id;
  return x.tape->record(std::move(out), {xi, bi}, [xi, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(xi)) t.grad(xi) += g;
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row_span(r);
        for (std::size_t c = 0; c < row.size(); ++c) gb.data()[c] += row[c];
      }
    }
  });
}

/// Elementwise product of equal-shape operands.
inline Var mul(Var a, Var b) {
  detail::require_same_tape("mul", a, b);
  if (a.shape() != b.shape()) detail::shape_error("mul", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad(ai);
      const Tensor& bv = t.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * bv.data()[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      const Tensor& av = t.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * av.data()[i];
    }
  });
}

/// x[m x n] scaled row-wise by col[m x 1].
inline Var mul_col(Var x, Var col) {
  detail::require_same_tape("mul_col", x, col);
  const Tensor& xv = x.value();
  const Tensor& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != xv.rows()) detail::shape_error("mul_col", xv.shape(), cv.shape());
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (auto& v : out.row_span(r)) v *= cv.data()[r];
  }
  const std::size_t xi = x.id, ci = col.id;
  return x.tape->record(std::move(out), {xi, ci}, [xi, ci](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(xi)) {
      Tensor& gx = t.grad(xi);
      const Tensor& c = t.value(ci);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto gr = g.row_span(r);
        auto out_row = gx.row_span(r);
        for (std::size_t k = 0; k < gr.size(); ++k) out_row[k] += gr[k] * c.data()[r];
      }
    }
    if (t.requires_grad(ci)) {
      Tensor& gc = t.grad(ci);
      const Tensor& xv2 = t.value(xi);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto gr = g.row_span(r);
        auto xr = xv2.row_span(r);
        double acc = 0.0;
        for (std::size_t k = 0; k < gr.size(); ++k) acc += gr[k] * xr[k];
        gc.data()[r] += acc;
      }
    }
  });
}

/// x[m x n] scaled column-wise by row[1 x n].
inline Var mul_row(Var x, Var row) {
  detail::require_same_tape("mul_row", x, row);
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) detail::shape_error("mul_row", xv.shape(), rv.shape());
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row_span(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] *= rv.data()[c];
  }
  const std::size_t xi = x.id, ri = row.id;
  return x.tape->record(std::move(out), {xi, ri}, [xi, ri](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& rw = t.value(ri);
    const Tensor& xw = t.value(xi);
    const bool gx_on = t.requires_grad(xi), gr_on = t.requires_grad(ri);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto gr = g.row_span(r);
      for (std::size_t c = 0; c < gr.size(); ++c) {
        if (gx_on) t.grad(xi)(r, c) += gr[c] * rw.data()[c];
        if (gr_on) t.grad(ri).data()[c] += gr[c] * xw(r, c);
      }
    }
  });
}

inline Var scale(Var x, double s) {
  return detail::unary("scale", x, [s](double v) { return s * v; },
                       [s](double, double) { return s; });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat: no inputs");
  const std::size_t rows = parts.front().shape().rows;
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::require_same_tape("concat", parts.front(), p);
    if (p.shape().rows != rows) detail::shape_error("concat", parts.front().shape(), p.shape());
    cols += p.shape().cols;
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(v.row_span(r).begin(), v.row_span(r).end(), out.row_span(r).begin() + offset);
    }
    offset += v.cols();
  }
  return parts.front().tape->record(std::move(out), ids, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t w = t.value(id).cols();
      if (t.requires_grad(id)) {
        Tensor& gi = t.grad(id);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto src = g.row_span(r).subspan(off, w);
          auto dst = gi.row_span(r);
          for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
        }
      }
      off += w;
    }
  });
}

/// Column j of x as an [m x 1] tensor.
inline Var column(Var x, std::size_t j) {
  const Tensor& xv = x.value();
  if (j >= xv.cols()) throw Error("column: index " + std::to_string(j) + " out of " + to_string(xv.shape()));
  Tensor out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) out.data()[r] = xv(r, j);
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, j](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t r = 0; r < g.rows(); ++r) gx(r, j) += g.data()[r];
  });
}

/// Entries of x at the given flat row-major indices, as a [1 x n] row.
inline Var pick(Var x, std::vector<std::size_t> flat) {
  const Tensor& xv = x.value();
  if (flat.empty()) throw Error("pick: no indices");
  Tensor out(1, flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (flat[i] >= xv.size()) throw Error("pick: index out of range for " + to_string(xv.shape()));
    out.data()[i] = xv.data()[flat[i]];
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, flat = std::move(flat)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < flat.size(); ++i) gx.data()[flat[i]] += g.data()[i];
  });
}

/// Rowwise inner product of equal-shape operands, [m x 1].
inline Var row_dot(Var a, Var b) {
  detail::require_same_tape("row_dot", a, b);
  if (a.shape() != b.shape()) detail::shape_error("row_dot", a.shape(), b.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double acc = 0.0;
    auto ar = av.row_span(r);
    auto br = bv.row_span(r);
    for (std::size_t c = 0; c < ar.size(); ++c) acc += ar[c] * br[c];
    out.data()[r] = acc;
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av2 = t.value(ai);
    const Tensor& bv2 = t.value(bi);
    const bool ga_on = t.requires_grad(ai), gb_on = t.requires_grad(bi);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double gr = g.data()[r];
      for (std::size_t c = 0; c < av2.cols(); ++c) {
        if (ga_on) t.grad(ai)(r, c) += gr * bv2(r, c);
        if (gb_on) t.grad(bi)(r, c) += gr * av2(r, c);
      }
    }
  });
}

// Derivative at exactly 0 is taken as 0.
inline Var relu(Var x) {
  return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
  return detail::unary("sigmoid", x, [](double v) { return sigmoid(v); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

inline Var reciprocal(Var x) {
  for (double v : x.value().data()) {
    if (v == 0.0) throw Error("reciprocal: zero input");
  }
  return detail::unary("reciprocal", x, [](double v) { return 1.0 / v; },
                       [](double, double y) { return -y * y; });
}

inline Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row_span(r);
    auto o = out.row_span(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) z += (o[c] = std::exp(in[c] - mx));
    for (auto& v : o) v /= z;
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto gr = g.row_span(r);
      auto yr = y.row_span(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < gr.size(); ++c) dot += gr[c] * yr[c];
      auto out_row = gx.row_span(r);
      for (std::size_t c = 0; c < gr.size(); ++c) out_row[c] += yr[c] * (gr[c] - dot);
    }
  });
}

/// Row sums, [m x 1].
inline Var sum_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double acc = 0.0;
    for (double v : xv.row_span(r)) acc += v;
    out.data()[r] = acc;
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t r = 0; r < gx.rows(); ++r) {
      for (auto& v : gx.row_span(r)) v += g.data()[r];
    }
  });
}

/// Mean of all entries, 1x1.
inline Var mean(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  const double n = static_cast<double>(xv.size());
  const std::size_t xi = x.id;
  return x.tape->record(Tensor::scalar(acc / n), {xi}, [xi, n](Tape& t, std::size_t self) {
    const double g = t.grad(self).item() / n;
    for (auto& v : t.grad(xi).data()) v += g;
  });
}

/// Mean squared error over all entries, 1x1.
inline Var mse(Var a, Var b) {
  detail::require_same_tape("mse", a, b);
  if (a.shape() != b.shape()) detail::shape_error("mse", a.shape(), b.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av.data()[i] - bv.data()[i];
    acc += d * d;
  }
  const double n = static_cast<double>(av.size());
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(Tensor::scalar(acc / n), {ai, bi}, [ai, bi, n](Tape& t, std::size_t self) {
    const double g = t.grad(self).item() * 2.0 / n;
    const Tensor& av2 = t.value(ai);
    const Tensor& bv2 = t.value(bi);
    const bool ga_on = t.requires_grad(ai), gb_on = t.requires_grad(bi);
    for (std::size_t i = 0; i < av2.size(); ++i) {
      const double d = g * (av2.data()[i] - bv2.data()[i]);
      if (ga_on) t.grad(ai).data()[i] += d;
      if (gb_on) t.grad(bi).data()[i] -= d;
    }
  });
}

inline constexpr double kProbClamp = 1e-12;

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

/// Scalar binary cross-entropy with clamped probability.
inline double bce(double p, double y) {
  const double q = clamp_prob(p);
  return -y * std::log(q) - (1.0 - y) * std::log(1.0 - q);
}

/// Elementwise binary cross-entropy of probabilities against targets (same
/// shape). Probabilities are clamped to [1e-12, 1-1e-12]; the clamp passes no
/// gradient outside that interval.
inline Var bce(Var p, Var y) {
  detail::require_same_tape("bce", p, y);
  if (p.shape() != y.shape()) detail::shape_error("bce", p.shape(), y.shape());
  const Tensor& pv = p.value();
  const Tensor& yv = y.value();
  Tensor out(pv.rows(), pv.cols());
  for (std::size_t i = 0; i < pv.size(); ++i) out.data()[i] = bce(pv.data()[i], yv.data()[i]);
  const std::size_t pi = p.id, yi = y.id;
  return p.tape->record(std::move(out), {pi, yi}, [pi, yi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& pv2 = t.value(pi);
    const Tensor& yv2 = t.value(yi);
    const bool gp_on = t.requires_grad(pi), gy_on = t.requires_grad(yi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double raw = pv2.data()[i];
      const double q = clamp_prob(raw);
      const double y = yv2.data()[i];
      if (gp_on && q == raw) t.grad(pi).data()[i] += g.data()[i] * (q - y) / (q * (1.0 - q));
      if (gy_on) t.grad(yi).data()[i] += g.data()[i] * (std::log(1.0 - q) - std::log(q));
    }
  });
}

/// Rows of a sparse table selected by id, [ids.size() x cols]. Backward adds
/// into the table's per-row gradient map, so only touched rows get entries.
inline Var gather_rows(Tape& tape, Parameter& table, std::span<const std::uint32_t> ids) {
  if (!table.sparse) throw Error("gather_rows: parameter '" + table.name + "' is not sparse");
  if (ids.empty()) throw Error("gather_rows: empty id list");
  const std::size_t dim = table.value.cols();
  Tensor out(ids.size(), dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= table.value.rows()) {
      throw Error("gather_rows: id " + std::to_string(ids[r]) + " out of range for '" + table.name +
                  "' (" + std::to_string(table.value.rows()) + " rows)");
    }
    auto src = table.value.row_span(ids[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  Parameter* target = &table;
  std::vector<std::uint32_t> rows(ids.begin(), ids.end());
  return tape.record(std::move(out), {},
                     [target, rows = std::move(rows), dim](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       for (std::size_t r = 0; r < rows.size(); ++r) {
                         auto& acc = target->row_grads[rows[r]];
                         if (acc.empty()) acc.assign(dim, 0.0);
                         auto gr = g.row_span(r);
                         for (std::size_t c = 0; c < dim; ++c) acc[c] += gr[c];
                       }
                     },
                     true);
}

enum class Primitive {
  matmul,
  add,
  add_row,
  sub,
  mul,
  mul_col,
  mul_row,
  concat,
  relu,
  sigmoid,
  softmax,
  exp,
  reciprocal,
  sum_rows,
  mean,
  row_dot,
  mse,
  bce,
};

inline const char* primitive_name(Primitive k) {
  switch (k) {
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::add_row: return "add_row";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "mul";
    case Primitive::mul_col: return "mul_col";
    case Primitive::mul_row: return "mul_row";
    case Primitive::concat: return "concat";
    case Primitive::relu: return "relu";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::softmax: return "softmax";
    case Primitive::exp: return "exp";
    case Primitive::reciprocal: return "reciprocal";
    case Primitive::sum_rows: return "sum_rows";
    case Primitive::mean: return "mean";
    case Primitive::row_dot: return "row_dot";
    case Primitive::mse: return "mse";
    case Primitive::bce: return "bce";
  }
  return "unknown";
}

/// Uniform entry point over the primitive set; checks arity before dispatching.
inline Var apply(Primitive kind, std::span<const Var> in) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw Error(std::string(primitive_name(kind)) + ": expected " + std::to_string(n) +
                  " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case Primitive::matmul: need(2); return matmul(in[0], in[1]);
    case Primitive::add: need(2); return add(in[0], in[1]);
    case Primitive::add_row: need(2); return add_row(in[0], in[1]);
    case Primitive::sub: need(2); return sub(in[0], in[1]);
    case Primitive::mul: need(2); return mul(in[0], in[1]);
    case Primitive::mul_col: need(2); return mul_col(in[0], in[1]);
    case Primitive::mul_row: need(2); return mul_row(in[0], in[1]);
    case Primitive::concat: return concat_cols(std::vector<Var>(in.begin(), in.end()));
    case Primitive::relu: need(1); return relu(in[0]);
    case Primitive::sigmoid: need(1); return sigmoid(in[0]);
    case Primitive::softmax: need(1); return softmax_rows(in[0]);
    case Primitive::exp: need(1); return exp(in[0]);
    case Primitive::reciprocal: need(1); return reciprocal(in[0]);
    case Primitive::sum_rows: need(1); return sum_rows(in[0]);
    case Primitive::mean: need(1); return mean(in[0]);
    case Primitive::row_dot: need(2); return row_dot(in[0], in[1]);
    case Primitive::mse: need(2); return mse(in[0], in[1]);
    case Primitive::bce: need(2); return bce(in[0], in[1]);
  }
  throw Error("apply: unknown primitive");
}

using LossBuilder = std::function<Var(Tape&)>;

/// Compares backpropagated gradients of `f` against central differences.
/// Returns max over all parameter entries of
/// |analytic - numeric| / max(1, |numeric|). Leaves parameter values
/// unchanged and parameter gradients holding the analytic result.
inline double finite_difference_check(const LossBuilder& f, std::span<Parameter* const> params,
                                      double eps) {
  if (!(eps > 0.0)) throw Error("finite_difference_check: eps must be positive");
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = f(tape);
    if (!std::isfinite(loss.value().item())) throw Error("finite_difference_check: non-finite loss");
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape tape;
    const double v = f(tape).value().item();
    if (!std::isfinite(v)) throw Error("finite_difference_check: non-finite loss");
    return v;
  };
  double worst = 0.0;
  for (auto* p : params) {
    const Tensor analytic = p->dense_grad();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = eval();
      x = saved - eps;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic.data()[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace adsnet
