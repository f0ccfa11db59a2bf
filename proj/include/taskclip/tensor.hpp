#pragma once

// Dense 2-D tensors with reverse-mode automatic differentiation.
//
// Tensors are matrices (a scalar is 1x1), stored row-major. Ops executed
// while a Tape is in scope record backward closures; Tape::backward replays
// them in reverse execution order, which is a reverse topological order of
// the forward graph. Without a tape, ops run plain and record nothing.
//
// float is the training precision; double exists for gradient checking.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "taskclip/errors.hpp"

namespace taskclip {

template <class S>
struct TensorData {
  int rows = 0;
  int cols = 0;
  std::vector<S> v;  // values, row-major
  std::vector<S> g;  // gradient, empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (g.empty()) g.assign(v.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols, bool requires_grad = false) {
    if (rows <= 0 || cols <= 0) {
      throw ShapeError("tensor dimensions must be positive, got " +
                       shape_string(rows, cols));
    }
    d_ = std::make_shared<TensorData<S>>();
    d_->rows = rows;
    d_->cols = cols;
    d_->v.assign(static_cast<size_t>(rows) * cols, S(0));
    d_->requires_grad = requires_grad;
  }

  static Tensor from_rows(const std::vector<std::vector<S>>& rows) {
    if (rows.empty() || rows[0].empty()) {
      throw ShapeError("from_rows: empty matrix");
    }
    Tensor t(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size()) {
        throw ShapeError("from_rows: ragged rows");
      }
      std::copy(rows[i].begin(), rows[i].end(),
                t.d_->v.begin() + static_cast<long>(i * rows[0].size()));
    }
    return t;
  }

  static Tensor row_vector(const std::vector<S>& v) {
    return from_rows({v});
  }

  static Tensor scalar(S v) {
    Tensor t(1, 1);
    t.d_->v[0] = v;
    return t;
  }

  static Tensor filled(int rows, int cols, S v) {
    Tensor t(rows, cols);
    std::fill(t.d_->v.begin(), t.d_->v.end(), v);
    return t;
  }

  static Tensor identity(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = S(1);
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  int rows() const { return d_->rows; }
  int cols() const { return d_->cols; }
  size_t size() const { return d_->v.size(); }

  S at(int i, int j) const {
    assert(i >= 0 && i < d_->rows && j >= 0 && j < d_->cols);
    return d_->v[static_cast<size_t>(i) * d_->cols + j];
  }
  S& at(int i, int j) {
    assert(i >= 0 && i < d_->rows && j >= 0 && j < d_->cols);
    return d_->v[static_cast<size_t>(i) * d_->cols + j];
  }

  const std::vector<S>& values() const { return d_->v; }
  std::vector<S>& values() { return d_->v; }

  // Scalar convenience.
  S value() const {
    if (size() != 1) {
      throw UsageError("value() requires a 1x1 tensor, got " +
                       shape_string(rows(), cols()));
    }
    return d_->v[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  const std::vector<S>& grad() const { return d_->g; }
  std::vector<S>& grad_buffer() {
    d_->ensure_grad();
    return d_->g;
  }
  void zero_grad() {
    if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), S(0));
  }

  Tensor clone() const {
    Tensor t(rows(), cols(), requires_grad());
    t.d_->v = d_->v;
    return t;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> t(rows(), cols(), requires_grad());
    for (size_t i = 0; i < size(); ++i) {
      t.values()[i] = static_cast<T>(d_->v[i]);
    }
    return t;
  }

  const std::shared_ptr<TensorData<S>>& impl() const { return d_; }

 private:
  std::shared_ptr<TensorData<S>> d_;
};

template <class S>
class Tape {
 public:
  Tape() {
    if (active_) throw UsageError("nested tapes are not supported");
    active_ = this;
  }
  ~Tape() { active_ = nullptr; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> backward_op) {
    ops_.push_back(std::move(backward_op));
  }

  size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse order,
  // accumulating gradients into every requires_grad tensor reachable from
  // the loss.
  void backward(const Tensor<S>& loss) {
    if (loss.size() != 1) {
      throw UsageError("backward requires a scalar loss, got " +
                       shape_string(loss.rows(), loss.cols()));
    }
    loss.impl()->ensure_grad();
    loss.impl()->g[0] = S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  inline static thread_local Tape* active_ = nullptr;
  std::vector<std::function<void()>> ops_;
};

namespace detail {

// Order-invariant sum: sorting makes the result independent of the caller's
// addend order, so permuting attention memory rows cannot change outputs.
template <class S>
S canonical_sum(std::vector<S>& buf) {
  std::sort(buf.begin(), buf.end());
  S acc = S(0);
  for (S x : buf) acc += x;
  return acc;
}

// dst[MxN] += A[MxK] * B[KxN]
template <class S>
void add_matmul_nn(std::vector<S>& dst, const std::vector<S>& a,
                   const std::vector<S>& b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      S av = a[static_cast<size_t>(i) * k + p];
      if (av == S(0)) continue;
      const S* brow = &b[static_cast<size_t>(p) * n];
      S* drow = &dst[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) drow[j] += av * brow[j];
    }
  }
}

// dst[MxK] += G[MxN] * B[KxN]^T
template <class S>
void add_matmul_nt(std::vector<S>& dst, const std::vector<S>& g,
                   const std::vector<S>& b, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      S acc = S(0);
      const S* grow = &g[static_cast<size_t>(i) * n];
      const S* brow = &b[static_cast<size_t>(p) * n];
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      dst[static_cast<size_t>(i) * k + p] += acc;
    }
  }
}

// dst[KxN] += A[MxK]^T * G[MxN]
template <class S>
void add_matmul_tn(std::vector<S>& dst, const std::vector<S>& a,
                   const std::vector<S>& g, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = &a[static_cast<size_t>(i) * k];
    const S* grow = &g[static_cast<size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      S av = arow[p];
      if (av == S(0)) continue;
      S* drow = &dst[static_cast<size_t>(p) * n];
      for (int j = 0; j < n; ++j) drow[j] += av * grow[j];
    }
  }
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                        const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.rows(), a.cols()) + " vs " +
                     shape_string(b.rows(), b.cols()));
  }
}

template <class S>
bool record_unary(const Tensor<S>& x, Tensor<S>& out,
                  std::function<void()> bw) {
  auto* tape = Tape<S>::active();
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record(std::move(bw));
    return true;
  }
  return false;
}

template <class S>
bool record_binary(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& out,
                   std::function<void()> bw) {
  auto* tape = Tape<S>::active();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record(std::move(bw));
    return true;
  }
  return false;
}

}  // namespace detail

enum class SumOrder {
  kFast,       // plain left fold over the inner dimension
  kCanonical,  // order-invariant (sorted) inner sums
};

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b,
                 SumOrder order = SumOrder::kFast) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " +
                     shape_string(a.rows(), a.cols()) + " vs " +
                     shape_string(b.rows(), b.cols()));
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<S> out(m, n);
  if (order == SumOrder::kFast) {
    detail::add_matmul_nn(out.values(), a.values(), b.values(), m, k, n);
  } else {
    std::vector<S> buf(static_cast<size_t>(k));
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        for (int p = 0; p < k; ++p) {
          buf[static_cast<size_t>(p)] = a.at(i, p) * b.at(p, j);
        }
        out.at(i, j) = detail::canonical_sum(buf);
      }
    }
  }
  detail::record_binary(a, b, out, [ad = a.impl(), bd = b.impl(),
                                    od = out.impl(), m, k, n] {
    if (od->g.empty()) return;
    if (ad->requires_grad) {
      ad->ensure_grad();
      detail::add_matmul_nt(ad->g, od->g, bd->v, m, n, k);
    }
    if (bd->requires_grad) {
      bd->ensure_grad();
      detail::add_matmul_tn(bd->g, ad->v, od->g, m, k, n);
    }
  });
  return out;
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> out(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i) {
    out.values()[i] = a.values()[i] + b.values()[i];
  }
  detail::record_binary(a, b, out,
                        [ad = a.impl(), bd = b.impl(), od = out.impl()] {
    if (od->g.empty()) return;
    if (ad->requires_grad) {
      ad->ensure_grad();
      for (size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i];
    }
    if (bd->requires_grad) {
      bd->ensure_grad();
      for (size_t i = 0; i < od->g.size(); ++i) bd->g[i] += od->g[i];
    }
  });
  return out;
}

// x[MxN] + bias[1xN] broadcast over rows.
template <class S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_bias: bias " +
                     shape_string(bias.rows(), bias.cols()) +
                     " does not broadcast over " +
                     shape_string(x.rows(), x.cols()));
  }
  Tensor<S> out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      out.at(i, j) = x.at(i, j) + bias.at(0, j);
    }
  }
  detail::record_binary(x, bias, out,
                        [xd = x.impl(), bd = bias.impl(), od = out.impl()] {
    if (od->g.empty()) return;
    const int rows = od->rows, cols = od->cols;
    if (xd->requires_grad) {
      xd->ensure_grad();
      for (size_t i = 0; i < od->g.size(); ++i) xd->g[i] += od->g[i];
    }
    if (bd->requires_grad) {
      bd->ensure_grad();
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
          bd->g[static_cast<size_t>(j)] += od->g[static_cast<size_t>(i) * cols + j];
        }
      }
    }
  });
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, double c) {
  Tensor<S> out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) {
    out.values()[i] = static_cast<S>(c) * x.values()[i];
  }
  detail::record_unary(x, out, [xd = x.impl(), od = out.impl(), c] {
    if (od->g.empty() || !xd->requires_grad) return;
    xd->ensure_grad();
    for (size_t i = 0; i < od->g.size(); ++i) {
      xd->g[i] += static_cast<S>(c) * od->g[i];
    }
  });
  return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) {
    out.values()[i] = x.values()[i] > S(0) ? x.values()[i] : S(0);
  }
  detail::record_unary(x, out, [xd = x.impl(), od = out.impl()] {
    if (od->g.empty() || !xd->requires_grad) return;
    xd->ensure_grad();
    for (size_t i = 0; i < od->g.size(); ++i) {
      if (xd->v[i] > S(0)) xd->g[i] += od->g[i];
    }
  });
  return out;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) {
    S v = x.values()[i];
    if (v >= S(0)) {
      out.values()[i] = S(1) / (S(1) + std::exp(-v));
    } else {
      S e = std::exp(v);
      out.values()[i] = e / (S(1) + e);
    }
  }
  detail::record_unary(x, out, [xd = x.impl(), od = out.impl()] {
    if (od->g.empty() || !xd->requires_grad) return;
    xd->ensure_grad();
    for (size_t i = 0; i < od->g.size(); ++i) {
      S y = od->v[i];
      xd->g[i] += od->g[i] * y * (S(1) - y);
    }
  });
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
  Tensor<S> out(x.cols(), x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) out.at(j, i) = x.at(i, j);
  }
  detail::record_unary(x, out, [xd = x.impl(), od = out.impl()] {
    if (od->g.empty() || !xd->requires_grad) return;
    xd->ensure_grad();
    const int r = xd->rows, c = xd->cols;
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        xd->g[static_cast<size_t>(i) * c + j] +=
            od->g[static_cast<size_t>(j) * r + i];
      }
    }
  });
  return out;
}

// Row-max subtraction stabilizes the exponentials; the denominator uses the
// order-invariant sum so row content, not storage order, determines output.
template <class S>
Tensor<S> row_softmax(const Tensor<S>& x) {
  Tensor<S> out(x.rows(), x.cols());
  std::vector<S> buf(static_cast<size_t>(x.cols()));
  for (int i = 0; i < x.rows(); ++i) {
    S mx = x.at(i, 0);
    for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
    for (int j = 0; j < x.cols(); ++j) {
      buf[static_cast<size_t>(j)] = std::exp(x.at(i, j) - mx);
      out.at(i, j) = buf[static_cast<size_t>(j)];
    }
    std::vector<S> tmp = buf;
    S denom = detail::canonical_sum(tmp);
    for (int j = 0; j < x.cols(); ++j) out.at(i, j) /= denom;
  }
  detail::record_unary(x, out, [xd = x.impl(), od = out.impl()] {
    if (od->g.empty() || !xd->requires_grad) return;
    xd->ensure_grad();
    const int rows = od->rows, cols = od->cols;
    for (int i = 0; i < rows; ++i) {
      const S* y = &od->v[static_cast<size_t>(i) * cols];
      const S* gy = &od->g[static_cast<size_t>(i) * cols];
      S dot = S(0);
      for (int j = 0; j < cols; ++j) dot += gy[j] * y[j];
      S* gx = &xd->g[static_cast<size_t>(i) * cols];
      for (int j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  });
  return out;
}

// Per-row normalization over columns with learned gain/bias [1xN].
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, double eps = 1e-5) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 ||
      bias.cols() != x.cols()) {
    throw ShapeError("layer_norm: gain/bias must be [1x" +
                     std::to_string(x.cols()) + "], got " +
                     shape_string(gain.rows(), gain.cols()) + " and " +
                     shape_string(bias.rows(), bias.cols()));
  }
  const int rows = x.rows(), cols = x.cols();
  Tensor<S> out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    S mu = S(0);
    for (int j = 0; j < cols; ++j) mu += x.at(i, j);
    mu /= static_cast<S>(cols);
    S var = S(0);
    for (int j = 0; j < cols; ++j) {
      S d = x.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<S>(cols);
    S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
    for (int j = 0; j < cols; ++j) {
      out.at(i, j) = gain.at(0, j) * (x.at(i, j) - mu) * inv + bias.at(0, j);
    }
  }
  auto* tape = Tape<S>::active();
  if (tape &&
      (x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([xd = x.impl(), gd = gain.impl(), bd = bias.impl(),
                  od = out.impl(), eps] {
      if (od->g.empty()) return;
      const int rows = xd->rows, cols = xd->cols;
      if (bd->requires_grad) bd->ensure_grad();
      if (gd->requires_grad) gd->ensure_grad();
      if (xd->requires_grad) xd->ensure_grad();
      std::vector<S> xhat(static_cast<size_t>(cols));
      for (int i = 0; i < rows; ++i) {
        const S* xr = &xd->v[static_cast<size_t>(i) * cols];
        const S* gy = &od->g[static_cast<size_t>(i) * cols];
        S mu = S(0);
        for (int j = 0; j < cols; ++j) mu += xr[j];
        mu /= static_cast<S>(cols);
        S var = S(0);
        for (int j = 0; j < cols; ++j) {
          S d = xr[j] - mu;
          var += d * d;
        }
        var /= static_cast<S>(cols);
        S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
        for (int j = 0; j < cols; ++j) xhat[static_cast<size_t>(j)] = (xr[j] - mu) * inv;
        if (bd->requires_grad) {
          for (int j = 0; j < cols; ++j) bd->g[static_cast<size_t>(j)] += gy[j];
        }
        if (gd->requires_grad) {
          for (int j = 0; j < cols; ++j) {
            gd->g[static_cast<size_t>(j)] += gy[j] * xhat[static_cast<size_t>(j)];
          }
        }
        if (xd->requires_grad) {
          S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
          for (int j = 0; j < cols; ++j) {
            S dxh = gy[j] * gd->v[static_cast<size_t>(j)];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[static_cast<size_t>(j)];
          }
          S* gx = &xd->g[static_cast<size_t>(i) * cols];
          for (int j = 0; j < cols; ++j) {
            S dxh = gy[j] * gd->v[static_cast<size_t>(j)];
            gx[j] += inv * (dxh - sum_dxhat / static_cast<S>(cols) -
                            xhat[static_cast<size_t>(j)] * sum_dxhat_xhat /
                                static_cast<S>(cols));
          }
        }
      }
    });
  }
  return out;
}

// Rows scaled to unit L2 norm; all-zero rows pass through unchanged.
template <class S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x) {
  const int rows = x.rows(), cols = x.cols();
  Tensor<S> out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    S sq = S(0);
    for (int j = 0; j < cols; ++j) sq += x.at(i, j) * x.at(i, j);
    S n = std::sqrt(sq);
    if (n == S(0)) {
      for (int j = 0; j < cols; ++j) out.at(i, j) = x.at(i, j);
    } else {
      for (int j = 0; j < cols; ++j) out.at(i, j) = x.at(i, j) / n;
    }
  }
  detail::record_unary(x, out, [xd = x.impl(), od = out.impl()] {
    if (od->g.empty() || !xd->requires_grad) return;
    xd->ensure_grad();
    const int rows = xd->rows, cols = xd->cols;
    for (int i = 0; i < rows; ++i) {
      const S* xr = &xd->v[static_cast<size_t>(i) * cols];
      const S* yr = &od->v[static_cast<size_t>(i) * cols];
      const S* gy = &od->g[static_cast<size_t>(i) * cols];
      S* gx = &xd->g[static_cast<size_t>(i) * cols];
      S sq = S(0);
      for (int j = 0; j < cols; ++j) sq += xr[j] * xr[j];
      S n = std::sqrt(sq);
      if (n == S(0)) {
        for (int j = 0; j < cols; ++j) gx[j] += gy[j];
      } else {
        S dot = S(0);
        for (int j = 0; j < cols; ++j) dot += gy[j] * yr[j];
        for (int j = 0; j < cols; ++j) gx[j] += (gy[j] - yr[j] * dot) / n;
      }
    }
  });
  return out;
}

template <class S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: column mismatch " +
                     shape_string(a.rows(), a.cols()) + " vs " +
                     shape_string(b.rows(), b.cols()));
  }
  Tensor<S> out(a.rows() + b.rows(), a.cols());
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(),
            out.values().begin() + static_cast<long>(a.size()));
  detail::record_binary(a, b, out,
                        [ad = a.impl(), bd = b.impl(), od = out.impl()] {
    if (od->g.empty()) return;
    if (ad->requires_grad) {
      ad->ensure_grad();
      for (size_t i = 0; i < ad->v.size(); ++i) ad->g[i] += od->g[i];
    }
    if (bd->requires_grad) {
      bd->ensure_grad();
      for (size_t i = 0; i < bd->v.size(); ++i) {
        bd->g[i] += od->g[ad->v.size() + i];
      }
    }
  });
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, int col0, int len) {
  if (col0 < 0 || len <= 0 || col0 + len > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(col0) + ", " +
                     std::to_string(col0 + len) + ") out of range for " +
                     shape_string(x.rows(), x.cols()));
  }
  Tensor<S> out(x.rows(), len);
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, col0 + j);
  }
  detail::record_unary(x, out, [xd = x.impl(), od = out.impl(), col0, len] {
    if (od->g.empty() || !xd->requires_grad) return;
    xd->ensure_grad();
    const int rows = xd->rows, cols = xd->cols;
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < len; ++j) {
        xd->g[static_cast<size_t>(i) * cols + col0 + j] +=
            od->g[static_cast<size_t>(i) * len + j];
      }
    }
  });
  return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  int rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " +
                       shape_string(rows, parts[0].cols()) + " vs " +
                       shape_string(p.rows(), p.cols()));
    }
    cols += p.cols();
  }
  Tensor<S> out(rows, cols);
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    }
    off += p.cols();
  }
  auto* tape = Tape<S>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<S>>> impls;
    impls.reserve(parts.size());
    for (const auto& p : parts) impls.push_back(p.impl());
    tape->record([impls, od = out.impl()] {
      if (od->g.empty()) return;
      const int rows = od->rows, cols = od->cols;
      int off = 0;
      for (const auto& pd : impls) {
        if (pd->requires_grad) {
          pd->ensure_grad();
          for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < pd->cols; ++j) {
              pd->g[static_cast<size_t>(i) * pd->cols + j] +=
                  od->g[static_cast<size_t>(i) * cols + off + j];
            }
          }
        }
        off += pd->cols;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  Tensor<S> out(1, 1);
  S acc = S(0);
  for (S v : x.values()) acc += v;
  out.values()[0] = acc;
  detail::record_unary(x, out, [xd = x.impl(), od = out.impl()] {
    if (od->g.empty() || !xd->requires_grad) return;
    xd->ensure_grad();
    for (size_t i = 0; i < xd->g.size(); ++i) xd->g[i] += od->g[0];
  });
  return out;
}

// Mean of squared differences.
template <class S>
Tensor<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  Tensor<S> out(1, 1);
  const S n = static_cast<S>(pred.size());
  S acc = S(0);
  for (size_t i = 0; i < pred.size(); ++i) {
    S d = pred.values()[i] - target.values()[i];
    acc += d * d;
  }
  out.values()[0] = acc / n;
  detail::record_binary(pred, target, out,
                        [pd = pred.impl(), td = target.impl(),
                         od = out.impl(), n] {
    if (od->g.empty()) return;
    S g = od->g[0];
    if (pd->requires_grad) {
      pd->ensure_grad();
      for (size_t i = 0; i < pd->v.size(); ++i) {
        pd->g[i] += g * S(2) * (pd->v[i] - td->v[i]) / n;
      }
    }
    if (td->requires_grad) {
      td->ensure_grad();
      for (size_t i = 0; i < td->v.size(); ++i) {
        td->g[i] -= g * S(2) * (pd->v[i] - td->v[i]) / n;
      }
    }
  });
  return out;
}

// Central-difference gradient verification, 64-bit only. Runs f once under a
// tape for analytic gradients, then perturbs every parameter element by
// +/-step and compares. Returns the worst relative error over all elements.
inline double grad_check(const std::function<Tensor<double>()>& f,
                         std::vector<Tensor<double>> params,
                         double step = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    for (auto& p : params) p.zero_grad();
    Tensor<double> loss = f();
    if (loss.size() != 1) {
      throw UsageError("grad_check requires a scalar-valued function, got " +
                       shape_string(loss.rows(), loss.cols()));
    }
    tape.backward(loss);
    for (const auto& p : params) {
      if (p.grad().empty()) {
        analytic.emplace_back(p.size(), 0.0);
      } else {
        analytic.push_back(p.grad());
      }
    }
  }
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      double keep = vals[i];
      vals[i] = keep + step;
      double up = f().value();
      vals[i] = keep - step;
      double down = f().value();
      vals[i] = keep;
      double numeric = (up - down) / (2.0 * step);
      double a = analytic[pi][i];
      double rel = std::abs(a - numeric) /
                   std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace taskclip
