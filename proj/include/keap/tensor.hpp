#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "keap/errors.hpp"

namespace keap {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Boolean matrix used for padding / selection masks (true = valid / selected).
struct BoolMat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> v;

  BoolMat() = default;
  BoolMat(std::size_t r, std::size_t c, bool fill = false)
      : rows(r), cols(c), v(r * c, fill ? 1 : 0) {}

  bool at(std::size_t r, std::size_t c) const { return v[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool b) { v[r * cols + c] = b ? 1 : 0; }
};

// Integer matrix used for token ids.
struct IdMat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> v;

  IdMat() = default;
  IdMat(std::size_t r, std::size_t c, std::int32_t fill = 0)
      : rows(r), cols(c), v(r * c, fill) {}

  std::int32_t at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  std::int32_t& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // sized on first accumulation
  bool requires_grad = false;
};

template <typename T>
class Graph;

// Dense row-major tensor; a shared handle into storage that may participate
// in the recording graph.
template <typename T>
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(shape_numel(t.impl_->shape), T(0));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("from_data: shape " + shape_str(shape) + " does not cover " +
                       std::to_string(data.size()) + " values");
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("item: tensor is not scalar, shape " + shape_str(shape()));
    return impl_->data[0];
  }

  // Gradient of the same shape as the tensor; zeros until backward touches it.
  std::vector<T>& grad() {
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }
  const std::vector<T>& grad() const { return const_cast<Tensor*>(this)->grad(); }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {

template <typename T>
inline std::vector<T>& grad_buf(const std::shared_ptr<TensorImpl<T>>& impl) {
  if (impl->grad.size() != impl->data.size()) impl->grad.assign(impl->data.size(), T(0));
  return impl->grad;
}

template <typename T>
inline Graph<T>*& active_graph_slot() {
  thread_local Graph<T>* g = nullptr;
  return g;
}

}  // namespace detail

// Append-only tape of recorded operations. backward() replays the closures in
// exact reverse append order; contributions into shared inputs accumulate.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* active() { return detail::active_graph_slot<T>(); }

  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  std::size_t size() const { return ops_.size(); }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (ops_.empty()) throw ContractError("backward: empty graph");
    detail::grad_buf(loss.impl())[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

// Activates a graph for recording on this thread; restores the previous one
// on scope exit. Forward passes with no active scope record nothing.
template <typename T>
class GraphScope {
 public:
  explicit GraphScope(Graph<T>& g) : prev_(detail::active_graph_slot<T>()) {
    detail::active_graph_slot<T>() = &g;
  }
  ~GraphScope() { detail::active_graph_slot<T>() = prev_; }
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph<T>* prev_;
};

namespace detail {

template <typename T>
inline bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (!active_graph_slot<T>()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// out[m,n] += a[m,k] * b[k,n]
template <typename T>
inline void gemm_acc(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

// ga[m,k] += g[m,n] * b[k,n]^T
template <typename T>
inline void gemm_acc_bt(const T* g, const T* b, T* ga, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    T* garow = ga + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      garow[p] += acc;
    }
  }
}

// gb[k,n] += a[m,k]^T * g[m,n]
template <typename T>
inline void gemm_acc_at(const T* a, const T* g, T* gb, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      T* gbrow = gb + p * n;
      for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.numel();
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  if (detail::recording<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Graph<T>::active()->record([ai, bi, oi]() {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        auto& ga = detail::grad_buf(ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        auto& gb = detail::grad_buf(bi);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += oi->grad[i];
      }
    });
  }
  return out;
}

// x[..., D] + bias[D]
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.dim() != 1 || x.dim() < 1 || x.shape().back() != bias.shape()[0])
    throw ShapeError("add_rowwise: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(bias.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t d = bias.shape()[0];
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.data();
  const auto& bv = bias.data();
  auto& ov = out.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] + bv[j];
  if (detail::recording<T>({&x, &bias})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), bi = bias.impl(), oi = out.impl();
    Graph<T>::active()->record([xi, bi, oi, rows, d]() {
      if (oi->grad.empty()) return;
      if (xi->requires_grad) {
        auto& gx = detail::grad_buf(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        auto& gb = detail::grad_buf(bi);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += oi->grad[r * d + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.numel();
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
  if (detail::recording<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Graph<T>::active()->record([ai, bi, oi]() {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        auto& ga = detail::grad_buf(ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& gb = detail::grad_buf(bi);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t n = out.numel();
  const auto& xv = x.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] * c;
  if (detail::recording<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Graph<T>::active()->record([xi, oi, c]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = detail::grad_buf(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t n = out.numel();
  const auto& xv = x.data();
  auto& ov = out.data();
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < n; ++i)
    ov[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  if (detail::recording<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Graph<T>::active()->record([xi, oi, inv_sqrt2]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = detail::grad_buf(xi);
      const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T v = xi->data[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = std::exp(T(-0.5) * v * v) * inv_sqrt2pi;
        gx[i] += oi->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul: 2Dx2D, NDx2D (shared right operand), NDxND (matching leading dims)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2)
    throw ShapeError("matmul: need >=2 dims, got " + shape_str(as) + " and " + shape_str(bs));
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

  const bool shared_b = (bs.size() == 2);
  if (!shared_b) {
    if (bs.size() != as.size())
      throw ShapeError("matmul: rank mismatch " + shape_str(as) + " vs " + shape_str(bs));
    for (std::size_t i = 0; i + 2 < as.size(); ++i)
      if (as[i] != bs[i])
        throw ShapeError("matmul: batch mismatch " + shape_str(as) + " vs " + shape_str(bs));
  }
  const std::size_t kb = bs[bs.size() - 2];
  const std::size_t n = bs[bs.size() - 1];
  if (k != kb)
    throw ShapeError("matmul: inner extents differ, " + shape_str(as) + " x " + shape_str(bs));

  Shape os(as.begin(), as.end() - 1);
  os.push_back(n);
  Tensor<T> out = Tensor<T>::zeros(os);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  T* od = out.data().data();
  for (std::size_t c = 0; c < batch; ++c)
    detail::gemm_acc(ad + c * m * k, shared_b ? bd : bd + c * k * n, od + c * m * n, m, k, n);

  if (detail::recording<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Graph<T>::active()->record([ai, bi, oi, batch, m, k, n, shared_b]() {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      if (ai->requires_grad) {
        T* ga = detail::grad_buf(ai).data();
        const T* bd2 = bi->data.data();
        for (std::size_t c = 0; c < batch; ++c)
          detail::gemm_acc_bt(g + c * m * n, shared_b ? bd2 : bd2 + c * k * n, ga + c * m * k, m, k, n);
      }
      if (bi->requires_grad) {
        T* gb = detail::grad_buf(bi).data();
        const T* ad2 = ai->data.data();
        for (std::size_t c = 0; c < batch; ++c)
          detail::gemm_acc_at(ad2 + c * m * k, g + c * m * n, shared_b ? gb : gb + c * k * n, m, k, n);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// views (materialized)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                     " changes element count");
  Tensor<T> out = Tensor<T>::from_data(std::move(new_shape), x.data());
  if (detail::recording<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Graph<T>::active()->record([xi, oi]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = detail::grad_buf(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
    });
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> row_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

template <typename T>
inline void transpose_copy(const T* src, T* dst, const Shape& in_shape, std::size_t d0,
                           std::size_t d1) {
  Shape out_shape = in_shape;
  std::swap(out_shape[d0], out_shape[d1]);
  const auto ist = row_strides(in_shape);
  const auto ost = row_strides(out_shape);
  const std::size_t total = shape_numel(in_shape);
  const std::size_t nd = in_shape.size();
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t lin = 0; lin < total; ++lin) {
    std::size_t rem = lin;
    std::size_t dst_off = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      idx[d] = rem / ist[d];
      rem %= ist[d];
    }
    std::swap(idx[d0], idx[d1]);
    for (std::size_t d = 0; d < nd; ++d) dst_off += idx[d] * ost[d];
    dst[dst_off] = src[lin];
  }
}

}  // namespace detail

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t d0, std::size_t d1) {
  if (d0 >= x.dim() || d1 >= x.dim())
    throw ShapeError("transpose: axes out of range for " + shape_str(x.shape()));
  Shape os = x.shape();
  std::swap(os[d0], os[d1]);
  Tensor<T> out = Tensor<T>::zeros(os);
  detail::transpose_copy(x.data().data(), out.data().data(), x.shape(), d0, d1);
  if (detail::recording<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Shape oshape = os;
    Graph<T>::active()->record([xi, oi, oshape, d0, d1]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      std::vector<T> tmp(oi->grad.size());
      detail::transpose_copy(oi->grad.data(), tmp.data(), oshape, d0, d1);
      auto& gx = detail::grad_buf(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_lastdim(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() != b.dim() || a.dim() < 1)
    throw ShapeError("concat: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  for (std::size_t i = 0; i + 1 < a.dim(); ++i)
    if (a.shape()[i] != b.shape()[i])
      throw ShapeError("concat: leading dims differ, " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  const std::size_t da = a.shape().back();
  const std::size_t db = b.shape().back();
  Shape os = a.shape();
  os.back() = da + db;
  Tensor<T> out = Tensor<T>::zeros(os);
  const std::size_t rows = a.numel() / da;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < da; ++j) out.data()[r * (da + db) + j] = a.data()[r * da + j];
    for (std::size_t j = 0; j < db; ++j) out.data()[r * (da + db) + da + j] = b.data()[r * db + j];
  }
  if (detail::recording<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Graph<T>::active()->record([ai, bi, oi, rows, da, db]() {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        auto& ga = detail::grad_buf(ai);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < da; ++j) ga[r * da + j] += oi->grad[r * (da + db) + j];
      }
      if (bi->requires_grad) {
        auto& gb = detail::grad_buf(bi);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < db; ++j) gb[r * db + j] += oi->grad[r * (da + db) + da + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

namespace detail {

// Maps each flattened row of x to a mask row, or returns nullptr offsets when
// no mask applies. Supported mask layouts: same rows as x, or one mask row per
// leading-batch entry (broadcast across middle dims).
inline std::size_t mask_row_for(std::size_t row, std::size_t rows, std::size_t mask_rows) {
  if (mask_rows == rows) return row;
  return row / (rows / mask_rows);
}

}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, const BoolMat* mask = nullptr) {
  if (x.dim() < 1) throw ShapeError("softmax: rank 0 input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  if (mask) {
    if (mask->cols != n)
      throw ShapeError("softmax: mask cols " + std::to_string(mask->cols) + " != last dim " +
                       std::to_string(n));
    if (mask->rows == 0 || rows % mask->rows != 0)
      throw ShapeError("softmax: mask rows " + std::to_string(mask->rows) +
                       " do not broadcast over " + std::to_string(rows) + " rows");
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t mr = mask ? detail::mask_row_for(r, rows, mask->rows) : 0;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !mask->at(mr, j)) continue;
      any = true;
      mx = std::max(mx, xv[r * n + j]);
    }
    if (!any) throw DegenerateRowError("softmax: fully masked row " + std::to_string(r));
    T denom = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !mask->at(mr, j)) {
        ov[r * n + j] = T(0);
        continue;
      }
      const T e = std::exp(xv[r * n + j] - mx);
      ov[r * n + j] = e;
      denom += e;
    }
    const T inv = T(1) / denom;
    for (std::size_t j = 0; j < n; ++j) ov[r * n + j] *= inv;
  }
  if (detail::recording<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Graph<T>::active()->record([xi, oi, rows, n]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = detail::grad_buf(xi);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += oi->grad[r * n + j] * oi->data[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += oi->data[r * n + j] * (oi->grad[r * n + j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match feature dim " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  auto& ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xv[r * d + j];
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = xv[r * d + j] - mean;
      var += c * c;
    }
    var /= T(d);
    const T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xv[r * d + j] - mean) * istd;
      (*xhat)[r * d + j] = h;
      ov[r * d + j] = gv[j] * h + bv[j];
    }
  }
  if (detail::recording<T>({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    Graph<T>::active()->record([xi, gi, bi, oi, xhat, inv_std, rows, d]() {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (gi->requires_grad) {
        auto& gg = detail::grad_buf(gi);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
      }
      if (bi->requires_grad) {
        auto& gb = detail::grad_buf(bi);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (xi->requires_grad) {
        auto& gx = detail::grad_buf(xi);
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_gy = T(0), sum_gyh = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T gy = g[r * d + j] * gi->data[j];
            sum_gy += gy;
            sum_gyh += gy * (*xhat)[r * d + j];
          }
          const T inv_d = T(1) / T(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T gy = g[r * d + j] * gi->data[j];
            gx[r * d + j] += (*inv_std)[r] *
                             (gy - inv_d * sum_gy - (*xhat)[r * d + j] * inv_d * sum_gyh);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding / reductions / losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const IdMat& ids) {
  if (table.dim() != 2) throw ShapeError("embedding: table must be 2D, got " + shape_str(table.shape()));
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  Tensor<T> out = Tensor<T>::zeros({ids.rows, ids.cols, d});
  for (std::size_t r = 0; r < ids.rows; ++r)
    for (std::size_t c = 0; c < ids.cols; ++c) {
      const std::int32_t id = ids.at(r, c);
      if (id < 0 || static_cast<std::size_t>(id) >= vocab)
        throw VocabError("embedding: id " + std::to_string(id) + " outside vocab of " +
                         std::to_string(vocab));
      const T* src = table.data().data() + static_cast<std::size_t>(id) * d;
      T* dst = out.data().data() + (r * ids.cols + c) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
    }
  if (detail::recording<T>({&table})) {
    out.set_requires_grad(true);
    auto ti = table.impl(), oi = out.impl();
    auto ids_copy = std::make_shared<IdMat>(ids);
    Graph<T>::active()->record([ti, oi, ids_copy, d]() {
      if (oi->grad.empty() || !ti->requires_grad) return;
      auto& gt = detail::grad_buf(ti);
      for (std::size_t r = 0; r < ids_copy->rows; ++r)
        for (std::size_t c = 0; c < ids_copy->cols; ++c) {
          const std::size_t id = static_cast<std::size_t>(ids_copy->at(r, c));
          const T* g = oi->grad.data() + (r * ids_copy->cols + c) * d;
          for (std::size_t j = 0; j < d; ++j) gt[id * d + j] += g[j];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::recording<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Graph<T>::active()->record([xi, oi]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = detail::grad_buf(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[0];
    });
  }
  return out;
}

// Mean of x[B,L,D] over positions where mask[B,L] is true -> [B,D].
template <typename T>
Tensor<T> mean_over_valid(const Tensor<T>& x, const BoolMat& mask) {
  if (x.dim() != 3) throw ShapeError("mean_over_valid: need [B,L,D], got " + shape_str(x.shape()));
  const std::size_t b = x.shape()[0], l = x.shape()[1], d = x.shape()[2];
  if (mask.rows != b || mask.cols != l)
    throw ShapeError("mean_over_valid: mask " + std::to_string(mask.rows) + "x" +
                     std::to_string(mask.cols) + " does not match " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros({b, d});
  auto counts = std::make_shared<std::vector<std::size_t>>(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t cnt = 0;
    for (std::size_t p = 0; p < l; ++p) {
      if (!mask.at(i, p)) continue;
      ++cnt;
      for (std::size_t j = 0; j < d; ++j) out.data()[i * d + j] += x.data()[(i * l + p) * d + j];
    }
    if (cnt == 0) throw DegenerateRowError("mean_over_valid: sequence " + std::to_string(i) +
                                           " has no valid positions");
    (*counts)[i] = cnt;
    for (std::size_t j = 0; j < d; ++j) out.data()[i * d + j] /= T(cnt);
  }
  if (detail::recording<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    auto mask_copy = std::make_shared<BoolMat>(mask);
    Graph<T>::active()->record([xi, oi, mask_copy, counts, b, l, d]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = detail::grad_buf(xi);
      for (std::size_t i = 0; i < b; ++i) {
        const T inv = T(1) / T((*counts)[i]);
        for (std::size_t p = 0; p < l; ++p) {
          if (!mask_copy->at(i, p)) continue;
          for (std::size_t j = 0; j < d; ++j)
            gx[(i * l + p) * d + j] += oi->grad[i * d + j] * inv;
        }
      }
    });
  }
  return out;
}

// Mean softmax cross-entropy over rows of logits[N,C] whose label != ignore_index.
template <typename T>
Tensor<T> cross_entropy_ignore(const Tensor<T>& logits, const std::vector<std::int32_t>& labels,
                               std::int32_t ignore_index = -1) {
  if (logits.dim() != 2)
    throw ShapeError("cross_entropy: logits must be [N,C], got " + shape_str(logits.shape()));
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  auto probs = std::make_shared<std::vector<T>>(n * c, T(0));
  std::size_t valid = 0;
  T loss = T(0);
  const auto& lv = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    const std::int32_t label = labels[r];
    if (label == ignore_index) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= c)
      throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0," +
                          std::to_string(c) + ")");
    ++valid;
    T mx = lv[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv[r * c + j]);
    T denom = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      const T e = std::exp(lv[r * c + j] - mx);
      (*probs)[r * c + j] = e;
      denom += e;
    }
    const T inv = T(1) / denom;
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] *= inv;
    loss -= std::log((*probs)[r * c + static_cast<std::size_t>(label)]);
  }
  if (valid == 0) throw ContractError("cross_entropy: no rows with a valid label");
  loss /= T(valid);
  Tensor<T> out = Tensor<T>::scalar(loss);
  if (detail::recording<T>({&logits})) {
    out.set_requires_grad(true);
    auto li = logits.impl(), oi = out.impl();
    auto labels_copy = std::make_shared<std::vector<std::int32_t>>(labels);
    Graph<T>::active()->record([li, oi, probs, labels_copy, n, c, valid, ignore_index]() {
      if (oi->grad.empty() || !li->requires_grad) return;
      auto& gl = detail::grad_buf(li);
      const T s = oi->grad[0] / T(valid);
      for (std::size_t r = 0; r < n; ++r) {
        const std::int32_t label = (*labels_copy)[r];
        if (label == ignore_index) continue;
        for (std::size_t j = 0; j < c; ++j) {
          T v = (*probs)[r * c + j];
          if (j == static_cast<std::size_t>(label)) v -= T(1);
          gl[r * c + j] += s * v;
        }
      }
    });
  }
  return out;
}

// Mean binary cross-entropy with logits; targets in {0,1}. When a validity
// mask is given, only the flagged entries contribute.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const std::vector<T>& targets,
                          const std::vector<std::uint8_t>* valid = nullptr) {
  const std::size_t n = logits.numel();
  if (targets.size() != n)
    throw ShapeError("bce: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " logits");
  if (valid && valid->size() != n)
    throw ShapeError("bce: mask size " + std::to_string(valid->size()) + " != " + std::to_string(n));
  std::size_t count = 0;
  T loss = T(0);
  const auto& zv = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (valid && !(*valid)[i]) continue;
    ++count;
    const T z = zv[i];
    // max(z,0) - z*t + log(1 + exp(-|z|))
    loss += std::max(z, T(0)) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  if (count == 0) throw ContractError("bce: no valid entries");
  loss /= T(count);
  Tensor<T> out = Tensor<T>::scalar(loss);
  if (detail::recording<T>({&logits})) {
    out.set_requires_grad(true);
    auto li = logits.impl(), oi = out.impl();
    auto targets_copy = std::make_shared<std::vector<T>>(targets);
    auto valid_copy = valid ? std::make_shared<std::vector<std::uint8_t>>(*valid) : nullptr;
    Graph<T>::active()->record([li, oi, targets_copy, valid_copy, n, count]() {
      if (oi->grad.empty() || !li->requires_grad) return;
      auto& gl = detail::grad_buf(li);
      const T s = oi->grad[0] / T(count);
      for (std::size_t i = 0; i < n; ++i) {
        if (valid_copy && !(*valid_copy)[i]) continue;
        const T sig = T(1) / (T(1) + std::exp(-li->data[i]));
        gl[i] += s * (sig - (*targets_copy)[i]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// multi-head attention
// ---------------------------------------------------------------------------

// Scaled dot-product attention with per-head splitting. q[B,Lq,D], k/v[B,Lk,D];
// key_pad_mask[B,Lk] true where the key is valid. Heads are concatenated back
// to [B,Lq,D]; pass out_proj to apply the output projection.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const BoolMat& key_pad_mask, std::size_t heads) {
  if (q.dim() != 3 || k.dim() != 3 || v.dim() != 3)
    throw ShapeError("attention: need [B,L,D] inputs, got " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const std::size_t b = q.shape()[0], lq = q.shape()[1], d = q.shape()[2];
  const std::size_t lk = k.shape()[1];
  if (k.shape()[0] != b || v.shape()[0] != b || v.shape()[1] != lk || k.shape()[2] != d ||
      v.shape()[2] != d)
    throw ShapeError("attention: shape mismatch " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  if (heads == 0 || d % heads != 0)
    throw ConfigError("attention: feature dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  if (key_pad_mask.rows != b || key_pad_mask.cols != lk)
    throw ShapeError("attention: key mask " + std::to_string(key_pad_mask.rows) + "x" +
                     std::to_string(key_pad_mask.cols) + " does not match keys");
  for (std::size_t i = 0; i < b; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < lk; ++j) any = any || key_pad_mask.at(i, j);
    if (!any)
      throw DegenerateRowError("attention: sequence " + std::to_string(i) + " has all keys padded");
  }
  const std::size_t dh = d / heads;
  Tensor<T> qh = transpose(reshape(q, {b, lq, heads, dh}), 1, 2);
  Tensor<T> kh = transpose(reshape(k, {b, lk, heads, dh}), 1, 2);
  Tensor<T> vh = transpose(reshape(v, {b, lk, heads, dh}), 1, 2);
  Tensor<T> scores = scale(matmul(qh, transpose(kh, 2, 3)), T(1) / std::sqrt(T(dh)));
  Tensor<T> attn = softmax(scores, &key_pad_mask);  // mask broadcast over heads x Lq
  Tensor<T> ctx = matmul(attn, vh);
  return reshape(transpose(ctx, 1, 2), {b, lq, d});
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const BoolMat& key_pad_mask, std::size_t heads,
                               const Tensor<T>& out_proj) {
  return matmul(multi_head_attention(q, k, v, key_pad_mask, heads), out_proj);
}

}  // namespace keap
