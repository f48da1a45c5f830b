#include "apslstm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "apslstm/errors.hpp"

namespace apslstm {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != data.size())
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

// ---------------------------------------------------------------------------
// Graph

namespace {
thread_local DiffGraph tl_graph;
thread_local bool tl_grad_enabled = true;
// Leaf grads held aside during a backward pass. Each pass accumulates into a
// zeroed buffer which is added to the held value once at the end, so k passes
// over the same graph give exactly k times one pass.
thread_local std::unordered_map<TensorImpl*, std::vector<double>>* tl_leaf_stash = nullptr;
}  // namespace

DiffGraph& current_graph() { return tl_graph; }
bool grad_enabled() { return tl_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }

void DiffGraph::record(std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn) {
  nodes_.push_back(Node{std::move(output), std::move(backward_fn)});
}

void DiffGraph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  for (auto& node : nodes_) node.output->grad.assign(node.output->data.size(), 0.0);
  TensorImpl* root = loss.impl();
  std::unordered_map<TensorImpl*, std::vector<double>> stash;
  tl_leaf_stash = &stash;
  struct Reset {
    ~Reset() { tl_leaf_stash = nullptr; }
  } reset;
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
  for (auto& [leaf, held] : stash)
    for (std::size_t i = 0; i < held.size(); ++i) leaf->grad[i] = held[i] + leaf->grad[i];
}

void DiffGraph::clear() { nodes_.clear(); }

void backward(const Tensor& loss) { current_graph().backward(loss); }

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

bool tracks(std::initializer_list<const Tensor*> inputs) {
  if (!tl_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Marks `out` as a graph node and records its backward closure.
void attach(Tensor& out, std::function<void()> fn) {
  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  tl_graph.record(out.shared_impl(), std::move(fn));
}

// Grad buffer of a parent, or nullptr when it does not participate.
double* grad_of(const ImplPtr& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  if (p->is_leaf && tl_leaf_stash && !tl_leaf_stash->count(p.get())) {
    tl_leaf_stash->emplace(p.get(), p->grad);
    std::fill(p->grad.begin(), p->grad.end(), 0.0);
  }
  return p->grad.data();
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat source index for every flat output index.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    const std::size_t oi = i + (r - src.size());
    stride[oi] = src[i] == 1 ? 0 : s;
    s *= src[i];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t f = 0; f < n; ++f) {
    map[f] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < out[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor ew(EwKind kind, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  const bool direct = a.shape() == out_shape && b.shape() == out_shape;
  std::vector<std::size_t> ia, ib;
  if (!direct) {
    ia = broadcast_index(a.shape(), out_shape);
    ib = broadcast_index(b.shape(), out_shape);
  }
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[direct ? i : ia[i]];
    const double y = bd[direct ? i : ib[i]];
    switch (kind) {
      case EwKind::add: out[i] = x + y; break;
      case EwKind::sub: out[i] = x - y; break;
      case EwKind::hadamard: out[i] = x * y; break;
    }
  }
  Tensor result(out_shape, std::move(out));
  if (tracks({&a, &b})) {
    ImplPtr pa = a.shared_impl(), pb = b.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=, ia = std::move(ia), ib = std::move(ib)] {
      const double* g = po->grad.data();
      double* ga = grad_of(pa);
      double* gb = grad_of(pb);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ja = direct ? i : ia[i];
        const std::size_t jb = direct ? i : ib[i];
        switch (kind) {
          case EwKind::add:
            if (ga) ga[ja] += g[i];
            if (gb) gb[jb] += g[i];
            break;
          case EwKind::sub:
            if (ga) ga[ja] += g[i];
            if (gb) gb[jb] -= g[i];
            break;
          case EwKind::hadamard:
            if (ga) ga[ja] += g[i] * pb->data[jb];
            if (gb) gb[jb] += g[i] * pa->data[ja];
            break;
        }
      }
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) { return ew(EwKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return ew(EwKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return ew(EwKind::hadamard, a, b); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  Tensor result(a.shape(), std::move(out));
  if (tracks({&a})) {
    ImplPtr pa = a.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      double* ga = grad_of(pa);
      for (std::size_t i = 0; i < po->grad.size(); ++i) ga[i] += factor * po->grad[i];
    });
  }
  return result;
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += value;
  Tensor result(a.shape(), std::move(out));
  if (tracks({&a})) {
    ImplPtr pa = a.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      double* ga = grad_of(pa);
      for (std::size_t i = 0; i < po->grad.size(); ++i) ga[i] += po->grad[i];
    });
  }
  return result;
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xd[i]));
  Tensor result(x.shape(), std::move(out));
  if (tracks({&x})) {
    ImplPtr px = x.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      double* gx = grad_of(px);
      for (std::size_t i = 0; i < po->grad.size(); ++i) {
        const double s = po->data[i];
        gx[i] += po->grad[i] * s * (1.0 - s);
      }
    });
  }
  return result;
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
  Tensor result(x.shape(), std::move(out));
  if (tracks({&x})) {
    ImplPtr px = x.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      double* gx = grad_of(px);
      for (std::size_t i = 0; i < po->grad.size(); ++i) {
        const double t = po->data[i];
        gx[i] += po->grad[i] * (1.0 - t * t);
      }
    });
  }
  return result;
}

Tensor sqrt(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (xd[i] < 0.0) throw NumericalError("sqrt of negative value " + std::to_string(xd[i]));
    out[i] = std::sqrt(xd[i]);
  }
  Tensor result(x.shape(), std::move(out));
  if (tracks({&x})) {
    ImplPtr px = x.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      double* gx = grad_of(px);
      for (std::size_t i = 0; i < po->grad.size(); ++i)
        if (po->data[i] > 0.0) gx[i] += po->grad[i] * 0.5 / po->data[i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace {

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      if (a == 0.0) continue;
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C[k,n] += A[m,k]^T G[m,n]
void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      if (a == 0.0) continue;
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * g[j];
    }
  }
}

// C[m,k] += G[m,n] B[k,n]^T
void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b = B + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += g[j] * b[j];
      C[i * k + p] += acc;
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  std::size_t batch = 1, m, k, n;
  Shape out_shape;
  if (a.rank() == 2 && b.rank() == 2) {
    m = a.dim(0);
    k = a.dim(1);
    n = b.dim(1);
    if (b.dim(0) != k)
      throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    out_shape = {m, n};
  } else if (a.rank() == 3 && b.rank() == 3) {
    batch = a.dim(0);
    m = a.dim(1);
    k = a.dim(2);
    n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k)
      throw ShapeError("batched matmul mismatch: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    out_shape = {batch, m, n};
  } else {
    throw ShapeError("matmul expects rank-2 or rank-3 operands, got " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t s = 0; s < batch; ++s)
    gemm_nn(a.data().data() + s * m * k, b.data().data() + s * k * n, out.data() + s * m * n, m,
            k, n);
  Tensor result(out_shape, std::move(out));
  if (tracks({&a, &b})) {
    ImplPtr pa = a.shared_impl(), pb = b.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      double* ga = grad_of(pa);
      double* gb = grad_of(pb);
      for (std::size_t s = 0; s < batch; ++s) {
        const double* g = po->grad.data() + s * m * n;
        if (ga) gemm_nt(g, pb->data.data() + s * k * n, ga + s * m * k, m, k, n);
        if (gb) gemm_tn(pa->data.data() + s * m * k, g, gb + s * k * n, m, k, n);
      }
    });
  }
  return result;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute axes do not match rank of " + shape_str(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw ShapeError("invalid permutation for " + shape_str(x.shape()));
    seen[ax] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_stride(r);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = s;
    s *= x.dim(i);
  }
  const std::size_t n = x.numel();
  // map[flat_out] = flat_in
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t f = 0; f < n; ++f) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[axes[i]];
    map[f] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) break;
      idx[ax] = 0;
    }
  }
  std::vector<double> out(n);
  const auto xd = x.data();
  for (std::size_t f = 0; f < n; ++f) out[f] = xd[map[f]];
  Tensor result(out_shape, std::move(out));
  if (tracks({&x})) {
    ImplPtr px = x.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=, map = std::move(map)] {
      double* gx = grad_of(px);
      for (std::size_t f = 0; f < n; ++f) gx[map[f]] += po->grad[f];
    });
  }
  return result;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (tracks({&x})) {
    ImplPtr px = x.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      double* gx = grad_of(px);
      for (std::size_t i = 0; i < po->grad.size(); ++i) gx[i] += po->grad[i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d_same(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  if (x.rank() != 3 || kernels.rank() != 4 || bias.rank() != 1)
    throw ShapeError("conv2d_same expects x[C,H,W], kernels[O,C,kh,kw], bias[O]; got " +
                     shape_str(x.shape()) + ", " + shape_str(kernels.shape()) + ", " +
                     shape_str(bias.shape()));
  const std::size_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != cin || bias.dim(0) != cout)
    throw ShapeError("conv2d_same channel mismatch: x " + shape_str(x.shape()) + ", kernels " +
                     shape_str(kernels.shape()) + ", bias " + shape_str(bias.shape()));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ConfigError("conv2d_same requires odd kernel extents, got " + std::to_string(kh) + "x" +
                      std::to_string(kw));
  const long rh = static_cast<long>(kh / 2), rw = static_cast<long>(kw / 2);
  const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);

  // Visits every (output, input, kernel) tap inside the padded frame.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t u = 0; u < kh; ++u)
          for (std::size_t v = 0; v < kw; ++v) {
            const std::size_t kidx = ((o * cin + c) * kh + u) * kw + v;
            const long du = static_cast<long>(u) - rh, dv = static_cast<long>(v) - rw;
            for (long i = std::max(0L, -du); i < std::min(Hl, Hl - du); ++i)
              for (long j = std::max(0L, -dv); j < std::min(Wl, Wl - dv); ++j) {
                const std::size_t oidx = (o * H + i) * W + j;
                const std::size_t xidx = (c * H + (i + du)) * W + (j + dv);
                fn(oidx, xidx, kidx);
              }
          }
  };

  std::vector<double> out(cout * H * W);
  const auto bd = bias.data();
  for (std::size_t o = 0; o < cout; ++o)
    std::fill(out.begin() + o * H * W, out.begin() + (o + 1) * H * W, bd[o]);
  const auto xd = x.data();
  const auto kd = kernels.data();
  for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t ki) { out[oi] += kd[ki] * xd[xi]; });

  Tensor result({cout, H, W}, std::move(out));
  if (tracks({&x, &kernels, &bias})) {
    ImplPtr px = x.shared_impl(), pk = kernels.shared_impl(), pb = bias.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      const double* g = po->grad.data();
      double* gx = grad_of(px);
      double* gk = grad_of(pk);
      double* gb = grad_of(pb);
      if (gb)
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t p = 0; p < H * W; ++p) gb[o] += g[o * H * W + p];
      for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t ki) {
        if (gx) gx[xi] += g[oi] * pk->data[ki];
        if (gk) gk[ki] += g[oi] * px->data[xi];
      });
    });
  }
  return result;
}

Tensor conv1d_same(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  if (x.rank() != 2 || kernels.rank() != 3 || bias.rank() != 1)
    throw ShapeError("conv1d_same expects x[C,L], kernels[O,C,k], bias[O]; got " +
                     shape_str(x.shape()) + ", " + shape_str(kernels.shape()) + ", " +
                     shape_str(bias.shape()));
  const std::size_t cin = x.dim(0), L = x.dim(1);
  const std::size_t cout = kernels.dim(0), kw = kernels.dim(2);
  if (kernels.dim(1) != cin || bias.dim(0) != cout)
    throw ShapeError("conv1d_same channel mismatch: x " + shape_str(x.shape()) + ", kernels " +
                     shape_str(kernels.shape()) + ", bias " + shape_str(bias.shape()));
  if (kw % 2 == 0) throw ConfigError("conv1d_same requires an odd kernel width, got " + std::to_string(kw));
  const long r = static_cast<long>(kw / 2);
  const long Ll = static_cast<long>(L);

  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t v = 0; v < kw; ++v) {
          const std::size_t kidx = (o * cin + c) * kw + v;
          const long dv = static_cast<long>(v) - r;
          for (long j = std::max(0L, -dv); j < std::min(Ll, Ll - dv); ++j)
            fn(o * L + j, c * L + (j + dv), kidx);
        }
  };

  std::vector<double> out(cout * L);
  const auto bd = bias.data();
  for (std::size_t o = 0; o < cout; ++o) std::fill(out.begin() + o * L, out.begin() + (o + 1) * L, bd[o]);
  const auto xd = x.data();
  const auto kd = kernels.data();
  for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t ki) { out[oi] += kd[ki] * xd[xi]; });

  Tensor result({cout, L}, std::move(out));
  if (tracks({&x, &kernels, &bias})) {
    ImplPtr px = x.shared_impl(), pk = kernels.shared_impl(), pb = bias.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      const double* g = po->grad.data();
      double* gx = grad_of(px);
      double* gk = grad_of(pk);
      double* gb = grad_of(pb);
      if (gb)
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t j = 0; j < L; ++j) gb[o] += g[o * L + j];
      for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t ki) {
        if (gx) gx[xi] += g[oi] * pk->data[ki];
        if (gk) gk[ki] += g[oi] * px->data[xi];
      });
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Softmax and reductions

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = xd[base];
      for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, xd[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(xd[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= z;
    }
  Tensor result(x.shape(), std::move(out));
  if (tracks({&x})) {
    ImplPtr px = x.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      double* gx = grad_of(px);
      const double* g = po->grad.data();
      const double* y = po->data.data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.len * s.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < s.len; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t p = base + j * s.inner;
            gx[p] += y[p] * (g[p] - dot);
          }
        }
    });
  }
  return result;
}

Tensor reduce(ReduceKind kind, const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape = {1};
  const double factor = kind == ReduceKind::mean ? 1.0 / static_cast<double>(s.len) : 1.0;
  const auto xd = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.len; ++j)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += xd[(o * s.len + j) * s.inner + in];
  for (auto& v : out) v *= factor;
  Tensor result(out_shape, std::move(out));
  if (tracks({&x})) {
    ImplPtr px = x.shared_impl();
    TensorImpl* po = result.impl();
    attach(result, [=] {
      double* gx = grad_of(px);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < s.len; ++j)
          for (std::size_t in = 0; in < s.inner; ++in)
            gx[(o * s.len + j) * s.inner + in] += factor * po->grad[o * s.inner + in];
    });
  }
  return result;
}

Tensor sum(const Tensor& x, std::size_t axis) { return reduce(ReduceKind::sum, x, axis); }
Tensor mean(const Tensor& x, std::size_t axis) { return reduce(ReduceKind::mean, x, axis); }
Tensor sum_all(const Tensor& x) { return sum(reshape(x, {x.numel()}), 0); }
Tensor mean_all(const Tensor& x) { return mean(reshape(x, {x.numel()}), 0); }

// ---------------------------------------------------------------------------
// Row helpers

Tensor pad_rows(const Tensor& x, std::size_t extra_rows) {
  if (x.rank() == 0) throw ShapeError("pad_rows on rank-0 tensor");
  const std::size_t row = x.numel() / x.dim(0);
  Shape out_shape = x.shape();
  out_shape[0] += extra_rows;
  std::vector<double> out(shape_numel(out_shape), 0.0);
  std::copy(x.data().begin(), x.data().end(), out.begin());
  Tensor result(out_shape, std::move(out));
  if (tracks({&x})) {
    ImplPtr px = x.shared_impl();
    TensorImpl* po = result.impl();
    const std::size_t n = x.dim(0) * row;
    attach(result, [=] {
      double* gx = grad_of(px);
      for (std::size_t i = 0; i < n; ++i) gx[i] += po->grad[i];
    });
  }
  return result;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() == 0 || count == 0 || begin + count > x.dim(0))
    throw ShapeError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(x.shape()));
  const std::size_t row = x.numel() / x.dim(0);
  Shape out_shape = x.shape();
  out_shape[0] = count;
  const auto xd = x.data();
  std::vector<double> out(xd.begin() + begin * row, xd.begin() + (begin + count) * row);
  Tensor result(out_shape, std::move(out));
  if (tracks({&x})) {
    ImplPtr px = x.shared_impl();
    TensorImpl* po = result.impl();
    const std::size_t off = begin * row;
    attach(result, [=] {
      double* gx = grad_of(px);
      for (std::size_t i = 0; i < po->grad.size(); ++i) gx[off + i] += po->grad[i];
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t i = 0; ok && i < ref.size(); ++i)
      if (i != axis && p.dim(i) != ref[i]) ok = false;
    if (!ok) throw ShapeError("concat shape mismatch: " + shape_str(ref) + " vs " + shape_str(p.shape()));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  const std::size_t out_chunk = out_shape[axis] * inner;

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().begin() + o * chunk, chunk, out.begin() + o * out_chunk + off);
    off += chunk;
  }
  Tensor result(out_shape, std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || tracks({&p});
  if (any) {
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) impls.push_back(p.shared_impl());
    TensorImpl* po = result.impl();
    attach(result, [=] {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        double* gp = grad_of(impls[k]);
        if (!gp) continue;
        const std::size_t chunk = impls[k]->shape[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += po->grad[o * out_chunk + offsets[k] + i];
      }
    });
  }
  return result;
}

}  // namespace apslstm
