#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace apslstm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool is_leaf = true;

  void ensure_grad();
};

/// Dense row-major double tensor with shared ownership of its storage.
///
/// Values are treated as immutable once a tensor has been used as an op
/// input; only leaves (parameters) are updated in place by the optimizer.
/// Copying a Tensor copies the handle, not the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor from(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // In-place access for leaves: parameter updates, checkpoint loading, tests.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t flat) const { return impl_->data[flat]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return !impl_->grad.empty(); }
  // Zero-filled view when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  // Same values, no graph membership, independent storage.
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared_impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Tape of recorded operations for reverse-mode differentiation.
///
/// Nodes are appended in forward order; backward walks them strictly in
/// reverse. The graph keeps every intermediate alive until clear().
class DiffGraph {
 public:
  void record(std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn);

  // Populates grads of everything reachable from `loss`. Intermediate grads are
  // reset at the start of each call; leaf grads accumulate across calls.
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
};

// One graph per thread; ops record onto the calling thread's graph.
DiffGraph& current_graph();
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

void backward(const Tensor& loss);

// ---- elementwise (b broadcasts numpy-style: missing or size-1 axes repeat) --
enum class EwKind { add, sub, hadamard };

Tensor ew(EwKind kind, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// Gradient is taken as zero where the value is zero.
Tensor sqrt(const Tensor& x);

// [m,k]x[k,n] or batched [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape shape);

// Zero-padded stride-1 cross-correlation; kernel extents must be odd.
// x: [C_in,H,W], kernels: [C_out,C_in,kh,kw], bias: [C_out].
Tensor conv2d_same(const Tensor& x, const Tensor& kernels, const Tensor& bias);
// x: [C_in,L], kernels: [C_out,C_in,k], bias: [C_out].
Tensor conv1d_same(const Tensor& x, const Tensor& kernels, const Tensor& bias);

Tensor softmax(const Tensor& x, std::size_t axis);

enum class ReduceKind { sum, mean };
Tensor reduce(ReduceKind kind, const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Axis-0 helpers used for period folding and per-step access.
Tensor pad_rows(const Tensor& x, std::size_t extra_rows);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

}  // namespace apslstm
