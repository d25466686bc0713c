#pragma once

// Dense N x C x H x W tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap shared handle. Values produced by ops are immutable;
// only leaves (parameters, inputs, buffers) expose mutable storage. Each op
// output that depends on a grad-requiring input records its parents and a
// backward closure; backward() walks that graph in reverse topological order
// and accumulates (+=) into every reachable gradient buffer.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace godp {

enum class Precision { kFloat32, kFloat64 };

std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view name);

template <typename T>
constexpr Precision precision_of();
template <>
constexpr Precision precision_of<float>() {
  return Precision::kFloat32;
}
template <>
constexpr Precision precision_of<double>() {
  return Precision::kFloat64;
}

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  std::size_t index(int in, int ic, int ih, int iw) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw;
  }
  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  // Throws DimensionError unless values.size() == shape.numel().
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  // Writable storage is offered only for tape-free values (leaves).
  std::span<T> mutable_data();

  T item() const;
  T at(int n, int c, int h, int w) const { return impl_->data[impl_->shape.index(n, c, h, w)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return !impl_->backward_fn; }
  bool has_grad() const { return !impl_->grad.empty(); }
  // Empty span when no gradient has reached this tensor.
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad();

  // Tape-free copy of the values.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  Impl* impl() const { return impl_.get(); }
  const std::shared_ptr<Impl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

// Runs reverse-mode accumulation from a single-element tensor.
// Throws UsageError if the value is not scalar or carries no tape.
template <typename T>
void backward(const Tensor<T>& loss);

// Thread-local switch: with recording off, ops return plain values.
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

// When on, every op rejects non-finite outputs with NumericError.
bool checked_mode();
void set_checked_mode(bool on);

namespace autograd {

template <typename T>
using BackwardFn = std::function<void(detail::TensorImpl<T>& self)>;

// Wraps freshly computed values into an op result. The tape node is recorded
// only if recording is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<Tensor<T>> inputs, BackwardFn<T> fn,
                      std::string_view op_name);

}  // namespace autograd

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace godp
