#include "godp/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "godp/errors.hpp"

namespace godp {

std::string_view precision_name(Precision p) {
  return p == Precision::kFloat32 ? "float32" : "float64";
}

Precision parse_precision(std::string_view name) {
  if (name == "float32" || name == "f32" || name == "32") return Precision::kFloat32;
  if (name == "float64" || name == "f64" || name == "64") return Precision::kFloat64;
  throw ConfigError("unknown precision '" + std::string(name) + "' (expected float32 or float64)");
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) +
         ")";
}

namespace {

thread_local bool g_grad_enabled = true;
bool g_checked_mode = false;

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool checked_mode() { return g_checked_mode; }
void set_checked_mode(bool on) { g_checked_mode = on; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw DimensionError("negative extent in shape " + shape.str());
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = shape;
  impl->data.assign(shape.numel(), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (values.size() != shape.numel()) {
    throw DimensionError("tensor " + shape.str() + " needs " + std::to_string(shape.numel()) + " values, got " +
                         std::to_string(values.size()));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!is_leaf()) throw UsageError("cannot mutate the values of a taped op result");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor " + shape().str());
  return impl_->data[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), impl_->data, false);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw UsageError("backward() on an undefined tensor");
  if (loss.numel() != 1) throw UsageError("backward() needs a single-element loss, got " + loss.shape().str());
  if (!loss.requires_grad()) throw UsageError("backward() on a value that was not produced by a taped forward pass");

  using Impl = detail::TensorImpl<T>;
  // Iterative post-order DFS; parents are visited in argument order so the
  // traversal is deterministic.
  std::vector<Impl*> order;
  std::unordered_set<const Impl*> seen;
  struct Frame {
    Impl* node;
    std::size_t next;
  };
  std::vector<Frame> stack{{loss.impl(), 0}};
  seen.insert(loss.impl());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next < top.node->parents.size()) {
      Impl* p = top.node->parents[top.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  loss.impl()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

namespace autograd {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<Tensor<T>> inputs, BackwardFn<T> fn,
                      std::string_view op_name) {
  if (values.size() != shape.numel()) {
    throw DimensionError(std::string(op_name) + ": produced " + std::to_string(values.size()) +
                         " values for shape " + shape.str());
  }
  if (g_checked_mode) {
    for (T v : values) {
      if (!std::isfinite(v)) throw NumericError(std::string(op_name) + ": non-finite output");
    }
  }
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = shape;
  impl->data = std::move(values);
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (any && g_grad_enabled) {
    impl->requires_grad = true;
    for (auto& in : inputs) {
      if (in.defined()) impl->parents.push_back(in.impl_ptr());
    }
    impl->backward_fn = std::move(fn);
  }
  return Tensor<T>(std::move(impl));
}

template Tensor<float> make_result(Shape, std::vector<float>, std::vector<Tensor<float>>, BackwardFn<float>,
                                   std::string_view);
template Tensor<double> make_result(Shape, std::vector<double>, std::vector<Tensor<double>>, BackwardFn<double>,
                                    std::string_view);

}  // namespace autograd

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace godp
