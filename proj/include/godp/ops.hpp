#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "godp/tensor.hpp"

namespace godp {

// Flat source index of the maximum of every 2x2 pooling window.
struct SwitchMap {
  Shape pooled;
  Shape source;
  std::vector<std::uint32_t> index;

  // Every stored index lies inside its own 2x2 window.
  bool valid() const;
};

template <typename T>
struct PoolResult {
  Tensor<T> value;
  SwitchMap switches;
};

enum class BatchNormMode { kTrain, kEval };

struct BatchNormOptions {
  BatchNormMode mode = BatchNormMode::kTrain;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double epsilon = 1e-5;
};

// Cross-correlation with zero padding. kernel is (c_out, c_in, kh, kw);
// bias may be undefined or shaped (1, c_out, 1, 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride, int pad);

// Transposed convolution. kernel is (c_in, c_out, kh, kw), i.e. the same
// array a conv2d mapping c_out -> c_in would use.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride, int pad);

// 2x2, stride 2. Ties resolve to the smallest flat index.
template <typename T>
PoolResult<T> maxpool2(const Tensor<T>& input);

template <typename T>
Tensor<T> unpool2(const Tensor<T>& input, const SwitchMap& switches);

// scale/shift are (1, c, 1, 1); running_mean/running_var are the same shape
// and are updated in place in train mode.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                    Tensor<T>& running_mean, Tensor<T>& running_var, const BatchNormOptions& options);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// Channel stacking in argument order; n, h, w must agree.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

// Align-corners bilinear interpolation to (2h, 2w).
template <typename T>
Tensor<T> bilinear_upsample2(const Tensor<T>& input);

// Per-pixel softmax over channels.
template <typename T>
Tensor<T> channel_softmax(const Tensor<T>& input);

// Scalar sum of all elements.
template <typename T>
Tensor<T> sum(const Tensor<T>& input);

// Scalar sum of input * weights with constant weights; handy for projecting
// a tensor onto a random direction in gradient checks.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& input, std::span<const T> weights);

// Copy of channels [first, first + count).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int first, int count);

// Row-major GEMM helpers shared by the convolution kernels.
namespace gemm {

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void nn(int m, int n, int k, const T* a, const T* b, T* c);

// C[k x n] += A^T * B with A[m x k], B[m x n]
template <typename T>
void tn(int m, int n, int k, const T* a, const T* b, T* c);

// C[m x k] += A * B^T with A[m x n], B[k x n]
template <typename T>
void nt(int m, int n, int k, const T* a, const T* b, T* c);

}  // namespace gemm

}  // namespace godp
