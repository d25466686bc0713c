#include "godp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "godp/errors.hpp"
#include "godp/simd/kernels.hpp"

namespace godp {

bool SwitchMap::valid() const {
  if (index.size() != pooled.numel()) return false;
  for (int n = 0; n < pooled.n; ++n) {
    for (int c = 0; c < pooled.c; ++c) {
      for (int y = 0; y < pooled.h; ++y) {
        for (int x = 0; x < pooled.w; ++x) {
          const std::uint32_t s = index[pooled.index(n, c, y, x)];
          bool inside = false;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              inside = inside || s == source.index(n, c, 2 * y + dy, 2 * x + dx);
            }
          }
          if (!inside) return false;
        }
      }
    }
  }
  return true;
}

namespace gemm {

template <typename T>
void nn(int m, int n, int k, const T* a, const T* b, T* c) {
  const auto& kt = simd::kernels<T>();
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) kt.axpy(n, arow[p], b + static_cast<std::size_t>(p) * n, crow);
  }
}

template <typename T>
void tn(int m, int n, int k, const T* a, const T* b, T* c) {
  const auto& kt = simd::kernels<T>();
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    const T* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) kt.axpy(n, arow[p], brow, c + static_cast<std::size_t>(p) * n);
  }
}

template <typename T>
void nt(int m, int n, int k, const T* a, const T* b, T* c) {
  const auto& kt = simd::kernels<T>();
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * n;
    T* crow = c + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) crow[j] += kt.dot(n, arow, b + static_cast<std::size_t>(j) * n);
  }
}

template void nn<float>(int, int, int, const float*, const float*, float*);
template void nn<double>(int, int, int, const double*, const double*, double*);
template void tn<float>(int, int, int, const float*, const float*, float*);
template void tn<double>(int, int, int, const double*, const double*, double*);
template void nt<float>(int, int, int, const float*, const float*, float*);
template void nt<double>(int, int, int, const double*, const double*, double*);

}  // namespace gemm

namespace {

using std::size_t;

struct ConvGeometry {
  int channels;  // channels of the "image" side
  int height, width;
  int kh, kw;
  int stride, pad;
  int out_h, out_w;  // column grid extents

  size_t rows() const { return static_cast<size_t>(channels) * kh * kw; }
  size_t cols() const { return static_cast<size_t>(out_h) * out_w; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((static_cast<size_t>(c) * g.kh + ki) * g.kw + kj) * g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          T* dst = row + static_cast<size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = img + (static_cast<size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* img) {
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((static_cast<size_t>(c) * g.kh + ki) * g.kw + kj) * g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          const T* src = row + static_cast<size_t>(oy) * g.out_w;
          T* dst = img + (static_cast<size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_geometry(const char* op, int stride, int pad) {
  if (stride < 1) throw DimensionError(std::string(op) + ": stride must be >= 1");
  if (pad < 0) throw DimensionError(std::string(op) + ": pad must be >= 0");
}

template <typename T>
void check_bias(const char* op, const Tensor<T>& bias, int channels) {
  if (bias.defined() && bias.numel() != static_cast<size_t>(channels)) {
    throw DimensionError(std::string(op) + ": bias has " + std::to_string(bias.numel()) + " values, expected " +
                         std::to_string(channels));
  }
}

template <typename T>
void add_bias(const Tensor<T>& bias, int n, int c, size_t plane, std::vector<T>& out) {
  if (!bias.defined()) return;
  const auto b = bias.data();
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      T* p = out.data() + (static_cast<size_t>(in) * c + ic) * plane;
      const T v = b[ic];
      for (size_t i = 0; i < plane; ++i) p[i] += v;
    }
  }
}

template <typename T>
void bias_backward(detail::TensorImpl<T>* bias, const std::vector<T>& dy, int n, int c, size_t plane) {
  if (bias == nullptr || !bias->requires_grad) return;
  auto& db = bias->ensure_grad();
  const auto& kt = simd::kernels<T>();
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) db[ic] += kt.sum(plane, dy.data() + (static_cast<size_t>(in) * c + ic) * plane);
  }
}

template <typename T>
std::shared_ptr<detail::TensorImpl<T>> impl_or_null(const Tensor<T>& t) {
  return t.defined() ? t.impl_ptr() : nullptr;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride, int pad) {
  check_geometry("conv2d", stride, pad);
  const Shape xs = input.shape();
  const Shape ks = kernel.shape();
  if (ks.c != xs.c) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(ks.c) + " input channels, input " + xs.str());
  }
  check_bias("conv2d", bias, ks.n);
  const int out_h = (xs.h + 2 * pad - ks.h) / stride + 1;
  const int out_w = (xs.w + 2 * pad - ks.w) / stride + 1;
  if (xs.h + 2 * pad - ks.h < 0 || xs.w + 2 * pad - ks.w < 0 || out_h <= 0 || out_w <= 0) {
    throw DimensionError("conv2d: non-positive output extent for input " + xs.str() + " kernel " + ks.str());
  }
  const ConvGeometry g{xs.c, xs.h, xs.w, ks.h, ks.w, stride, pad, out_h, out_w};
  const Shape os{xs.n, ks.n, out_h, out_w};
  std::vector<T> out(os.numel(), T(0));
  std::vector<T> col(g.rows() * g.cols());
  const size_t in_stride = static_cast<size_t>(xs.c) * xs.h * xs.w;
  const size_t out_stride = static_cast<size_t>(ks.n) * g.cols();
  for (int n = 0; n < xs.n; ++n) {
    im2col(g, input.data().data() + n * in_stride, col.data());
    gemm::nn<T>(ks.n, static_cast<int>(g.cols()), static_cast<int>(g.rows()), kernel.data().data(), col.data(),
                out.data() + n * out_stride);
  }
  add_bias(bias, os.n, os.c, g.cols(), out);

  auto x_impl = input.impl_ptr();
  auto k_impl = kernel.impl_ptr();
  auto b_impl = impl_or_null(bias);
  return autograd::make_result<T>(
      os, std::move(out), {input, kernel, bias},
      [x_impl, k_impl, b_impl, g, os, in_stride, out_stride](detail::TensorImpl<T>& self) {
        const std::vector<T>& dy = self.grad;
        const int m = os.c;
        const int cols = static_cast<int>(g.cols());
        const int rows = static_cast<int>(g.rows());
        std::vector<T> col(g.rows() * g.cols());
        for (int n = 0; n < os.n; ++n) {
          const T* dyn = dy.data() + n * out_stride;
          if (k_impl->requires_grad) {
            im2col(g, x_impl->data.data() + n * in_stride, col.data());
            gemm::nt<T>(m, cols, rows, dyn, col.data(), k_impl->ensure_grad().data());
          }
          if (x_impl->requires_grad) {
            std::fill(col.begin(), col.end(), T(0));
            gemm::tn<T>(m, cols, rows, k_impl->data.data(), dyn, col.data());
            col2im(g, col.data(), x_impl->ensure_grad().data() + n * in_stride);
          }
        }
        bias_backward(b_impl.get(), dy, os.n, os.c, g.cols());
      },
      "conv2d");
}

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride, int pad) {
  check_geometry("deconv2d", stride, pad);
  const Shape xs = input.shape();
  const Shape ks = kernel.shape();  // (c_in, c_out, kh, kw)
  if (ks.n != xs.c) {
    throw DimensionError("deconv2d: kernel expects " + std::to_string(ks.n) + " input channels, input " + xs.str());
  }
  check_bias("deconv2d", bias, ks.c);
  const int out_h = (xs.h - 1) * stride - 2 * pad + ks.h;
  const int out_w = (xs.w - 1) * stride - 2 * pad + ks.w;
  if (out_h <= 0 || out_w <= 0) {
    throw DimensionError("deconv2d: non-positive output extent for input " + xs.str() + " kernel " + ks.str());
  }
  // The output plays the role of the conv "image"; the input grid is the
  // column grid.
  const ConvGeometry g{ks.c, out_h, out_w, ks.h, ks.w, stride, pad, xs.h, xs.w};
  const Shape os{xs.n, ks.c, out_h, out_w};
  std::vector<T> out(os.numel(), T(0));
  std::vector<T> col(g.rows() * g.cols());
  const size_t in_stride = static_cast<size_t>(xs.c) * xs.h * xs.w;
  const size_t out_stride = static_cast<size_t>(os.c) * os.h * os.w;
  for (int n = 0; n < xs.n; ++n) {
    std::fill(col.begin(), col.end(), T(0));
    gemm::tn<T>(xs.c, static_cast<int>(g.cols()), static_cast<int>(g.rows()), kernel.data().data(),
                input.data().data() + n * in_stride, col.data());
    col2im(g, col.data(), out.data() + n * out_stride);
  }
  add_bias(bias, os.n, os.c, os.plane(), out);

  auto x_impl = input.impl_ptr();
  auto k_impl = kernel.impl_ptr();
  auto b_impl = impl_or_null(bias);
  return autograd::make_result<T>(
      os, std::move(out), {input, kernel, bias},
      [x_impl, k_impl, b_impl, g, os, xs, in_stride, out_stride](detail::TensorImpl<T>& self) {
        const std::vector<T>& dy = self.grad;
        const int cols = static_cast<int>(g.cols());
        const int rows = static_cast<int>(g.rows());
        std::vector<T> col(g.rows() * g.cols());
        for (int n = 0; n < os.n; ++n) {
          if (!x_impl->requires_grad && !k_impl->requires_grad) break;
          im2col(g, dy.data() + n * out_stride, col.data());
          if (x_impl->requires_grad) {
            gemm::nn<T>(xs.c, cols, rows, k_impl->data.data(), col.data(),
                        x_impl->ensure_grad().data() + n * in_stride);
          }
          if (k_impl->requires_grad) {
            gemm::nt<T>(xs.c, cols, rows, x_impl->data.data() + n * in_stride, col.data(),
                        k_impl->ensure_grad().data());
          }
        }
        bias_backward(b_impl.get(), dy, os.n, os.c, os.plane());
      },
      "deconv2d");
}

template <typename T>
PoolResult<T> maxpool2(const Tensor<T>& input) {
  const Shape xs = input.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) throw DimensionError("maxpool2: odd spatial extent in " + xs.str());
  const Shape ps{xs.n, xs.c, xs.h / 2, xs.w / 2};
  SwitchMap sw{ps, xs, std::vector<std::uint32_t>(ps.numel())};
  std::vector<T> out(ps.numel());
  const auto x = input.data();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      for (int y = 0; y < ps.h; ++y) {
        for (int xw = 0; xw < ps.w; ++xw) {
          size_t best = xs.index(n, c, 2 * y, 2 * xw);
          const size_t candidates[3] = {best + 1, xs.index(n, c, 2 * y + 1, 2 * xw),
                                        xs.index(n, c, 2 * y + 1, 2 * xw) + 1};
          for (size_t cand : candidates) {
            if (x[cand] > x[best]) best = cand;
          }
          const size_t o = ps.index(n, c, y, xw);
          out[o] = x[best];
          sw.index[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  auto x_impl = input.impl_ptr();
  auto idx = std::make_shared<std::vector<std::uint32_t>>(sw.index);
  Tensor<T> value = autograd::make_result<T>(
      ps, std::move(out), {input},
      [x_impl, idx](detail::TensorImpl<T>& self) {
        auto& dx = x_impl->ensure_grad();
        for (size_t i = 0; i < idx->size(); ++i) dx[(*idx)[i]] += self.grad[i];
      },
      "maxpool2");
  return {std::move(value), std::move(sw)};
}

template <typename T>
Tensor<T> unpool2(const Tensor<T>& input, const SwitchMap& switches) {
  if (!(input.shape() == switches.pooled)) {
    throw DimensionError("unpool2: input " + input.shape().str() + " does not match switches " +
                         switches.pooled.str());
  }
  std::vector<T> out(switches.source.numel(), T(0));
  const auto x = input.data();
  for (size_t i = 0; i < switches.index.size(); ++i) out[switches.index[i]] = x[i];
  auto x_impl = input.impl_ptr();
  auto idx = std::make_shared<std::vector<std::uint32_t>>(switches.index);
  return autograd::make_result<T>(
      switches.source, std::move(out), {input},
      [x_impl, idx](detail::TensorImpl<T>& self) {
        auto& dx = x_impl->ensure_grad();
        for (size_t i = 0; i < idx->size(); ++i) dx[i] += self.grad[(*idx)[i]];
      },
      "unpool2");
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                    Tensor<T>& running_mean, Tensor<T>& running_var, const BatchNormOptions& options) {
  const Shape xs = input.shape();
  const size_t c = static_cast<size_t>(xs.c);
  if (scale.numel() != c || shift.numel() != c || running_mean.numel() != c || running_var.numel() != c) {
    throw DimensionError("batchnorm: parameter length does not match " + std::to_string(xs.c) + " channels");
  }
  const size_t plane = xs.plane();
  const size_t count = static_cast<size_t>(xs.n) * plane;
  const auto x = input.data();
  const auto gamma = scale.data();
  const auto beta = shift.data();
  std::vector<T> mean(c), inv_std(c);
  const bool train = options.mode == BatchNormMode::kTrain;
  if (train) {
    if (count == 0) throw DimensionError("batchnorm: empty batch");
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const T* p = x.data() + (n * c + ch) * plane;
        for (size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const T* p = x.data() + (n * c + ch) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + options.epsilon));
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      rm[ch] = static_cast<T>(options.momentum * rm[ch] + (1.0 - options.momentum) * mu);
      rv[ch] = static_cast<T>(options.momentum * rv[ch] + (1.0 - options.momentum) * unbiased);
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + options.epsilon));
    }
  }

  std::vector<T> xhat(xs.numel());
  std::vector<T> out(xs.numel());
  const auto& kt = simd::kernels<T>();
  for (int n = 0; n < xs.n; ++n) {
    for (size_t ch = 0; ch < c; ++ch) {
      const size_t off = (n * c + ch) * plane;
      kt.affine(plane, inv_std[ch], -mean[ch] * inv_std[ch], x.data() + off, xhat.data() + off);
      kt.affine(plane, gamma[ch], beta[ch], xhat.data() + off, out.data() + off);
    }
  }

  auto x_impl = input.impl_ptr();
  auto g_impl = scale.impl_ptr();
  auto b_impl = shift.impl_ptr();
  auto xhat_ptr = std::make_shared<std::vector<T>>(std::move(xhat));
  return autograd::make_result<T>(
      xs, std::move(out), {input, scale, shift},
      [x_impl, g_impl, b_impl, xhat_ptr, inv_std, xs, plane, count, train](detail::TensorImpl<T>& self) {
        const std::vector<T>& dy = self.grad;
        const std::vector<T>& xh = *xhat_ptr;
        const size_t c = static_cast<size_t>(xs.c);
        const auto& kt = simd::kernels<T>();
        for (size_t ch = 0; ch < c; ++ch) {
          T sum_dy = 0;
          T sum_dy_xhat = 0;
          for (int n = 0; n < xs.n; ++n) {
            const size_t off = (n * c + ch) * plane;
            sum_dy += kt.sum(plane, dy.data() + off);
            sum_dy_xhat += kt.dot(plane, dy.data() + off, xh.data() + off);
          }
          if (g_impl->requires_grad) g_impl->ensure_grad()[ch] += sum_dy_xhat;
          if (b_impl->requires_grad) b_impl->ensure_grad()[ch] += sum_dy;
          if (!x_impl->requires_grad) continue;
          auto& dx = x_impl->ensure_grad();
          const T gamma = g_impl->data[ch];
          const T k = gamma * inv_std[ch];
          for (int n = 0; n < xs.n; ++n) {
            const size_t off = (n * c + ch) * plane;
            if (train) {
              const T inv_count = T(1) / static_cast<T>(count);
              const T mean_dy = sum_dy * inv_count;
              const T mean_dy_xhat = sum_dy_xhat * inv_count;
              for (size_t i = 0; i < plane; ++i) {
                dx[off + i] += k * (dy[off + i] - mean_dy - xh[off + i] * mean_dy_xhat);
              }
            } else {
              kt.axpy(plane, k, dy.data() + off, dx.data() + off);
            }
          }
        }
      },
      "batchnorm");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  std::vector<T> out(input.numel());
  simd::kernels<T>().relu(out.size(), input.data().data(), out.data());
  auto x_impl = input.impl_ptr();
  return autograd::make_result<T>(
      input.shape(), std::move(out), {input},
      [x_impl](detail::TensorImpl<T>& self) {
        simd::kernels<T>().relu_backward(self.grad.size(), x_impl->data.data(), self.grad.data(),
                                         x_impl->ensure_grad().data());
      },
      "relu");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) throw DimensionError("add: " + a.shape().str() + " vs " + b.shape().str());
  std::vector<T> out(a.data().begin(), a.data().end());
  simd::kernels<T>().accumulate(out.size(), b.data().data(), out.data());
  auto a_impl = a.impl_ptr();
  auto b_impl = b.impl_ptr();
  return autograd::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [a_impl, b_impl](detail::TensorImpl<T>& self) {
        const auto& kt = simd::kernels<T>();
        if (a_impl->requires_grad) kt.accumulate(self.grad.size(), self.grad.data(), a_impl->ensure_grad().data());
        if (b_impl->requires_grad) kt.accumulate(self.grad.size(), self.grad.data(), b_impl->ensure_grad().data());
      },
      "add");
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw DimensionError("concat_channels: " + s.str() + " incompatible with " + first.str());
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const size_t plane = os.plane();
  std::vector<T> out(os.numel());
  for (int n = 0; n < os.n; ++n) {
    size_t dst = static_cast<size_t>(n) * channels * plane;
    for (const auto& p : parts) {
      const size_t len = static_cast<size_t>(p.shape().c) * plane;
      const T* src = p.data().data() + static_cast<size_t>(n) * len;
      std::copy(src, src + len, out.begin() + static_cast<std::ptrdiff_t>(dst));
      dst += len;
    }
  }
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl_ptr());
  return autograd::make_result<T>(
      os, std::move(out), parts,
      [impls, os, plane](detail::TensorImpl<T>& self) {
        const auto& kt = simd::kernels<T>();
        for (int n = 0; n < os.n; ++n) {
          size_t src = static_cast<size_t>(n) * os.c * plane;
          for (const auto& p : impls) {
            const size_t len = static_cast<size_t>(p->shape.c) * plane;
            if (p->requires_grad) kt.accumulate(len, self.grad.data() + src, p->ensure_grad().data() + n * len);
            src += len;
          }
        }
      },
      "concat_channels");
}

namespace {

// Align-corners source coordinate for output index i of an axis of length
// 2 * in_len.
struct Tap {
  int lo, hi;
  double frac;
};

std::vector<Tap> upsample_taps(int in_len) {
  const int out_len = 2 * in_len;
  std::vector<Tap> taps(out_len);
  for (int i = 0; i < out_len; ++i) {
    const double src = in_len > 1 ? static_cast<double>(i) * (in_len - 1) / (out_len - 1) : 0.0;
    int lo = static_cast<int>(std::floor(src));
    lo = std::clamp(lo, 0, in_len - 1);
    const int hi = std::min(lo + 1, in_len - 1);
    taps[i] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample2(const Tensor<T>& input) {
  const Shape xs = input.shape();
  const Shape os{xs.n, xs.c, 2 * xs.h, 2 * xs.w};
  const auto ty = upsample_taps(xs.h);
  const auto tx = upsample_taps(xs.w);
  std::vector<T> out(os.numel());
  const auto x = input.data();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const T* src = x.data() + xs.index(n, c, 0, 0);
      T* dst = out.data() + os.index(n, c, 0, 0);
      for (int i = 0; i < os.h; ++i) {
        const Tap& a = ty[i];
        for (int j = 0; j < os.w; ++j) {
          const Tap& b = tx[j];
          const double top = src[a.lo * xs.w + b.lo] * (1.0 - b.frac) + src[a.lo * xs.w + b.hi] * b.frac;
          const double bot = src[a.hi * xs.w + b.lo] * (1.0 - b.frac) + src[a.hi * xs.w + b.hi] * b.frac;
          dst[i * os.w + j] = static_cast<T>(top * (1.0 - a.frac) + bot * a.frac);
        }
      }
    }
  }
  auto x_impl = input.impl_ptr();
  return autograd::make_result<T>(
      os, std::move(out), {input},
      [x_impl, xs, os, ty, tx](detail::TensorImpl<T>& self) {
        auto& dx = x_impl->ensure_grad();
        for (int n = 0; n < xs.n; ++n) {
          for (int c = 0; c < xs.c; ++c) {
            T* dst = dx.data() + xs.index(n, c, 0, 0);
            const T* g = self.grad.data() + os.index(n, c, 0, 0);
            for (int i = 0; i < os.h; ++i) {
              const Tap& a = ty[i];
              for (int j = 0; j < os.w; ++j) {
                const Tap& b = tx[j];
                const double v = g[i * os.w + j];
                dst[a.lo * xs.w + b.lo] += static_cast<T>(v * (1.0 - a.frac) * (1.0 - b.frac));
                dst[a.lo * xs.w + b.hi] += static_cast<T>(v * (1.0 - a.frac) * b.frac);
                dst[a.hi * xs.w + b.lo] += static_cast<T>(v * a.frac * (1.0 - b.frac));
                dst[a.hi * xs.w + b.hi] += static_cast<T>(v * a.frac * b.frac);
              }
            }
          }
        }
      },
      "bilinear_upsample2");
}

template <typename T>
Tensor<T> channel_softmax(const Tensor<T>& input) {
  const Shape xs = input.shape();
  const size_t plane = xs.plane();
  const auto x = input.data();
  std::vector<T> out(xs.numel());
  for (int n = 0; n < xs.n; ++n) {
    const size_t base = static_cast<size_t>(n) * xs.c * plane;
    for (size_t p = 0; p < plane; ++p) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < xs.c; ++c) mx = std::max(mx, x[base + c * plane + p]);
      T denom = 0;
      for (int c = 0; c < xs.c; ++c) {
        const T e = std::exp(x[base + c * plane + p] - mx);
        out[base + c * plane + p] = e;
        denom += e;
      }
      for (int c = 0; c < xs.c; ++c) out[base + c * plane + p] /= denom;
    }
  }
  auto x_impl = input.impl_ptr();
  return autograd::make_result<T>(
      xs, out, {input},
      [x_impl, xs, plane, probs = out](detail::TensorImpl<T>& self) {
        auto& dx = x_impl->ensure_grad();
        const auto& dy = self.grad;
        for (int n = 0; n < xs.n; ++n) {
          const size_t base = static_cast<size_t>(n) * xs.c * plane;
          for (size_t p = 0; p < plane; ++p) {
            T inner = 0;
            for (int c = 0; c < xs.c; ++c) inner += dy[base + c * plane + p] * probs[base + c * plane + p];
            for (int c = 0; c < xs.c; ++c) {
              const size_t i = base + c * plane + p;
              dx[i] += probs[i] * (dy[i] - inner);
            }
          }
        }
      },
      "channel_softmax");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  const T total = simd::kernels<T>().sum(input.numel(), input.data().data());
  auto x_impl = input.impl_ptr();
  return autograd::make_result<T>(
      Shape{1, 1, 1, 1}, {total}, {input},
      [x_impl](detail::TensorImpl<T>& self) {
        auto& dx = x_impl->ensure_grad();
        const T g = self.grad[0];
        for (auto& v : dx) v += g;
      },
      "sum");
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& input, std::span<const T> weights) {
  if (weights.size() != input.numel()) throw DimensionError("weighted_sum: weight count mismatch");
  const T total = simd::kernels<T>().dot(input.numel(), input.data().data(), weights.data());
  auto x_impl = input.impl_ptr();
  std::vector<T> w(weights.begin(), weights.end());
  return autograd::make_result<T>(
      Shape{1, 1, 1, 1}, {total}, {input},
      [x_impl, w = std::move(w)](detail::TensorImpl<T>& self) {
        simd::kernels<T>().axpy(w.size(), self.grad[0], w.data(), x_impl->ensure_grad().data());
      },
      "weighted_sum");
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int first, int count) {
  const Shape xs = input.shape();
  if (first < 0 || count < 0 || first + count > xs.c) {
    throw DimensionError("slice_channels: [" + std::to_string(first) + ", " + std::to_string(first + count) +
                         ") outside " + xs.str());
  }
  const Shape os{xs.n, count, xs.h, xs.w};
  const size_t plane = xs.plane();
  std::vector<T> out(os.numel());
  for (int n = 0; n < xs.n; ++n) {
    const T* src = input.data().data() + xs.index(n, first, 0, 0);
    std::copy(src, src + count * plane, out.begin() + static_cast<std::ptrdiff_t>(os.index(n, 0, 0, 0)));
  }
  auto x_impl = input.impl_ptr();
  return autograd::make_result<T>(
      os, std::move(out), {input},
      [x_impl, xs, os, first, plane](detail::TensorImpl<T>& self) {
        auto& dx = x_impl->ensure_grad();
        for (int n = 0; n < xs.n; ++n) {
          simd::kernels<T>().accumulate(os.c * plane, self.grad.data() + os.index(n, 0, 0, 0),
                                        dx.data() + xs.index(n, first, 0, 0));
        }
      },
      "slice_channels");
}

#define GODP_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);              \
  template Tensor<T> deconv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);            \
  template PoolResult<T> maxpool2(const Tensor<T>&);                                                      \
  template Tensor<T> unpool2(const Tensor<T>&, const SwitchMap&);                                         \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, \
                               const BatchNormOptions&);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                      \
  template Tensor<T> bilinear_upsample2(const Tensor<T>&);                                                \
  template Tensor<T> channel_softmax(const Tensor<T>&);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                               \
  template Tensor<T> weighted_sum(const Tensor<T>&, std::span<const T>);                                  \
  template Tensor<T> slice_channels(const Tensor<T>&, int, int);

GODP_INSTANTIATE_OPS(float)
GODP_INSTANTIATE_OPS(double)

#undef GODP_INSTANTIATE_OPS

}  // namespace godp
