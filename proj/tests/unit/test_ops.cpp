#include <cmath>
#include <random>

#include "doctest.h"
#include "godp/errors.hpp"
#include "godp/ops.hpp"

using namespace godp;
using TD = Tensor<double>;

namespace {

TD rnd(Shape s, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(s.numel());
  for (auto& x : v) x = u(rng);
  return TD::from(s, std::move(v), grad);
}

double inner(const TD& a, const TD& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

// Direct cross-correlation with zero padding.
TD naive_conv(const TD& x, const TD& k, int stride, int pad) {
  const Shape xs = x.shape(), ks = k.shape();
  const int oh = (xs.h + 2 * pad - ks.h) / stride + 1, ow = (xs.w + 2 * pad - ks.w) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(xs.n) * ks.n * oh * ow, 0.0);
  const Shape os{xs.n, ks.n, oh, ow};
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ks.n; ++o)
      for (int y = 0; y < oh; ++y)
        for (int x0 = 0; x0 < ow; ++x0) {
          double s = 0;
          for (int c = 0; c < xs.c; ++c)
            for (int i = 0; i < ks.h; ++i)
              for (int j = 0; j < ks.w; ++j) {
                const int iy = y * stride - pad + i, ix = x0 * stride - pad + j;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                s += x.at(n, c, iy, ix) * k.at(o, c, i, j);
              }
          out[os.index(n, o, y, x0)] = s;
        }
  return TD::from(os, out);
}

// Scatter form of the transposed convolution.
TD naive_deconv(const TD& x, const TD& k, int stride, int pad) {
  const Shape xs = x.shape(), ks = k.shape();
  const int oh = (xs.h - 1) * stride - 2 * pad + ks.h, ow = (xs.w - 1) * stride - 2 * pad + ks.w;
  const Shape os{xs.n, ks.c, oh, ow};
  std::vector<double> out(os.numel(), 0.0);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < xs.h; ++y)
        for (int x0 = 0; x0 < xs.w; ++x0)
          for (int o = 0; o < ks.c; ++o)
            for (int i = 0; i < ks.h; ++i)
              for (int j = 0; j < ks.w; ++j) {
                const int oy = y * stride - pad + i, ox = x0 * stride - pad + j;
                if (oy < 0 || ox < 0 || oy >= oh || ox >= ow) continue;
                out[os.index(n, o, oy, ox)] += x.at(n, c, y, x0) * k.at(c, o, i, j);
              }
  return TD::from(os, out);
}

}  // namespace

TEST_CASE("gemm variants match naive products") {
  const int m = 5, n = 7, k = 3;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> a(m * k), b(k * n), c(m * n, 0.5), at(m * k), bt(n * k);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  gemm::nn(m, n, k, a.data(), b.data(), c.data());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.5;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-13));
    }
  // tn: C[k x n] += A^T B with A[m x k], B[m x n]
  std::vector<double> A(m * k), B(m * n), C(k * n, 0.0);
  for (auto& v : A) v = u(rng);
  for (auto& v : B) v = u(rng);
  gemm::tn(m, n, k, A.data(), B.data(), C.data());
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int i = 0; i < m; ++i) s += A[i * k + p] * B[i * n + j];
      CHECK(C[p * n + j] == doctest::Approx(s).epsilon(1e-13));
    }
  // nt: C[m x k] += A B^T with A[m x n], B[k x n]
  std::vector<double> A2(m * n), B2(k * n), C2(m * k, 0.0);
  for (auto& v : A2) v = u(rng);
  for (auto& v : B2) v = u(rng);
  gemm::nt(m, n, k, A2.data(), B2.data(), C2.data());
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double s = 0;
      for (int j = 0; j < n; ++j) s += A2[i * n + j] * B2[p * n + j];
      CHECK(C2[i * k + p] == doctest::Approx(s).epsilon(1e-13));
    }
}

TEST_CASE("conv2d matches the direct oracle") {
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}, std::pair{2, 1}, std::pair{1, 0}}) {
    const TD x = rnd({2, 3, 7, 6}, 10 + stride), k = rnd({4, 3, 3, 3}, 20 + pad);
    const TD y = conv2d(x, k, TD(), stride, pad), ref = naive_conv(x, k, stride, pad);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  }
  const TD b = TD::from({1, 2, 1, 1}, {1.0, -2.0});
  const TD x = TD::zeros({1, 1, 3, 3}), k = TD::zeros({2, 1, 1, 1});
  const TD y = conv2d(x, k, b, 1, 0);
  CHECK(y.at(0, 0, 2, 2) == 1.0);
  CHECK(y.at(0, 1, 0, 0) == -2.0);
  CHECK_THROWS_AS(conv2d(x, rnd({2, 3, 3, 3}, 1), TD(), 1, 1), DimensionError);
}

TEST_CASE("deconv2d matches the scatter oracle and is the adjoint of conv2d") {
  for (auto [stride, pad, h] : {std::tuple{1, 1, 5}, std::tuple{2, 0, 7}, std::tuple{2, 1, 7}}) {
    const TD k = rnd({4, 3, 3, 3}, 5);  // conv2d: 3 -> 4 channels, deconv2d: 4 -> 3
    const TD x = rnd({2, 3, h, h}, 6);
    const TD cx = conv2d(x, k, TD(), stride, pad);
    const TD y = rnd(cx.shape(), 7);
    const TD dy = deconv2d(y, k, TD(), stride, pad);
    REQUIRE(dy.shape() == x.shape());
    CHECK(inner(cx, y) == doctest::Approx(inner(x, dy)).epsilon(1e-12));
    const TD ref = naive_deconv(y, k, stride, pad);
    for (std::size_t i = 0; i < dy.numel(); ++i) CHECK(dy.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("maxpool2 ties resolve to the smallest flat index and unpool restores positions") {
  const TD x = TD::full({1, 1, 4, 4}, 1.0);
  const auto p = maxpool2(x);
  REQUIRE(p.switches.valid());
  CHECK(p.switches.index[0] == 0);
  CHECK(p.switches.index[1] == 2);
  CHECK(p.switches.index[2] == 8);
  const TD y = TD::from({1, 1, 4, 4}, {0, 5, 1, 2,  //
                                       3, 4, 9, 1,  //
                                       7, 0, 0, 0,  //
                                       0, 2, 0, 6});
  const auto q = maxpool2(y);
  CHECK(q.value.data()[0] == 5);
  CHECK(q.value.data()[1] == 9);
  CHECK(q.value.data()[2] == 7);
  CHECK(q.value.data()[3] == 6);
  const TD u = unpool2(q.value, q.switches);
  CHECK(u.at(0, 0, 0, 1) == 5);
  CHECK(u.at(0, 0, 1, 2) == 9);
  CHECK(u.at(0, 0, 2, 0) == 7);
  CHECK(u.at(0, 0, 3, 3) == 6);
  double total = 0;
  for (double v : u.data()) total += v;
  CHECK(total == 27);
  CHECK_THROWS_AS(unpool2(TD::zeros({1, 2, 2, 2}), q.switches), DimensionError);
  CHECK_THROWS_AS(maxpool2(TD::zeros({1, 1, 3, 4})), DimensionError);
}

TEST_CASE("batchnorm normalizes with batch statistics and updates running values") {
  const TD x = rnd({4, 2, 3, 3}, 9);
  const TD g = TD::from({1, 2, 1, 1}, {2.0, 0.5}), b = TD::from({1, 2, 1, 1}, {0.1, -0.3});
  TD rm = TD::zeros({1, 2, 1, 1}), rv = TD::full({1, 2, 1, 1}, 1.0);
  const TD y = batchnorm(x, g, b, rm, rv, {BatchNormMode::kTrain, 0.9, 1e-5});
  for (int c = 0; c < 2; ++c) {
    double m = 0, ss = 0, n = 0;
    for (int i = 0; i < 4; ++i)
      for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) {
          m += x.at(i, c, h, w);
          ++n;
        }
    m /= n;
    for (int i = 0; i < 4; ++i)
      for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) ss += (x.at(i, c, h, w) - m) * (x.at(i, c, h, w) - m);
    const double var = ss / n;
    const double expect = g.data()[c] * (x.at(1, c, 2, 0) - m) / std::sqrt(var + 1e-5) + b.data()[c];
    CHECK(y.at(1, c, 2, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(rm.data()[c] == doctest::Approx(0.1 * m).epsilon(1e-12));
    CHECK(rv.data()[c] == doctest::Approx(0.9 + 0.1 * ss / (n - 1)).epsilon(1e-12));
  }
  TD em = TD::from({1, 2, 1, 1}, {0.5, -1.0}), ev = TD::from({1, 2, 1, 1}, {4.0, 0.25});
  const TD z = batchnorm(x, g, b, em, ev, {BatchNormMode::kEval, 0.9, 1e-5});
  CHECK(z.at(2, 1, 1, 1) == doctest::Approx(0.5 * (x.at(2, 1, 1, 1) + 1.0) / std::sqrt(0.25 + 1e-5) - 0.3).epsilon(1e-12));
  CHECK(em.data()[0] == 0.5);
}

TEST_CASE("bilinear_upsample2 uses align-corners sampling") {
  const TD x = rnd({1, 2, 3, 4}, 11);
  const TD y = bilinear_upsample2(x);
  REQUIRE(y.shape() == Shape{1, 2, 6, 8});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 8; ++j) {
        const double sy = i * 2.0 / 5.0, sx = j * 3.0 / 7.0;
        const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        const int y1 = std::min(y0 + 1, 2), x1 = std::min(x0 + 1, 3);
        const double wy = sy - y0, wx = sx - x0;
        const double v = (1 - wy) * ((1 - wx) * x.at(0, c, y0, x0) + wx * x.at(0, c, y0, x1)) +
                         wy * ((1 - wx) * x.at(0, c, y1, x0) + wx * x.at(0, c, y1, x1));
        CHECK(y.at(0, c, i, j) == doctest::Approx(v).epsilon(1e-12));
      }
  CHECK(y.at(0, 0, 5, 7) == x.at(0, 0, 2, 3));
}

TEST_CASE("channel_softmax is a per-pixel distribution and stable for large logits") {
  const TD x = TD::from({1, 3, 1, 2}, {1000.0, 0.0, 1001.0, 0.0, 999.0, 0.0});
  const TD p = channel_softmax(x);
  CHECK(p.at(0, 0, 0, 0) + p.at(0, 1, 0, 0) + p.at(0, 2, 0, 0) == doctest::Approx(1.0));
  const double e = std::exp(1.0);
  CHECK(p.at(0, 1, 0, 0) == doctest::Approx(e / (1.0 + e + 1.0 / e)).epsilon(1e-12));
  CHECK(p.at(0, 2, 0, 1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("concat and slice are inverse") {
  const TD a = rnd({2, 2, 3, 3}, 1), b = rnd({2, 3, 3, 3}, 2);
  const TD c = concat_channels<double>({a, b});
  REQUIRE(c.shape().c == 5);
  const TD back = slice_channels(c, 2, 3);
  for (std::size_t i = 0; i < b.numel(); ++i) CHECK(back.data()[i] == b.data()[i]);
  CHECK(c.at(1, 1, 2, 0) == a.at(1, 1, 2, 0));
  CHECK_THROWS_AS(concat_channels<double>({a, rnd({2, 1, 4, 3}, 3)}), DimensionError);
  CHECK_THROWS_AS(slice_channels(c, 4, 2), DimensionError);
}

TEST_CASE("float and double ops agree") {
  const TD x = rnd({1, 2, 6, 6}, 4), k = rnd({3, 2, 3, 3}, 5);
  std::vector<float> xf(x.data().begin(), x.data().end()), kf(k.data().begin(), k.data().end());
  const auto yf = conv2d(Tensor<float>::from(x.shape(), xf), Tensor<float>::from(k.shape(), kf), Tensor<float>(), 1, 1);
  const TD yd = conv2d(x, k, TD(), 1, 1);
  for (std::size_t i = 0; i < yd.numel(); ++i) CHECK(double(yf.data()[i]) == doctest::Approx(yd.data()[i]).epsilon(1e-5));
}
