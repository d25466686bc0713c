#include <cmath>
#include <sstream>

#include "doctest.h"
#include "godp/errors.hpp"
#include "godp/ops.hpp"
#include "godp/tensor.hpp"
#include "godp/tensor_io.hpp"

using namespace godp;
using TD = Tensor<double>;

TEST_CASE("factories and shape checks") {
  const TD z = TD::zeros({2, 3, 4, 5});
  CHECK(z.numel() == 120);
  CHECK(z.shape().index(1, 2, 3, 4) == 119);
  CHECK_FALSE(z.requires_grad());
  CHECK(TD::full({1, 1, 2, 2}, 1.5).at(0, 0, 1, 1) == 1.5);
  CHECK_THROWS_AS(TD::from({1, 1, 2, 2}, {1.0, 2.0}), DimensionError);
  CHECK_THROWS_AS(TD::zeros({-1, 1, 1, 1}), DimensionError);
  CHECK(Shape{1, 2, 3, 4}.str() == "(1,2,3,4)");
}

TEST_CASE("precision names round-trip") {
  CHECK(parse_precision("float32") == Precision::kFloat32);
  CHECK(parse_precision("f64") == Precision::kFloat64);
  CHECK(precision_name(Precision::kFloat64) == "float64");
  CHECK_THROWS_AS(parse_precision("half"), ConfigError);
}

TEST_CASE("backward accumulates through shared subgraphs") {
  TD x = TD::from({1, 1, 1, 3}, {1.0, -2.0, 3.0}, true);
  // y = sum(x + x) + sum(relu(x)) -> dy/dx = 2 + [x > 0]
  TD y = add(sum(add(x, x)), sum(relu(x)));
  backward(y);
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == 3.0);
  CHECK(x.grad()[1] == 2.0);
  CHECK(x.grad()[2] == 3.0);
  // A second pass adds on top.
  backward(add(sum(x), sum(x)));
  CHECK(x.grad()[1] == 4.0);
  x.zero_grad();
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar and untaped values") {
  TD x = TD::zeros({1, 1, 2, 2}, true);
  CHECK_THROWS_AS(backward(relu(x)), UsageError);
  TD c = TD::zeros({1, 1, 1, 1});
  CHECK_THROWS_AS(backward(sum(c)), UsageError);
}

TEST_CASE("taped results are immutable, leaves are not") {
  TD x = TD::zeros({1, 1, 1, 2}, true);
  TD y = relu(x);
  CHECK_FALSE(y.is_leaf());
  CHECK_THROWS_AS(y.mutable_data(), UsageError);
  x.mutable_data()[0] = 5.0;
  CHECK(x.data()[0] == 5.0);
  TD d = y.detach();
  CHECK(d.is_leaf());
  CHECK_FALSE(d.requires_grad());
}

TEST_CASE("no-grad guard suppresses recording") {
  TD x = TD::zeros({1, 1, 1, 2}, true);
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    TD y = relu(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(relu(x).requires_grad());
}

TEST_CASE("checked mode rejects non-finite outputs") {
  set_checked_mode(true);
  TD x = TD::from({1, 1, 1, 2}, {1.0, INFINITY});
  CHECK_THROWS_AS(relu(x), NumericError);
  set_checked_mode(false);
  CHECK_NOTHROW(relu(x));
}

TEST_CASE("text dump round-trips exactly") {
  TD x = TD::from({1, 2, 1, 3}, {0.1, -1e-300, 3.0, 1.0 / 3.0, 2.5e10, -0.0});
  std::stringstream ss;
  write_tensor_text(ss, x);
  const TD y = read_tensor_text<double>(ss);
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  Tensor<float> f = Tensor<float>::from({1, 1, 1, 2}, {0.1f, 7.25f});
  std::stringstream fs;
  write_tensor_text(fs, f);
  const Tensor<float> g = read_tensor_text<float>(fs);
  CHECK(g.data()[0] == 0.1f);
  std::stringstream bad("TENSOR 1 1 1 2 float64\n1.0\n");
  CHECK_THROWS(read_tensor_text<double>(bad));
}
