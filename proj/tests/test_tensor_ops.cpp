#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cvit/ops.hpp"
#include "test_support.hpp"

using namespace cvit;
using testsup::fd_check;
using testsup::max_abs_diff;
using testsup::random_tensor;
using testsup::weighted_sum;

TEST_CASE("conv2d: sum-of-ones box") {
  TensorD x = TensorD::ones({1, 1, 3, 3});
  TensorD w = TensorD::ones({1, 1, 3, 3});
  TensorD b = TensorD::zeros({1});
  TensorD y = conv2d(x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d: identity-center kernel reproduces the input") {
  Rng rng(1);
  TensorD x = random_tensor({1, 1, 4, 4}, rng);
  TensorD w = TensorD::zeros({1, 1, 3, 3});
  w.at({0, 0, 1, 1}) = 1.0;
  TensorD y = conv2d(x, w, TensorD::zeros({1}), 1, 1);
  CHECK(max_abs_diff(x, y) == doctest::Approx(0.0));
}

TEST_CASE("conv2d: matches nested-loop oracle (seed 7)") {
  Rng rng(7);
  TensorD x = random_tensor({1, 2, 5, 5}, rng);
  TensorD w = random_tensor({3, 2, 3, 3}, rng);
  TensorD b = random_tensor({3}, rng);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      TensorD y = conv2d(x, w, b, stride, pad);
      TensorD ref = testsup::conv2d_ref(x, w, b, stride, pad);
      CHECK(max_abs_diff(y, ref) < 1e-6);
    }
}

TEST_CASE("conv2d: channel mismatch raises a dimension error") {
  TensorD x = TensorD::ones({1, 3, 4, 4});
  TensorD w = TensorD::ones({2, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, TensorD::zeros({2}), 1, 1), DimensionError);
}

TEST_CASE("deconv2d: shape doubling and zero weights") {
  TensorD x = TensorD::ones({1, 8, 16, 16});
  TensorD w = TensorD::zeros({8, 5, 4, 4});
  TensorD y = deconv2d(x, w);
  CHECK(y.shape() == Shape{1, 5, 32, 32});
  for (double v : y.vec()) CHECK(v == 0.0);
}

TEST_CASE("deconv2d: matches zero-stuffing oracle (seed 11)") {
  Rng rng(11);
  TensorD x = random_tensor({2, 3, 5, 6}, rng);
  TensorD w = random_tensor({3, 4, 4, 4}, rng);
  TensorD y = deconv2d(x, w);
  TensorD ref = testsup::deconv2d_ref_zerostuff(x, w, 2, 1);
  CHECK(max_abs_diff(y, ref) < 1e-6);
  TensorD ref2 = testsup::deconv2d_ref_scatter(x, w, 2, 1);
  CHECK(max_abs_diff(y, ref2) < 1e-6);
}

TEST_CASE("deconv2d: non-doubling configuration is rejected") {
  TensorD x = TensorD::ones({1, 2, 4, 4});
  TensorD w3 = TensorD::ones({2, 2, 3, 3});
  CHECK_THROWS_AS(deconv2d(x, w3), ContractError);
  TensorD w4 = TensorD::ones({2, 2, 4, 4});
  CHECK_THROWS_AS(deconv2d(x, w4, 3, 1), ContractError);
}

TEST_CASE("layer_norm: constant rows collapse to zero") {
  TensorD x = TensorD::full({2, 5}, 3.7);
  TensorD g = TensorD::ones({5});
  TensorD b = TensorD::zeros({5});
  TensorD y = layer_norm(x, g, b, 1e-6);
  for (double v : y.vec()) CHECK(std::fabs(v) < 1e-9);
}

TEST_CASE("layer_norm: hand-computed population variance case") {
  TensorD x = TensorD::from_data({1, 3}, {1.0, 2.0, 3.0});
  TensorD y = layer_norm(x, TensorD::ones({3}), TensorD::zeros({3}), 1e-6);
  double r = std::sqrt(1.5);
  CHECK(y.vec()[0] == doctest::Approx(-r).epsilon(1e-5));
  CHECK(y.vec()[1] == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(y.vec()[2] == doctest::Approx(r).epsilon(1e-5));
}

TEST_CASE("layer_norm: zero gamma broadcasts beta") {
  Rng rng(5);
  TensorD x = random_tensor({3, 4}, rng);
  TensorD g = TensorD::zeros({4});
  TensorD b = TensorD::from_data({4}, {0.5, -1.0, 2.0, 0.0});
  TensorD y = layer_norm(x, g, b, 1e-6);
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t d = 0; d < 4; ++d) CHECK(y.at({r, d}) == doctest::Approx(b.vec()[d]));
}

TEST_CASE("layer_norm invariant: unit gamma rows have ~0 mean and ~1 variance") {
  Rng rng(17);
  TensorD x = random_tensor({6, 16}, rng, -3.0, 3.0);
  TensorD y = layer_norm(x, TensorD::ones({16}), TensorD::zeros({16}), 1e-6);
  for (int64_t r = 0; r < 6; ++r) {
    double mu = 0, var = 0;
    for (int64_t d = 0; d < 16; ++d) mu += y.at({r, d});
    mu /= 16;
    for (int64_t d = 0; d < 16; ++d) var += (y.at({r, d}) - mu) * (y.at({r, d}) - mu);
    var /= 16;
    CHECK(std::fabs(mu) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("softmax: symmetry, stability, row sums") {
  TensorD a = TensorD::zeros({3});
  TensorD sa = softmax(a);
  for (double v : sa.vec()) CHECK(v == doctest::Approx(1.0 / 3.0));

  TensorD big = TensorD::from_data({2}, {1000.0, 0.0});
  TensorD sb = softmax(big);
  CHECK(sb.vec()[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sb.vec()[1] == doctest::Approx(0.0).epsilon(1e-6));

  Rng rng(3);
  TensorD x = random_tensor({4, 9}, rng, -5.0, 5.0);
  TensorD y = softmax(x);
  for (int64_t r = 0; r < 4; ++r) {
    double s = 0;
    for (int64_t i = 0; i < 9; ++i) s += y.at({r, i});
    CHECK(std::fabs(s - 1.0) < 1e-7);
  }
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(TensorD::scalar(0.0)).item() == doctest::Approx(0.5));

  // abs subgradient at exactly zero is zero
  TensorD x = TensorD::from_data({3}, {-2.0, 0.0, 3.0});
  x.set_requires_grad(true);
  TensorD l = sum(abs(x));
  l.backward();
  CHECK(x.grad_vec()[0] == -1.0);
  CHECK(x.grad_vec()[1] == 0.0);
  CHECK(x.grad_vec()[2] == 1.0);

  TensorD a = TensorD::ones({1, 2, 4, 4});
  TensorD b = TensorD::ones({1, 3, 4, 4});
  TensorD c = concat<double>({a, b}, 1);
  CHECK(c.shape() == Shape{1, 5, 4, 4});

  CHECK_THROWS_AS(add(TensorD::ones({2, 3}), TensorD::ones({3, 2})), DimensionError);
  CHECK_THROWS_AS(mul(TensorD::ones({2, 3}), TensorD::ones({2})), DimensionError);
}

TEST_CASE("trailing-axis broadcast add behaves like a bias") {
  Rng rng(8);
  TensorD x = random_tensor({2, 3, 4}, rng);
  TensorD b = random_tensor({4}, rng);
  TensorD y = add(x, b);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t t = 0; t < 3; ++t)
      for (int64_t d = 0; d < 4; ++d)
        CHECK(y.at({n, t, d}) == doctest::Approx(x.at({n, t, d}) + b.vec()[d]));
}

TEST_CASE("backward: contract and basic analytic cases") {
  TensorD x = TensorD::ones({2, 2});
  x.set_requires_grad(true);
  TensorD l = sum(x);
  l.backward();
  for (double g : x.grad_vec()) CHECK(g == 1.0);

  TensorD v = TensorD::from_data({2}, {1.0, 2.0});
  v.set_requires_grad(true);
  TensorD l2 = sum(mul(v, v));
  l2.backward();
  CHECK(v.grad_vec()[0] == doctest::Approx(2.0));
  CHECK(v.grad_vec()[1] == doctest::Approx(4.0));

  // second backward without rebuilding is an error
  CHECK_THROWS_AS(l2.backward(), ContractError);

  // non-scalar loss is an error
  TensorD m = TensorD::ones({3});
  m.set_requires_grad(true);
  TensorD y = scalar_mul(m, 2.0);
  CHECK_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("finite checks: inf inputs are a hard error") {
  TensorD a = TensorD::full({4}, 1e308);
  CHECK_THROWS_AS(mul(a, a), NumericError);
  TensorF f = TensorF::full({4}, 3e38f);
  CHECK_THROWS_AS(add(f, f), NumericError);
}

TEST_CASE("no-NaN property: randomized op chains stay finite") {
  Rng rng(123);
  for (int trial = 0; trial < 10; ++trial) {
    TensorD x = random_tensor({2, 3, 6, 6}, rng, -2.0, 2.0);
    TensorD w = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
    TensorD y = conv2d(x, w, random_tensor({4}, rng), 1, 1);
    y = relu(y);
    y = add(y, scalar_mul(y, 0.5));
    TensorD s = softmax(reshape(y, {2, 4, 36}));
    TensorD m = mean(gelu(sub(s, sigmoid(s))));
    CHECK(std::isfinite(m.item()));
  }
}

// --------------------------- gradient checks -------------------------------

TEST_CASE("fd: elementwise, reductions, reshape/transpose/concat") {
  Rng rng(21);
  TensorD x = random_tensor({3, 4}, rng);

  auto check_unary = [&](const char* name, std::function<TensorD(const TensorD&)> op,
                         double lo = -1.0, double hi = 1.0) {
    Rng r2(33);
    TensorD t = random_tensor({3, 4}, r2, lo, hi);
    double err = fd_check([&] { return weighted_sum(op(t)); }, t);
    INFO(name);
    CHECK(err < 1e-4);
  };

  check_unary("relu", [](const TensorD& t) { return relu(t); });
  check_unary("gelu", [](const TensorD& t) { return gelu(t); });
  check_unary("sigmoid", [](const TensorD& t) { return sigmoid(t); });
  check_unary("abs", [](const TensorD& t) { return abs(t); });
  check_unary("scalar_mul", [](const TensorD& t) { return scalar_mul(t, -2.5); });
  check_unary("clamp", [](const TensorD& t) { return clamp(t, -0.5, 0.5); });
  check_unary("softmax", [](const TensorD& t) { return softmax(t); }, -2.0, 2.0);
  check_unary("mean", [](const TensorD& t) { return mean(t); });
  check_unary("reshape", [](const TensorD& t) { return reshape(t, {2, 6}); });
  check_unary("transpose", [](const TensorD& t) { return transpose(t, 0, 1); });

  // binary ops, both operands
  TensorD a = random_tensor({3, 4}, rng);
  TensorD b = random_tensor({3, 4}, rng);
  CHECK(fd_check([&] { return weighted_sum(add(a, b)); }, a) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(add(a, b)); }, b) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(sub(a, b)); }, b) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(mul(a, b)); }, a) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(mul(a, b)); }, b) < 1e-4);

  // trailing broadcast
  TensorD bias = random_tensor({4}, rng);
  CHECK(fd_check([&] { return weighted_sum(add(a, bias)); }, bias) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(mul(a, bias)); }, bias) < 1e-4);

  // scalar broadcast
  TensorD s = random_tensor({1}, rng);
  CHECK(fd_check([&] { return weighted_sum(mul(a, s)); }, s) < 1e-4);

  // concat
  TensorD c1 = random_tensor({2, 2, 3}, rng);
  TensorD c2 = random_tensor({2, 4, 3}, rng);
  CHECK(fd_check([&] { return weighted_sum(concat<double>({c1, c2}, 1)); }, c2) < 1e-4);
}

TEST_CASE("fd: matmul and linear") {
  Rng rng(31);
  TensorD a = random_tensor({3, 5}, rng);
  TensorD b = random_tensor({5, 4}, rng);
  CHECK(fd_check([&] { return weighted_sum(matmul(a, b)); }, a) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(matmul(a, b)); }, b) < 1e-4);

  TensorD ab = random_tensor({2, 3, 5}, rng);
  TensorD bb = random_tensor({2, 5, 4}, rng);
  CHECK(fd_check([&] { return weighted_sum(matmul(ab, bb)); }, ab) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(matmul(ab, bb)); }, bb) < 1e-4);
  // shared rhs across the batch
  CHECK(fd_check([&] { return weighted_sum(matmul(ab, b)); }, b) < 1e-4);

  TensorD x = random_tensor({2, 3, 5}, rng);
  TensorD w = random_tensor({5, 6}, rng);
  TensorD bias = random_tensor({6}, rng);
  CHECK(fd_check([&] { return weighted_sum(linear(x, w, bias)); }, x) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(linear(x, w, bias)); }, w) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(linear(x, w, bias)); }, bias) < 1e-4);
}

TEST_CASE("fd: conv2d and deconv2d") {
  Rng rng(41);
  TensorD x = random_tensor({2, 2, 5, 5}, rng);
  TensorD w = random_tensor({3, 2, 3, 3}, rng);
  TensorD b = random_tensor({3}, rng);
  CHECK(fd_check([&] { return weighted_sum(conv2d(x, w, b, 1, 1)); }, x) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(conv2d(x, w, b, 1, 1)); }, w) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(conv2d(x, w, b, 1, 1)); }, b) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(conv2d(x, w, b, 2, 0)); }, x) < 1e-4);

  TensorD xd = random_tensor({1, 3, 4, 4}, rng);
  TensorD wd = random_tensor({3, 2, 4, 4}, rng);
  CHECK(fd_check([&] { return weighted_sum(deconv2d(xd, wd)); }, xd) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(deconv2d(xd, wd)); }, wd) < 1e-4);
}

TEST_CASE("fd: layer_norm") {
  Rng rng(51);
  TensorD x = random_tensor({4, 6}, rng);
  TensorD g = random_tensor({6}, rng, 0.5, 1.5);
  TensorD b = random_tensor({6}, rng);
  CHECK(fd_check([&] { return weighted_sum(layer_norm(x, g, b, 1e-6)); }, x) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(layer_norm(x, g, b, 1e-6)); }, g) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(layer_norm(x, g, b, 1e-6)); }, b) < 1e-4);
}

TEST_CASE("fd: upsample_bilinear2x and avgpool2d") {
  Rng rng(61);
  TensorD x = random_tensor({1, 2, 4, 4}, rng);
  CHECK(fd_check([&] { return weighted_sum(upsample_bilinear2x(x)); }, x) < 1e-4);
  CHECK(fd_check([&] { return weighted_sum(avgpool2d(x, 2)); }, x) < 1e-4);
}

TEST_CASE("upsample preserves constants; avgpool rejects bad factors") {
  TensorD c = TensorD::full({1, 1, 3, 5}, 0.5);
  TensorD u = upsample_bilinear2x(c);
  CHECK(u.shape() == Shape{1, 1, 6, 10});
  for (double v : u.vec()) CHECK(v == doctest::Approx(0.5));
  CHECK_THROWS_AS(avgpool2d(c, 2), DimensionError);
}

TEST_CASE("grad accumulates across two graphs sharing a leaf") {
  TensorD x = TensorD::from_data({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  sum(x).backward();
  sum(mul(x, x)).backward();
  CHECK(x.grad_vec()[0] == doctest::Approx(1.0 + 2.0));
  CHECK(x.grad_vec()[1] == doctest::Approx(1.0 + 4.0));
}
