#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pvc/grad_check.hpp"
#include "pvc/nn.hpp"

using namespace pvc;

namespace {

Conv3dParams<double> random_conv(std::size_t ci, std::size_t co, std::mt19937_64& gen) {
  return {oracle::random_tensor({co, ci, 3, 3, 3}, gen), oracle::random_tensor({co}, gen)};
}

}  // namespace

TEST_CASE("conv3d identity and counting kernels") {
  std::mt19937_64 gen(31);
  const auto x = oracle::random_tensor({1, 1, 4, 4, 4}, gen);
  auto delta = Conv3dParams<double>::zeros(1, 1);
  delta.weight.at({0, 0, 1, 1, 1}) = 1.0;
  CHECK(conv3d(x, delta) == x);

  Conv3dParams<double> ones{Tensor64({1, 1, 3, 3, 3}, 1.0), Tensor64({1})};
  const auto y = conv3d(Tensor64({1, 1, 5, 5, 5}, 1.0), ones);
  CHECK(y.at({0, 0, 2, 2, 2}) == 27.0);
  CHECK(y.at({0, 0, 0, 0, 0}) == 8.0);
  CHECK(y.at({0, 0, 4, 4, 4}) == 8.0);
  CHECK(y.at({0, 0, 0, 2, 2}) == 18.0);

  CHECK_THROWS_AS(conv3d(Tensor64({1, 2, 3, 3, 3}), ones), ShapeError);
}

TEST_CASE("conv3d matches the nested-loop oracle") {
  std::mt19937_64 gen(32);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + trial % 2, ci = 1 + trial % 3, co = 1 + (trial + 1) % 3, r = 1 + trial % 5;
    const auto x = oracle::random_tensor({b, ci, r, r, r}, gen);
    const auto p = random_conv(ci, co, gen);
    const auto got = conv3d(x, p);
    const auto want = oracle::conv3d(x, p.weight, p.bias);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-10);
  }
}

TEST_CASE("conv3d linearity and translation equivariance") {
  std::mt19937_64 gen(33);
  auto p = random_conv(2, 2, gen);
  p.bias.fill(0.0);
  const auto a = oracle::random_tensor({1, 2, 5, 5, 5}, gen), b = oracle::random_tensor({1, 2, 5, 5, 5}, gen);
  const auto lhs = conv3d(elementwise_add(scale(a, 3.0), b), p);
  const auto rhs = elementwise_add(scale(conv3d(a, p), 3.0), conv3d(b, p));
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - rhs[i]) <= 1e-9);

  const auto q = random_conv(2, 2, gen);
  const auto wsum = conv3d(a, Conv3dParams<double>{elementwise_add(p.weight, q.weight), Tensor64({2})});
  const auto wsep = elementwise_add(conv3d(a, p), conv3d(a, Conv3dParams<double>{q.weight, Tensor64({2})}));
  for (std::size_t i = 0; i < wsum.size(); ++i) CHECK(std::abs(wsum[i] - wsep[i]) <= 1e-9);

  // Shift by one voxel along x; compare where neither conv sees the shifted-in border.
  Tensor64 shifted({1, 2, 5, 5, 5});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t z = 0; z < 5; ++z)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 1; x < 5; ++x) shifted.at({0, c, z, y, x}) = a.at({0, c, z, y, x - 1});
  const auto ya = conv3d(a, p), ys = conv3d(shifted, p);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t z = 1; z < 4; ++z)
      for (std::size_t y = 1; y < 4; ++y)
        for (std::size_t x = 2; x < 4; ++x)
          CHECK(std::abs(ys.at({0, c, z, y, x}) - ya.at({0, c, z, y, x - 1})) <= 1e-12);
}

TEST_CASE("conv3d backward passes grad_check") {
  std::mt19937_64 gen(34);
  const auto x = oracle::random_tensor({1, 2, 4, 4, 4}, gen);
  const auto p = random_conv(2, 3, gen);
  const auto rep = grad_check(
      "conv3d", [&](const Tensor64& in) { return conv3d(in, p); },
      [&](const Tensor64& in, const Tensor64& g) { return conv3d_backward(in, p, g).input; }, x);
  CHECK(rep.passed);
  const auto bias_rep = grad_check(
      "conv3d.bias", [&](const Tensor64& b) { return conv3d(x, Conv3dParams<double>{p.weight, b}); },
      [&](const Tensor64& b, const Tensor64& g) { return conv3d_backward(x, Conv3dParams<double>{p.weight, b}, g).bias; },
      p.bias);
  CHECK(bias_rep.passed);
}

TEST_CASE("batch norm train mode") {
  auto s = BatchNormState<double>::identity(1);
  const auto unit = Tensor64::from_rows({{1}, {-1}, {1}, {-1}});
  const auto out = batch_norm_forward(unit, s, Mode::train).out;
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out[i] - unit[i]) <= s.epsilon / 2);

  s.beta[0] = 0.7;
  const auto flat = batch_norm_forward(Tensor64({6, 1}, 3.0), s, Mode::train).out;
  for (double v : flat.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

  CHECK_THROWS(batch_norm_forward(Tensor64({1, 2}), s, Mode::train));
}

TEST_CASE("batch norm matches the formula") {
  std::mt19937_64 gen(35);
  const auto x = oracle::random_tensor({2, 3, 2, 2, 2}, gen, -2.0, 5.0);
  auto s = BatchNormState<double>::identity(3);
  s.gamma = oracle::random_tensor({3}, gen);
  s.beta = oracle::random_tensor({3}, gen);
  const auto out = batch_norm(x, s, Mode::train);

  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    std::vector<double> vals;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 8; ++i) vals.push_back(x[(b * 3 + c) * 8 + i]);
    for (double v : vals) mean += v / vals.size();
    for (double v : vals) var += (v - mean) * (v - mean) / vals.size();
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 8; ++i) {
        const double want = s.gamma[c] * (x[(b * 3 + c) * 8 + i] - mean) / std::sqrt(var + 1e-5) + s.beta[c];
        CHECK(std::abs(out[(b * 3 + c) * 8 + i] - want) <= 1e-12);
      }
    CHECK(std::abs(s.running_mean[c] - 0.1 * mean) <= 1e-12);
    CHECK(std::abs(s.running_var[c] - (0.9 + 0.1 * var)) <= 1e-12);
  }

  const auto eval = batch_norm_forward(x, s, Mode::eval).out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = (i / 8) % 3;
    const double want =
        s.gamma[c] * (x[i] - s.running_mean[c]) / std::sqrt(s.running_var[c] + 1e-5) + s.beta[c];
    CHECK(std::abs(eval[i] - want) <= 1e-12);
  }
}

TEST_CASE("batch norm normalizes each channel") {
  std::mt19937_64 gen(36);
  const auto x = oracle::random_tensor({50, 4}, gen, -3.0, 7.0);
  const auto out = batch_norm_forward(x, BatchNormState<double>::identity(4), Mode::train).out;
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 50; ++i) mean += out.at({i, c}) / 50;
    for (std::size_t i = 0; i < 50; ++i) var += std::pow(out.at({i, c}) - mean, 2) / 50;
    CHECK(std::abs(mean) <= 1e-7);
    CHECK(std::abs(var - 1.0) <= 1e-5 * 2);
  }
}

TEST_CASE("batch norm grads") {
  std::mt19937_64 gen(37);
  const auto x = oracle::random_tensor({10, 3}, gen);
  auto s = BatchNormState<double>::identity(3);
  s.gamma = oracle::random_tensor({3}, gen);
  for (Mode mode : {Mode::train, Mode::eval}) {
    const auto rep = grad_check(
        "bn", [&](const Tensor64& in) { return batch_norm_forward(in, s, mode).out; },
        [&](const Tensor64& in, const Tensor64& g) {
          return batch_norm_backward(g, s, batch_norm_forward(in, s, mode).cache).input;
        },
        x);
    CHECK(rep.passed);
  }
}

TEST_CASE("leaky relu") {
  CHECK(leaky_relu(Tensor64::vector({1.0}), 0.1)[0] == 1.0);
  CHECK(leaky_relu(Tensor64::vector({-1.0}), 0.1)[0] == doctest::Approx(-0.1));
  const auto g = leaky_relu_backward(Tensor64::vector({0.0, -2.0, 3.0}), Tensor64::vector({1, 1, 1}), 0.1);
  CHECK(g == Tensor64::vector({1.0, 0.1, 1.0}));
}

TEST_CASE("linear and shared mlp") {
  std::mt19937_64 gen(38);
  Rng rng(1);
  const auto p = LinearParams<double>::kaiming(3, 4, rng);
  const auto x = oracle::random_tensor({5, 3}, gen);
  const auto y = linear(x, p);
  const auto want = oracle::matmul(x, transpose2d(p.weight));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - want[i] - p.bias[i % 4]) <= 1e-12);

  auto twin = x;
  for (std::size_t j = 0; j < 3; ++j) twin.at({1, j}) = twin.at({0, j});
  const auto out = shared_mlp_forward(twin, p, BatchNormState<double>::identity(4), 0.1, Mode::train).out;
  for (std::size_t j = 0; j < 4; ++j) CHECK(out.at({0, j}) == out.at({1, j}));

  // Columns are already zero-mean with unit variance.
  LinearParams<double> eye{Tensor64::from_rows({{1, 0}, {0, 1}}), Tensor64({2})};
  auto bn = BatchNormState<double>::identity(2);
  const auto pre = Tensor64::from_rows({{1, -1}, {-1, 1}, {1, -1}, {-1, 1}});
  const auto passed = shared_mlp_forward(pre, eye, bn, 0.1, Mode::train).out;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const double act = pre[i] >= 0 ? pre[i] : 0.1 * pre[i];
    CHECK(std::abs(passed[i] - act) <= 1e-5);
  }

  bn.gamma = oracle::random_tensor({4}, gen);
  bn.beta = oracle::random_tensor({4}, gen);
  bn.running_mean = Tensor64({4});
  bn.running_var = Tensor64({4}, 1.0);
  const auto composed = leaky_relu(batch_norm_forward(linear(x, p), bn, Mode::train).out, 0.1);
  CHECK(shared_mlp_forward(x, p, bn, 0.1, Mode::train).out == composed);
}
