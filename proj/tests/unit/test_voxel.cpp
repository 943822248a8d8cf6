#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pvc/voxel.hpp"

using namespace pvc;

namespace {

NormalizedCloud cloud_hat(const Tensor64& coords_hat, const Tensor64& features) {
  NormalizedCloud nc;
  nc.coords_hat = coords_hat;
  nc.features = features;
  nc.gravity_center = Tensor64({3});
  return nc;
}

NormalizedCloud random_nc(std::size_t n, std::size_t c, std::mt19937_64& gen) {
  return normalize(oracle::random_cloud(n, c, gen));
}

}  // namespace

TEST_CASE("voxelize small cases") {
  auto g = voxelize(cloud_hat(Tensor64::from_rows({{0.1, 0.1, 0.1}}), Tensor64::from_rows({{3.0}})), 2);
  CHECK(g.values.at({0, 0, 0, 0}) == 3.0);
  CHECK(g.counts.at({0, 0, 0}) == 1);
  CHECK(sum(g.values) == 3.0);

  g = voxelize(cloud_hat(Tensor64::from_rows({{0.1, 0.2, 0.3}, {0.4, 0.1, 0.2}}), Tensor64::from_rows({{2.0}, {4.0}})),
               2);
  CHECK(g.values.at({0, 0, 0, 0}) == 3.0);
  CHECK(g.counts.at({0, 0, 0}) == 2);
  CHECK_THROWS(voxelize(cloud_hat(Tensor64::from_rows({{0.1, 0.1, 0.1}}), Tensor64::from_rows({{1.0}})), 0));
}

TEST_CASE("voxelize boundary values stay in range") {
  const auto coords = Tensor64::from_rows({{0, 0, 0}, {1, 1, 1}, {1, 0, 0.5}});
  for (std::size_t r : {1, 2, 3, 7}) {
    const auto g = voxelize(cloud_hat(coords, Tensor64({3, 1}, 1.0)), r);
    CHECK(g.counts.at({r - 1, r - 1, r - 1}) >= 1);
    CHECK(g.counts.at({0, 0, 0}) >= 1);
    std::int64_t total = 0;
    for (auto c : g.counts.data()) total += c;
    CHECK(total == 3);
  }
}

TEST_CASE("voxelize matches brute-force scatter oracle") {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto nc = random_nc(16, 2, gen);
    const auto g = voxelize(nc, nc.features, 4);
    const auto want = oracle::voxelize(nc.coords_hat, nc.features, 4);
    CHECK(g.counts == want.counts);
    for (std::size_t i = 0; i < g.values.size(); ++i) CHECK(std::abs(g.values[i] - want.values[i]) <= 1e-12);
  }
}

TEST_CASE("voxelize backward") {
  const auto nc = cloud_hat(Tensor64::from_rows({{0.1, 0.1, 0.1}, {0.9, 0.9, 0.9}}), Tensor64({2, 1}, 1.0));
  auto g = voxelize(nc, nc.features, 2);
  CHECK(voxelize_backward(Tensor64({2, 2, 2, 1}, 1.0), nc, g) == Tensor64({2, 1}, 1.0));

  const auto shared = cloud_hat(Tensor64::from_rows({{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}}), Tensor64({2, 1}, 1.0));
  g = voxelize(shared, shared.features, 2);
  CHECK(voxelize_backward(Tensor64({2, 2, 2, 1}, 1.0), shared, g) == Tensor64({2, 1}, 0.5));
  CHECK_THROWS(voxelize_backward(Tensor64({3, 3, 3, 1}), shared, g));
}

TEST_CASE("trilinear weights") {
  for (std::size_t r : {2, 4, 8}) {
    for (std::size_t u = 0; u < r; ++u) {
      const double c = (static_cast<double>(u) + 0.5) / static_cast<double>(r);
      const auto tw = trilinear_weights({c, c, c}, r);
      for (std::size_t i = 0; i < 8; ++i) {
        const auto corner = tw.corner(i, r);
        if (corner == VoxelCoord{u, u, u}) {
          CHECK(tw.weights[i] == 1.0);
        } else {
          CHECK(tw.weights[i] == 0.0);
        }
      }
    }
  }
  const auto mid = trilinear_weights({0.5, 3.5 / 8, 3.5 / 8}, 8);
  CHECK(mid.weights[0] == 0.5);
  CHECK(mid.weights[4] == 0.5);

  const auto one = trilinear_weights({0.3, 0.9, 0.0}, 1);
  CHECK(one.weights[0] == 1.0);

  CHECK_THROWS(trilinear_weights({-0.01, 0.5, 0.5}, 4));
  CHECK_THROWS(trilinear_weights({0.5, 1.01, 0.5}, 4));
}

TEST_CASE("trilinear weights match the product oracle") {
  std::mt19937_64 gen(22);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::array<double, 3> p{u01(gen), u01(gen), u01(gen)};
    const auto tw = trilinear_weights(p, 8);
    double total = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      const auto c = tw.corner(i, 8);
      const double want =
          oracle::axis_weight(p[0], c[0], 8) * oracle::axis_weight(p[1], c[1], 8) * oracle::axis_weight(p[2], c[2], 8);
      CHECK(std::abs(tw.weights[i] - want) <= 1e-12);
      CHECK(tw.weights[i] >= 0.0);
      CHECK(tw.weights[i] <= 1.0);
      total += tw.weights[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("devoxelize trilinear") {
  std::mt19937_64 gen(23);
  const auto nc = random_nc(30, 2, gen);
  const auto out = devoxelize_trilinear(Tensor64({4, 4, 4, 2}, 2.5), nc);
  for (double v : out.data()) CHECK(std::abs(v - 2.5) <= 1e-12);

  const auto centred =
      cloud_hat(Tensor64::from_rows({{0.125, 0.375, 0.875}}), Tensor64::from_rows({{1.25, -3.0}}));
  const auto g = voxelize(centred, centred.features, 4);
  CHECK(devoxelize_trilinear(g.values, centred) == centred.features);

  for (int trial = 0; trial < 20; ++trial) {
    const auto cloud = random_nc(12, 3, gen);
    const std::size_t r = 1 + trial % 5;
    const auto grid = oracle::random_tensor({r, r, r, 3}, gen);
    const auto got = devoxelize_trilinear(grid, cloud);
    const auto want = oracle::devoxelize_trilinear(grid, cloud.coords_hat);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("devoxelize nearest") {
  const auto nc = cloud_hat(Tensor64::from_rows({{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}, {0.9, 0.1, 0.1}}),
                            Tensor64::from_rows({{1.0}, {2.0}, {5.0}}));
  const auto g = voxelize(nc, nc.features, 2);
  const auto out = devoxelize_nearest(g.values, nc);
  CHECK(out.at({0, 0}) == out.at({1, 0}));
  CHECK(out.at({2, 0}) == 5.0);

  std::mt19937_64 gen(24);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cloud = random_nc(12, 2, gen);
    const auto grid = oracle::random_tensor({3, 3, 3, 2}, gen);
    CHECK(devoxelize_nearest(grid, cloud) == oracle::devoxelize_nearest(grid, cloud.coords_hat));
  }
}

TEST_CASE("linearity and adjointness") {
  std::mt19937_64 gen(25);
  for (int trial = 0; trial < 10; ++trial) {
    const auto nc = random_nc(40, 3, gen);
    const std::size_t r = 2 + trial % 4;
    const auto f = oracle::random_tensor({40, 3}, gen), h = oracle::random_tensor({40, 3}, gen);
    const auto combo = elementwise_add(scale(f, 2.0), scale(h, -0.5));
    const auto vf = voxelize(nc, f, r), vh = voxelize(nc, h, r), vc = voxelize(nc, combo, r);
    for (std::size_t i = 0; i < vc.values.size(); ++i)
      CHECK(std::abs(vc.values[i] - (2.0 * vf.values[i] - 0.5 * vh.values[i])) <= 1e-9);

    const auto G = oracle::random_tensor({r, r, r, 3}, gen);
    CHECK(std::abs(inner_product(vf.values, G) - inner_product(f, voxelize_backward(G, nc, vf))) <= 1e-9);

    const auto y = oracle::random_tensor({40, 3}, gen);
    for (DevoxMode mode : {DevoxMode::trilinear, DevoxMode::nearest}) {
      CHECK(std::abs(inner_product(devoxelize(mode, G, nc), y) -
                     inner_product(G, devoxelize_backward(mode, y, nc, r))) <= 1e-9);
      const auto lin = devoxelize(mode, elementwise_add(G, G), nc);
      const auto twice = scale(devoxelize(mode, G, nc), 2.0);
      for (std::size_t i = 0; i < lin.size(); ++i) CHECK(std::abs(lin[i] - twice[i]) <= 1e-9);
    }
  }
}

TEST_CASE("count distinguishable") {
  const auto apart = cloud_hat(Tensor64::from_rows({{0.1, 0.1, 0.1}, {0.9, 0.9, 0.9}, {0.1, 0.9, 0.1}}),
                               Tensor64({3, 1}));
  CHECK(count_distinguishable(apart, 2) == 3);
  CHECK(count_distinguishable(apart, 1) == 0);

  const auto same = cloud_hat(Tensor64({5, 3}, 0.3), Tensor64({5, 1}));
  for (std::size_t r : {1, 4, 64, 1024}) CHECK(count_distinguishable(same, r) == 0);

  const auto cube = normalize(generate_synthetic({Generator::uniform_cube, 2048, 42, 2}));
  CHECK(count_distinguishable(cube, 8) == oracle::distinguishable(cube.coords_hat, 8));

  std::size_t prev = 0;
  for (std::size_t r = 1; r <= 4096; r *= 2) {
    const std::size_t d = count_distinguishable(cube, r);
    CHECK(d == oracle::distinguishable(cube.coords_hat, r));
    CHECK(d >= prev);
    prev = d;
  }
  CHECK(prev == 2048);
}

TEST_CASE("access counters") {
  std::mt19937_64 gen(26);
  const auto nc = random_nc(100, 2, gen);
  AccessCounter counter{"voxel"};
  const auto g = voxelize(nc, nc.features, 4, &counter);
  CHECK(counter.random_scatters == 100);
  devoxelize_trilinear(g.values, nc, &counter);
  CHECK(counter.random_gathers == 800);
}

TEST_CASE("grid and volume layouts are inverse") {
  std::mt19937_64 gen(27);
  const auto grid = oracle::random_tensor({3, 3, 3, 2}, gen);
  const auto vol = grid_to_volume(grid);
  CHECK(vol.shape() == Shape{1, 2, 3, 3, 3});
  CHECK(vol.at({0, 1, 2, 0, 1}) == grid.at({2, 0, 1, 1}));
  CHECK(volume_to_grid(vol) == grid);
}
