#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"
#include "pvc/grad_check.hpp"
#include "pvc/pvcnn.hpp"

using namespace pvc;

namespace {

PVCNNConfig micro() {
  PVCNNConfig cfg;
  cfg.blocks = {{4, 4}, {6, 2}};
  cfg.head_widths = {8};
  cfg.num_classes = 3;
  return cfg;
}

PointCloud permuted(const PointCloud& pc, const std::vector<std::size_t>& perm) {
  PointCloud out;
  const std::size_t c = pc.channels();
  out.coords = Tensor64({perm.size(), 3});
  out.features = Tensor64({perm.size(), c});
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t a = 0; a < 3; ++a) out.coords[i * 3 + a] = pc.coords[perm[i] * 3 + a];
    for (std::size_t j = 0; j < c; ++j) out.features[i * c + j] = pc.features[perm[i] * c + j];
  }
  return out;
}

}  // namespace

TEST_CASE("config arithmetic and validation") {
  auto cfg = PVCNNConfig::toy(0.25);
  CHECK(cfg.effective_channels(64) == 16);
  CHECK(cfg.effective_channels(1024) == 256);
  CHECK(cfg.effective_channels(2) == 1);
  CHECK(cfg.effective_resolution(32) == 8);
  cfg.resolution_cap = 0;
  cfg.resolution_multiplier = 0.75;
  CHECK(cfg.effective_resolution(32) == 24);
  CHECK(cfg.effective_resolution(1) == 1);

  CHECK_NOTHROW(PVCNNConfig::toy().validate());
  CHECK_NOTHROW(PVCNNConfig::desk().validate());
  auto bad = PVCNNConfig::desk();
  bad.width_multiplier = 0.3;
  CHECK_THROWS(bad.validate());
  bad = PVCNNConfig::desk();
  bad.num_classes = 0;
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(build_pvcnn<float>(bad, 1));
  bad = PVCNNConfig::desk();
  bad.resolution_multiplier = 2.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("config json round trip") {
  auto cfg = PVCNNConfig::toy(0.5, 0.75, 4);
  cfg.devox_mode = DevoxMode::nearest;
  cfg.voxel_convs_per_block = 3;
  const nlohmann::json j = cfg;
  CHECK(j.get<PVCNNConfig>() == cfg);
}

TEST_CASE("build is deterministic and registry names are unique") {
  const auto a = build_pvcnn<float>(PVCNNConfig::desk(), 5);
  const auto b = build_pvcnn<float>(PVCNNConfig::desk(), 5);
  const auto c = build_pvcnn<float>(PVCNNConfig::desk(), 6);
  const auto ta = a.named_tensors(), tb = b.named_tensors(), tc = c.named_tensors();
  REQUIRE(ta.size() == tb.size());
  bool differs = false;
  std::set<std::string> names;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].first == tb[i].first);
    CHECK(ta[i].second == tb[i].second);
    differs = differs || !(ta[i].second == tc[i].second);
    names.insert(ta[i].first);
    CHECK(all_finite(ta[i].second));
  }
  CHECK(differs);
  CHECK(names.size() == ta.size());
  CHECK(names.contains("block0.voxel1.conv.weight"));
  CHECK(names.contains("head1.norm.running_var"));
  CHECK(names.contains("classifier.bias"));
}

TEST_CASE("closed-form parameter count matches the registry") {
  for (double w : {0.125, 0.25, 0.5, 1.0}) {
    for (std::size_t convs : {1, 2, 3}) {
      auto cfg = PVCNNConfig::toy(w, 1.0, 3);
      cfg.voxel_convs_per_block = convs;
      if (w == 1.0 && convs > 1) continue;  // too large to build quickly
      const auto params = build_pvcnn<float>(cfg, 1);
      CHECK(count_parameters(cfg) == params.trainable_count());
    }
  }
  const auto desk = PVCNNConfig::desk();
  CHECK(count_parameters(desk) == build_pvcnn<float>(desk, 1).trainable_count());
  CHECK(voxel_grid_scalars(desk) == 8 * 8 * 8 * 16 + 8 * 8 * 8 * 32 + 4 * 4 * 4 * 64);

  auto full = PVCNNConfig::toy(1.0);
  auto half = PVCNNConfig::toy(0.5);
  full.resolution_cap = half.resolution_cap = 0;
  CHECK(voxel_grid_scalars(full) == 2 * voxel_grid_scalars(half));
  auto low = full;
  low.resolution_multiplier = 0.5;
  CHECK(voxel_grid_scalars(full) == 8 * voxel_grid_scalars(low));
}

TEST_CASE("toy forward shape") {
  const auto params = build_pvcnn<float>(PVCNNConfig::toy(0.125, 1.0, 4), 2);
  const auto pc = generate_synthetic({Generator::uniform_cube, 256, 3, 2});
  const auto logits = pvcnn_forward(params, pc, Mode::train);
  CHECK(logits.shape() == Shape{256, 4});
  CHECK(all_finite(logits));
}

TEST_CASE("pvconv fusion identities") {
  std::mt19937_64 gen(41);
  const auto nc = normalize(oracle::random_cloud(32, 4, gen));
  Rng rng(3);
  auto block = PVConvBlock<double>::make(4, 8, 4, 2, DevoxMode::trilinear, rng);
  auto point = shared_mlp_forward(nc.features, block.point_linear, block.point_norm, 0.1, Mode::train).out;

  auto no_voxel = block;
  for (auto& layer : no_voxel.voxel_convs) {
    layer.conv.weight.fill(0.0);
    layer.conv.bias.fill(0.0);
    layer.norm.gamma.fill(0.0);
  }
  CHECK(pvconv_forward(no_voxel, nc, nc.features, Mode::train) == point);

  auto no_point = block;
  no_point.point_linear.weight.fill(0.0);
  no_point.point_linear.bias.fill(0.0);
  no_point.point_norm.gamma.fill(0.0);
  Tensor64 volume = grid_to_volume(voxelize(nc, nc.features, 4).values);
  for (const auto& layer : block.voxel_convs)
    volume = leaky_relu(batch_norm_forward(conv3d(volume, layer.conv), layer.norm, Mode::train).out, 0.1);
  const auto voxel = devoxelize_trilinear(volume_to_grid(volume), nc);
  CHECK(pvconv_forward(no_point, nc, nc.features, Mode::train) == voxel);

  const auto full = pvconv_forward(block, nc, nc.features, Mode::train);
  const auto manual = elementwise_add(voxel, point);
  for (std::size_t i = 0; i < full.size(); ++i) CHECK(std::abs(full[i] - manual[i]) <= 1e-12);
}

TEST_CASE("pvconv end-to-end grad check") {
  std::mt19937_64 gen(42);
  const auto nc = normalize(oracle::random_cloud(32, 4, gen));
  Rng rng(4);
  const auto block = PVConvBlock<double>::make(4, 8, 4, 2, DevoxMode::nearest, rng);
  const auto rep = grad_check(
      "pvconv", [&](const Tensor64& x) { return pvconv_forward(block, nc, x, Mode::train); },
      [&](const Tensor64& x, const Tensor64& g) {
        PVConvCache<double> cache;
        pvconv_forward(block, nc, x, Mode::train, &cache);
        auto grads = block.zeros_like();
        return pvconv_backward(block, nc, x, cache, g, grads);
      },
      nc.features);
  CHECK(rep.passed);
}

TEST_CASE("network is permutation equivariant and duplicate consistent") {
  auto params64 = build_pvcnn<double>(micro(), 9);
  std::mt19937_64 gen(43);
  // Warm the running statistics so eval mode is not the identity normalization.
  for (int i = 0; i < 3; ++i) {
    ModelCache<double> cache;
    pvcnn_forward(params64, oracle::random_cloud(20, 3, gen), Mode::train, &cache);
    update_running_stats(params64, cache);
  }
  const auto params32 = params64.cast<float>();
  for (int trial = 0; trial < 5; ++trial) {
    const auto pc = oracle::random_cloud(24, 3, gen);
    std::vector<std::size_t> perm(24);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    const auto pc_perm = permuted(pc, perm);
    for (Mode mode : {Mode::eval, Mode::train}) {
      const auto base = pvcnn_forward(params64, pc, mode);
      const auto moved = pvcnn_forward(params64, pc_perm, mode);
      const auto base32 = pvcnn_forward(params32, pc, mode);
      const auto moved32 = pvcnn_forward(params32, pc_perm, mode);
      for (std::size_t i = 0; i < 24; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
          CHECK(std::abs(moved.at({i, c}) - base.at({perm[i], c})) <= 1e-12);
          CHECK(std::abs(moved32.at({i, c}) - base32.at({perm[i], c})) <= 1e-6);
        }
    }

    std::vector<std::size_t> twice(48);
    for (std::size_t i = 0; i < 48; ++i) twice[i] = i % 24;
    const auto doubled = permuted(pc, twice);
    const auto base = pvcnn_forward(params32, pc, Mode::eval);
    const auto dup = pvcnn_forward(params32, doubled, Mode::eval);
    for (std::size_t i = 0; i < 48; ++i)
      for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(dup.at({i, c}) - base.at({i % 24, c})) <= 1e-6);
  }
}

TEST_CASE("micro network grad check") {
  const auto params = build_pvcnn<double>(micro(), 11);
  std::mt19937_64 gen(44);
  const auto nc = normalize(oracle::random_cloud(16, 3, gen));
  const auto rep = grad_check(
      "pvcnn", [&](const Tensor64& x) { return pvcnn_forward(params, nc, x, Mode::train); },
      [&](const Tensor64& x, const Tensor64& g) {
        ModelCache<double> cache;
        pvcnn_forward(params, nc, x, Mode::train, &cache);
        return pvcnn_backward(params, cache, g).input;
      },
      nc.features);
  CHECK(rep.passed);
}

TEST_CASE("checkpoint container round trip") {
  const auto params = build_pvcnn<float>(PVCNNConfig::desk(), 12);
  const auto prefix = std::filesystem::temp_directory_path() / "pvc_params_test";
  save_parameters(prefix, params.named_tensors());
  auto loaded = build_pvcnn<float>(PVCNNConfig::desk(), 99);
  loaded.assign(load_parameters<float>(prefix));
  const auto a = params.named_tensors(), b = loaded.named_tensors();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second == b[i].second);

  const auto manifest = nlohmann::json::parse(std::ifstream(prefix.string() + ".json"));
  CHECK(manifest.at("byte_order") == "little");
  CHECK(manifest.at("tensors").size() == a.size());

  CHECK_THROWS_AS(load_parameters<double>(prefix), CheckpointError);
  auto other = build_pvcnn<float>(micro(), 1);
  CHECK_THROWS(other.assign(load_parameters<float>(prefix)));

  {
    std::fstream f(prefix.string() + ".bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(17);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(load_parameters<float>(prefix), CheckpointError);
  std::filesystem::remove(prefix.string() + ".bin");
  CHECK_THROWS_AS(load_parameters<float>(prefix), CheckpointError);
  std::filesystem::remove(prefix.string() + ".json");
}
