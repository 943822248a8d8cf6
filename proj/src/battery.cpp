#include "pvc/battery.hpp"

#include <algorithm>
#include <stdexcept>

#include "pvc/metrics.hpp"
#include "pvc/nn.hpp"
#include "pvc/pvcnn.hpp"
#include "pvc/rng.hpp"
#include "pvc/voxel.hpp"

namespace pvc {

namespace {

Tensor64 random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Magnitudes in [0.05, 1] with random sign: at least 5e-2 from the kink.
Tensor64 off_kink_tensor(Shape shape, Rng& rng) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
  return t;
}

NormalizedCloud random_cloud(std::size_t n, std::uint64_t seed, std::size_t c = 3) {
  PointCloud pc = generate_synthetic({Generator::uniform_cube, n, seed, 1});
  Rng rng(seed + 1);
  pc.features = random_tensor({n, c}, rng);
  return normalize(pc);
}

GradCheckReport check_voxelize(const GradCheckOptions& opt) {
  const NormalizedCloud nc = random_cloud(20, 11, 2);
  const std::size_t r = 3;
  const auto grid = voxelize(nc, nc.features, r);
  return grad_check(
      "voxelize", [&](const Tensor64& f) { return voxelize(nc, f, r).values; },
      [&](const Tensor64&, const Tensor64& g) { return voxelize_backward(g, nc, grid); }, nc.features, opt);
}

GradCheckReport check_devoxelize(DevoxMode mode, const GradCheckOptions& opt) {
  const NormalizedCloud nc = random_cloud(24, 12, 2);
  const std::size_t r = 4;
  Rng rng(13);
  const Tensor64 grid = random_tensor({r, r, r, 2}, rng);
  return grad_check(
      "devoxelize_" + devox_mode_name(mode), [&](const Tensor64& v) { return devoxelize(mode, v, nc); },
      [&](const Tensor64&, const Tensor64& g) { return devoxelize_backward(mode, g, nc, r); }, grid, opt);
}

GradCheckReport check_conv3d(const GradCheckOptions& opt) {
  Rng rng(21);
  const Tensor64 x = random_tensor({1, 2, 4, 4, 4}, rng);
  Conv3dParams<double> p{random_tensor({3, 2, 3, 3, 3}, rng), random_tensor({3}, rng)};
  std::vector<GradCheckReport> parts;
  parts.push_back(grad_check(
      "conv3d.input", [&](const Tensor64& in) { return conv3d(in, p); },
      [&](const Tensor64& in, const Tensor64& g) { return conv3d_backward(in, p, g).input; }, x, opt));
  parts.push_back(grad_check(
      "conv3d.weight",
      [&](const Tensor64& w) { return conv3d(x, Conv3dParams<double>{w, p.bias}); },
      [&](const Tensor64& w, const Tensor64& g) { return conv3d_backward(x, Conv3dParams<double>{w, p.bias}, g).weight; },
      p.weight, opt));
  parts.push_back(grad_check(
      "conv3d.bias", [&](const Tensor64& b) { return conv3d(x, Conv3dParams<double>{p.weight, b}); },
      [&](const Tensor64& b, const Tensor64& g) { return conv3d_backward(x, Conv3dParams<double>{p.weight, b}, g).bias; },
      p.bias, opt));
  return merge_reports("conv3d", parts);
}

GradCheckReport check_batch_norm(const GradCheckOptions& opt) {
  Rng rng(31);
  const Tensor64 x = random_tensor({2, 3, 3, 3, 3}, rng);
  auto state = BatchNormState<double>::identity(3);
  state.gamma = random_tensor({3}, rng, 0.5, 1.5);
  state.beta = random_tensor({3}, rng);
  state.running_mean = random_tensor({3}, rng);
  state.running_var = random_tensor({3}, rng, 0.5, 2.0);

  auto with = [&](const Tensor64* gamma, const Tensor64* beta) {
    auto s = state;
    if (gamma) s.gamma = *gamma;
    if (beta) s.beta = *beta;
    return s;
  };
  std::vector<GradCheckReport> parts;
  for (Mode mode : {Mode::train, Mode::eval}) {
    parts.push_back(grad_check(
        "batch_norm.input", [&](const Tensor64& in) { return batch_norm_forward(in, state, mode).out; },
        [&](const Tensor64& in, const Tensor64& g) {
          return batch_norm_backward(g, state, batch_norm_forward(in, state, mode).cache).input;
        },
        x, opt));
  }
  parts.push_back(grad_check(
      "batch_norm.gamma", [&](const Tensor64& gm) { return batch_norm_forward(x, with(&gm, nullptr), Mode::train).out; },
      [&](const Tensor64& gm, const Tensor64& g) {
        const auto s = with(&gm, nullptr);
        return batch_norm_backward(g, s, batch_norm_forward(x, s, Mode::train).cache).gamma;
      },
      state.gamma, opt));
  parts.push_back(grad_check(
      "batch_norm.beta", [&](const Tensor64& bt) { return batch_norm_forward(x, with(nullptr, &bt), Mode::train).out; },
      [&](const Tensor64& bt, const Tensor64& g) {
        const auto s = with(nullptr, &bt);
        return batch_norm_backward(g, s, batch_norm_forward(x, s, Mode::train).cache).beta;
      },
      state.beta, opt));
  return merge_reports("batch_norm", parts);
}

GradCheckReport check_leaky_relu(const GradCheckOptions& opt) {
  Rng rng(41);
  const Tensor64 x = off_kink_tensor({5, 7}, rng);
  const double slope = kLeakySlope;
  return grad_check(
      "leaky_relu", [&](const Tensor64& in) { return leaky_relu(in, slope); },
      [&](const Tensor64& in, const Tensor64& g) { return leaky_relu_backward(in, g, slope); }, x, opt);
}

GradCheckReport check_shared_mlp(const GradCheckOptions& opt) {
  Rng rng(51);
  const Tensor64 x = random_tensor({12, 4}, rng);
  const auto p = LinearParams<double>::kaiming(4, 5, rng);
  auto bn = BatchNormState<double>::identity(5);
  bn.gamma = random_tensor({5}, rng, 0.5, 1.5);
  bn.beta = random_tensor({5}, rng);
  const double slope = kLeakySlope;
  std::vector<GradCheckReport> parts;
  parts.push_back(grad_check(
      "shared_mlp.input", [&](const Tensor64& in) { return shared_mlp_forward(in, p, bn, slope, Mode::train).out; },
      [&](const Tensor64& in, const Tensor64& g) {
        return shared_mlp_backward(in, p, bn, shared_mlp_forward(in, p, bn, slope, Mode::train).cache, g, slope).input;
      },
      x, opt));
  parts.push_back(grad_check(
      "shared_mlp.weight",
      [&](const Tensor64& w) { return shared_mlp_forward(x, LinearParams<double>{w, p.bias}, bn, slope, Mode::train).out; },
      [&](const Tensor64& w, const Tensor64& g) {
        const LinearParams<double> q{w, p.bias};
        return shared_mlp_backward(x, q, bn, shared_mlp_forward(x, q, bn, slope, Mode::train).cache, g, slope)
            .linear.weight;
      },
      p.weight, opt));
  return merge_reports("shared_mlp", parts);
}

GradCheckReport check_pvconv(const GradCheckOptions& opt) {
  const NormalizedCloud nc = random_cloud(32, 61, 4);
  Rng rng(62);
  const auto block = PVConvBlock<double>::make(4, 8, 4, 2, DevoxMode::trilinear, rng);
  auto run = [&](const PVConvBlock<double>& b, const Tensor64& x, PVConvCache<double>* cache) {
    return pvconv_forward(b, nc, x, Mode::train, cache);
  };
  std::vector<GradCheckReport> parts;
  parts.push_back(grad_check(
      "pvconv.input", [&](const Tensor64& x) { return run(block, x, nullptr); },
      [&](const Tensor64& x, const Tensor64& g) {
        PVConvCache<double> cache;
        run(block, x, &cache);
        auto grads = block.zeros_like();
        return pvconv_backward(block, nc, x, cache, g, grads);
      },
      nc.features, opt));
  parts.push_back(grad_check(
      "pvconv.voxel_weight",
      [&](const Tensor64& w) {
        auto b = block;
        b.voxel_convs[0].conv.weight = w;
        return run(b, nc.features, nullptr);
      },
      [&](const Tensor64& w, const Tensor64& g) {
        auto b = block;
        b.voxel_convs[0].conv.weight = w;
        PVConvCache<double> cache;
        run(b, nc.features, &cache);
        auto grads = b.zeros_like();
        pvconv_backward(b, nc, nc.features, cache, g, grads);
        return grads.voxel_convs[0].conv.weight;
      },
      block.voxel_convs[0].conv.weight, opt));
  return merge_reports("pvconv", parts);
}

PVCNNConfig micro_config() {
  PVCNNConfig cfg;
  cfg.blocks = {{4, 4}, {6, 2}};
  cfg.head_widths = {8};
  cfg.num_classes = 3;
  return cfg;
}

GradCheckReport check_pvcnn(const GradCheckOptions& opt) {
  const NormalizedCloud nc = random_cloud(16, 71, 3);
  const auto params = build_pvcnn<double>(micro_config(), 72);
  auto logits_with = [&](const ModelParams<double>& p, const Tensor64& x, ModelCache<double>* cache) {
    return pvcnn_forward(p, nc, x, Mode::train, cache);
  };
  std::vector<GradCheckReport> parts;
  parts.push_back(grad_check(
      "pvcnn.input", [&](const Tensor64& x) { return logits_with(params, x, nullptr); },
      [&](const Tensor64& x, const Tensor64& g) {
        ModelCache<double> cache;
        logits_with(params, x, &cache);
        return pvcnn_backward(params, cache, g).input;
      },
      nc.features, opt));

  // One representative tensor from every stage of the network.
  for (const std::string name : {"block0.voxel0.conv.weight", "block1.point.linear.weight", "block1.voxel1.norm.gamma",
                                 "head0.linear.weight", "classifier.bias"}) {
    auto set_tensor = [&](const Tensor64& value) {
      auto p = params;
      p.visit(ParamVisitor<double>([&](const std::string& n, Tensor64& t, ParamKind) {
        if (n == name) t = value;
      }));
      return p;
    };
    Tensor64 initial;
    params.visit([&](const std::string& n, const Tensor64& t, ParamKind) {
      if (n == name) initial = t;
    });
    parts.push_back(grad_check(
        "pvcnn." + name, [&](const Tensor64& v) { return logits_with(set_tensor(v), nc.features, nullptr); },
        [&](const Tensor64& v, const Tensor64& g) {
          const auto p = set_tensor(v);
          ModelCache<double> cache;
          logits_with(p, nc.features, &cache);
          Tensor64 out;
          const auto grads = pvcnn_backward(p, cache, g);
          grads.params.visit([&](const std::string& n, const Tensor64& t, ParamKind) {
            if (n == name) out = t;
          });
          return out;
        },
        initial, opt));
  }
  return merge_reports("pvcnn", parts);
}

GradCheckReport check_cross_entropy(const GradCheckOptions& opt) {
  Rng rng(81);
  const Tensor64 logits = random_tensor({6, 4}, rng, -2.0, 2.0);
  const std::vector<std::int32_t> labels{0, 3, 1, 2, 2, 0};
  return grad_check(
      "cross_entropy",
      [&](const Tensor64& z) { return Tensor64({1}, std::vector<double>{cross_entropy(z, labels).loss}); },
      [&](const Tensor64& z, const Tensor64& g) { return scale(cross_entropy(z, labels).grad, g[0]); }, logits, opt);
}

}  // namespace

const std::vector<std::string>& gradcheck_op_names() {
  static const std::vector<std::string> names{"voxelize",   "devoxelize_trilinear", "devoxelize_nearest", "conv3d",
                                              "batch_norm", "leaky_relu",           "shared_mlp",         "pvconv",
                                              "pvcnn",      "cross_entropy"};
  return names;
}

std::vector<GradCheckReport> run_gradcheck_battery(const GradCheckOptions& options, const std::string& only) {
  if (!only.empty()) {
    const auto& names = gradcheck_op_names();
    if (std::find(names.begin(), names.end(), only) == names.end()) {
      throw std::invalid_argument("unknown gradcheck op '" + only + "'");
    }
  }
  std::vector<GradCheckReport> reports;
  auto want = [&](const char* name) { return only.empty() || only == name; };
  if (want("voxelize")) reports.push_back(check_voxelize(options));
  if (want("devoxelize_trilinear")) reports.push_back(check_devoxelize(DevoxMode::trilinear, options));
  if (want("devoxelize_nearest")) reports.push_back(check_devoxelize(DevoxMode::nearest, options));
  if (want("conv3d")) reports.push_back(check_conv3d(options));
  if (want("batch_norm")) reports.push_back(check_batch_norm(options));
  if (want("leaky_relu")) reports.push_back(check_leaky_relu(options));
  if (want("shared_mlp")) reports.push_back(check_shared_mlp(options));
  if (want("pvconv")) reports.push_back(check_pvconv(options));
  if (want("pvcnn")) reports.push_back(check_pvcnn(options));
  if (want("cross_entropy")) reports.push_back(check_cross_entropy(options));
  return reports;
}

}  // namespace pvc
