#include "pvc/pvcnn.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace pvc {

// ---------------------------------------------------------------------------
// Config

std::size_t PVCNNConfig::effective_channels(std::size_t base) const {
  const auto scaled = std::lround(width_multiplier * static_cast<double>(base));
  return static_cast<std::size_t>(std::max<long>(1, scaled));
}

std::size_t PVCNNConfig::effective_resolution(std::size_t base) const {
  const auto scaled = static_cast<std::size_t>(std::max<long>(1, std::lround(resolution_multiplier * static_cast<double>(base))));
  return resolution_cap == 0 ? scaled : std::min(scaled, resolution_cap);
}

void PVCNNConfig::validate() const {
  static const std::set<double> widths{0.125, 0.25, 0.5, 1.0};
  static const std::set<double> resolutions{0.5, 0.75, 1.0};
  if (blocks.empty()) throw std::invalid_argument("config needs at least one PVConv block");
  for (const auto& b : blocks) {
    if (b.channels == 0 || b.resolution == 0) throw std::invalid_argument("block channels and resolution must be positive");
  }
  if (!widths.contains(width_multiplier)) {
    throw std::invalid_argument(fmt::format("width_multiplier {} not in {{0.125, 0.25, 0.5, 1}}", width_multiplier));
  }
  if (!resolutions.contains(resolution_multiplier)) {
    throw std::invalid_argument(
        fmt::format("resolution_multiplier {} not in {{0.5, 0.75, 1}}", resolution_multiplier));
  }
  if (num_classes == 0) throw std::invalid_argument("num_classes must be at least 1");
  if (in_channels == 0) throw std::invalid_argument("in_channels must be at least 1");
  if (voxel_convs_per_block == 0) throw std::invalid_argument("voxel_convs_per_block must be at least 1");
  for (std::size_t w : head_widths)
    if (w == 0) throw std::invalid_argument("head widths must be positive");
}

PVCNNConfig PVCNNConfig::toy(double width_multiplier, double resolution_multiplier, std::size_t num_classes) {
  PVCNNConfig cfg;
  cfg.blocks = {{64, 32}, {128, 32}, {1024, 32}};
  cfg.width_multiplier = width_multiplier;
  cfg.resolution_multiplier = resolution_multiplier;
  cfg.num_classes = num_classes;
  cfg.head_widths = {256, 128};
  cfg.resolution_cap = 8;
  return cfg;
}

PVCNNConfig PVCNNConfig::desk(std::size_t num_classes) {
  PVCNNConfig cfg;
  cfg.blocks = {{16, 8}, {32, 8}, {64, 4}};
  cfg.num_classes = num_classes;
  cfg.head_widths = {64, 32};
  return cfg;
}

void to_json(nlohmann::json& j, const PVCNNConfig& cfg) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : cfg.blocks) blocks.push_back({{"channels", b.channels}, {"resolution", b.resolution}});
  j = nlohmann::json{{"blocks", blocks},
                     {"width_multiplier", cfg.width_multiplier},
                     {"resolution_multiplier", cfg.resolution_multiplier},
                     {"num_classes", cfg.num_classes},
                     {"head_widths", cfg.head_widths},
                     {"in_channels", cfg.in_channels},
                     {"voxel_convs_per_block", cfg.voxel_convs_per_block},
                     {"devox_mode", devox_mode_name(cfg.devox_mode)},
                     {"resolution_cap", cfg.resolution_cap}};
}

void from_json(const nlohmann::json& j, PVCNNConfig& cfg) {
  cfg.blocks.clear();
  for (const auto& b : j.at("blocks")) {
    cfg.blocks.push_back({b.at("channels").get<std::size_t>(), b.at("resolution").get<std::size_t>()});
  }
  j.at("width_multiplier").get_to(cfg.width_multiplier);
  j.at("resolution_multiplier").get_to(cfg.resolution_multiplier);
  j.at("num_classes").get_to(cfg.num_classes);
  j.at("head_widths").get_to(cfg.head_widths);
  j.at("in_channels").get_to(cfg.in_channels);
  j.at("voxel_convs_per_block").get_to(cfg.voxel_convs_per_block);
  cfg.devox_mode = parse_devox_mode(j.at("devox_mode").get<std::string>());
  j.at("resolution_cap").get_to(cfg.resolution_cap);
}

// ---------------------------------------------------------------------------
// Block

template <typename T>
PVConvBlock<T> PVConvBlock<T>::make(std::size_t c_in, std::size_t c_out, std::size_t r, std::size_t num_convs,
                                    DevoxMode devox_mode, Rng& rng) {
  if (r == 0) throw std::invalid_argument("PVConv resolution must be at least 1");
  if (num_convs == 0) throw std::invalid_argument("PVConv needs at least one voxel convolution");
  PVConvBlock block;
  block.c_in = c_in;
  block.c_out = c_out;
  block.r = r;
  block.devox_mode = devox_mode;
  for (std::size_t l = 0; l < num_convs; ++l) {
    block.voxel_convs.push_back(
        {Conv3dParams<T>::kaiming(l == 0 ? c_in : c_out, c_out, rng), BatchNormState<T>::identity(c_out)});
  }
  block.point_linear = LinearParams<T>::kaiming(c_in, c_out, rng);
  block.point_norm = BatchNormState<T>::identity(c_out);
  return block;
}

template <typename T>
PVConvBlock<T> PVConvBlock<T>::zeros_like() const {
  PVConvBlock z = *this;
  visit_block<T>(z, "", [](const std::string&, Tensor<T>& t, ParamKind) { t.fill(T{0}); });
  return z;
}

template <typename T>
void visit_block(PVConvBlock<T>& block, const std::string& prefix, const ParamVisitor<T>& visit) {
  for (std::size_t l = 0; l < block.voxel_convs.size(); ++l) {
    auto& layer = block.voxel_convs[l];
    const std::string p = fmt::format("{}voxel{}.", prefix, l);
    visit(p + "conv.weight", layer.conv.weight, ParamKind::trainable);
    visit(p + "conv.bias", layer.conv.bias, ParamKind::trainable);
    visit(p + "norm.gamma", layer.norm.gamma, ParamKind::trainable);
    visit(p + "norm.beta", layer.norm.beta, ParamKind::trainable);
    visit(p + "norm.running_mean", layer.norm.running_mean, ParamKind::buffer);
    visit(p + "norm.running_var", layer.norm.running_var, ParamKind::buffer);
  }
  visit(prefix + "point.linear.weight", block.point_linear.weight, ParamKind::trainable);
  visit(prefix + "point.linear.bias", block.point_linear.bias, ParamKind::trainable);
  visit(prefix + "point.norm.gamma", block.point_norm.gamma, ParamKind::trainable);
  visit(prefix + "point.norm.beta", block.point_norm.beta, ParamKind::trainable);
  visit(prefix + "point.norm.running_mean", block.point_norm.running_mean, ParamKind::buffer);
  visit(prefix + "point.norm.running_var", block.point_norm.running_var, ParamKind::buffer);
}

template <typename T>
Tensor<T> pvconv_forward(const PVConvBlock<T>& block, const NormalizedCloud& nc, const Tensor<T>& x, Mode mode,
                         PVConvCache<T>* cache) {
  if (x.rank() != 2 || x.dim(0) != nc.size() || x.dim(1) != block.c_in) {
    throw ShapeError(fmt::format("pvconv_forward: input {} does not match {} points x {} channels",
                                 shape_to_string(x.shape()), nc.size(), block.c_in));
  }
  PVConvCache<T> local;
  PVConvCache<T>& c = cache ? *cache : local;
  c = PVConvCache<T>{};

  c.grid = voxelize(nc, x, block.r);
  Tensor<T> volume = grid_to_volume(c.grid.values);
  for (const auto& layer : block.voxel_convs) {
    c.conv_inputs.push_back(volume);
    auto normed = batch_norm_forward(conv3d(volume, layer.conv), layer.norm, mode);
    volume = leaky_relu(normed.out, block.activation_slope);
    c.norm_caches.push_back(std::move(normed.cache));
    c.pre_acts.push_back(std::move(normed.out));
  }
  const Tensor<T> voxel_features = devoxelize(block.devox_mode, volume_to_grid(volume), nc);

  auto point = shared_mlp_forward(x, block.point_linear, block.point_norm, block.activation_slope, mode);
  c.point = std::move(point.cache);
  return elementwise_add(voxel_features, point.out);
}

template <typename T>
Tensor<T> pvconv_backward(const PVConvBlock<T>& block, const NormalizedCloud& nc, const Tensor<T>& x,
                          const PVConvCache<T>& cache, const Tensor<T>& grad_out, PVConvBlock<T>& grads) {
  const T slope = block.activation_slope;

  auto point = shared_mlp_backward(x, block.point_linear, block.point_norm, cache.point, grad_out, slope);
  axpy_inplace(grads.point_linear.weight, point.linear.weight);
  axpy_inplace(grads.point_linear.bias, point.linear.bias);
  axpy_inplace(grads.point_norm.gamma, point.norm.gamma);
  axpy_inplace(grads.point_norm.beta, point.norm.beta);
  Tensor<T> grad_x = std::move(point.input);

  Tensor<T> grad_volume = grid_to_volume(devoxelize_backward(block.devox_mode, grad_out, nc, block.r));
  for (std::size_t l = block.voxel_convs.size(); l-- > 0;) {
    const auto& layer = block.voxel_convs[l];
    auto& layer_grads = grads.voxel_convs[l];
    const Tensor<T> grad_pre = leaky_relu_backward(cache.pre_acts[l], grad_volume, slope);
    auto norm = batch_norm_backward(grad_pre, layer.norm, cache.norm_caches[l]);
    axpy_inplace(layer_grads.norm.gamma, norm.gamma);
    axpy_inplace(layer_grads.norm.beta, norm.beta);
    auto conv = conv3d_backward(cache.conv_inputs[l], layer.conv, norm.input);
    axpy_inplace(layer_grads.conv.weight, conv.weight);
    axpy_inplace(layer_grads.conv.bias, conv.bias);
    grad_volume = std::move(conv.input);
  }
  axpy_inplace(grad_x, voxelize_backward(volume_to_grid(grad_volume), nc, cache.grid));
  return grad_x;
}

template <typename T>
void update_running_stats(PVConvBlock<T>& block, const PVConvCache<T>& cache) {
  for (std::size_t l = 0; l < block.voxel_convs.size(); ++l) update_running_stats(block.voxel_convs[l].norm, cache.norm_caches[l]);
  update_running_stats(block.point_norm, cache.point.norm);
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
void ModelParams<T>::visit(const ParamVisitor<T>& visitor) {
  for (std::size_t b = 0; b < blocks.size(); ++b) visit_block(blocks[b], fmt::format("block{}.", b), visitor);
  for (std::size_t h = 0; h < head.size(); ++h) {
    const std::string p = fmt::format("head{}.", h);
    visitor(p + "linear.weight", head[h].linear.weight, ParamKind::trainable);
    visitor(p + "linear.bias", head[h].linear.bias, ParamKind::trainable);
    visitor(p + "norm.gamma", head[h].norm.gamma, ParamKind::trainable);
    visitor(p + "norm.beta", head[h].norm.beta, ParamKind::trainable);
    visitor(p + "norm.running_mean", head[h].norm.running_mean, ParamKind::buffer);
    visitor(p + "norm.running_var", head[h].norm.running_var, ParamKind::buffer);
  }
  visitor("classifier.weight", classifier.weight, ParamKind::trainable);
  visitor("classifier.bias", classifier.bias, ParamKind::trainable);
}

template <typename T>
void ModelParams<T>::visit(const std::function<void(const std::string&, const Tensor<T>&, ParamKind)>& visitor) const {
  const_cast<ModelParams*>(this)->visit(
      ParamVisitor<T>([&](const std::string& name, Tensor<T>& t, ParamKind kind) { visitor(name, t, kind); }));
}

template <typename T>
NamedTensors<T> ModelParams<T>::named_tensors() const {
  NamedTensors<T> out;
  visit([&](const std::string& name, const Tensor<T>& t, ParamKind) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
void ModelParams<T>::assign(const NamedTensors<T>& tensors) {
  std::size_t i = 0;
  visit(ParamVisitor<T>([&](const std::string& name, Tensor<T>& t, ParamKind) {
    if (i >= tensors.size()) throw std::invalid_argument("parameter set is missing tensor " + name);
    const auto& [other_name, other] = tensors[i++];
    if (other_name != name) throw std::invalid_argument("expected tensor " + name + ", found " + other_name);
    if (other.shape() != t.shape()) {
      throw std::invalid_argument(fmt::format("tensor {} has shape {}, model expects {}", name,
                                              shape_to_string(other.shape()), shape_to_string(t.shape())));
    }
    t = other;
  }));
  if (i != tensors.size()) throw std::invalid_argument("parameter set has extra tensors");
}

template <typename T>
std::size_t ModelParams<T>::trainable_count() const {
  std::size_t total = 0;
  visit([&](const std::string&, const Tensor<T>& t, ParamKind kind) {
    if (kind == ParamKind::trainable) total += t.size();
  });
  return total;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams z = *this;
  z.visit(ParamVisitor<T>([](const std::string&, Tensor<T>& t, ParamKind) { t.fill(T{0}); }));
  return z;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out = build_pvcnn<U>(config, 0);
  NamedTensors<U> converted;
  for (const auto& [name, t] : named_tensors()) converted.emplace_back(name, t.template cast<U>());
  out.assign(converted);
  return out;
}

template <typename T>
ModelParams<T> build_pvcnn(const PVCNNConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams<T> params;
  params.config = cfg;
  std::size_t c_in = cfg.in_channels;
  std::size_t concat_width = 0;
  for (const auto& spec : cfg.blocks) {
    const std::size_t c_out = cfg.effective_channels(spec.channels);
    params.blocks.push_back(PVConvBlock<T>::make(c_in, c_out, cfg.effective_resolution(spec.resolution),
                                                 cfg.voxel_convs_per_block, cfg.devox_mode, rng));
    concat_width += c_out;
    c_in = c_out;
  }
  std::size_t width = concat_width + c_in;
  for (std::size_t base : cfg.head_widths) {
    const std::size_t w = cfg.effective_channels(base);
    params.head.push_back({LinearParams<T>::kaiming(width, w, rng), BatchNormState<T>::identity(w)});
    width = w;
  }
  params.classifier = LinearParams<T>::kaiming(width, cfg.num_classes, rng);
  return params;
}

std::size_t count_parameters(const PVCNNConfig& cfg) {
  cfg.validate();
  const std::size_t convs = cfg.voxel_convs_per_block;
  std::size_t total = 0, c_in = cfg.in_channels, concat_width = 0;
  for (const auto& spec : cfg.blocks) {
    const std::size_t c = cfg.effective_channels(spec.channels);
    total += 27 * c_in * c + c + 2 * c;               // first conv, bias, BN affine
    total += (convs - 1) * (27 * c * c + c + 2 * c);  // remaining convs
    total += c_in * c + c + 2 * c;                    // point branch linear and BN affine
    concat_width += c;
    c_in = c;
  }
  std::size_t width = concat_width + c_in;
  for (std::size_t base : cfg.head_widths) {
    const std::size_t w = cfg.effective_channels(base);
    total += width * w + w + 2 * w;
    width = w;
  }
  total += width * cfg.num_classes + cfg.num_classes;
  return total;
}

std::size_t voxel_grid_scalars(const PVCNNConfig& cfg) {
  std::size_t total = 0;
  for (const auto& spec : cfg.blocks) {
    const std::size_t r = cfg.effective_resolution(spec.resolution);
    total += r * r * r * cfg.effective_channels(spec.channels);
  }
  return total;
}

template <typename T>
Tensor<T> pvcnn_forward(const ModelParams<T>& params, const NormalizedCloud& nc, const Tensor<T>& features,
                        Mode mode, ModelCache<T>* cache) {
  const std::size_t n = nc.size();
  if (features.rank() != 2 || features.dim(0) != n || features.dim(1) != params.config.in_channels) {
    throw ShapeError(fmt::format("pvcnn_forward: features {} do not match {} points x {} channels",
                                 shape_to_string(features.shape()), n, params.config.in_channels));
  }
  ModelCache<T> local;
  ModelCache<T>& c = cache ? *cache : local;
  c = ModelCache<T>{};
  c.nc = nc;
  c.input = features;

  Tensor<T> x = features;
  c.blocks.resize(params.blocks.size());
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    c.block_inputs.push_back(x);
    x = pvconv_forward(params.blocks[b], nc, x, mode, &c.blocks[b]);
    c.block_outputs.push_back(x);
  }

  c.global = reduce_max_over_points(x);
  const std::size_t g = c.global.values.size();
  Tensor<T> tiled({n, g});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(c.global.values.data().begin(), g, tiled.data().begin() + i * g);
  std::vector<const Tensor<T>*> parts;
  for (const auto& out : c.block_outputs) parts.push_back(&out);
  parts.push_back(&tiled);
  Tensor<T> h = concat_columns(parts);

  const T slope = static_cast<T>(kLeakySlope);
  for (const auto& layer : params.head) {
    c.head_inputs.push_back(h);
    auto out = shared_mlp_forward(h, layer.linear, layer.norm, slope, mode);
    c.head.push_back(std::move(out.cache));
    h = std::move(out.out);
  }
  c.classifier_input = h;
  return linear(h, params.classifier);
}

template <typename T>
Tensor<T> pvcnn_forward(const ModelParams<T>& params, const PointCloud& pc, Mode mode, ModelCache<T>* cache) {
  const NormalizedCloud nc = normalize(pc);
  return pvcnn_forward(params, nc, pc.features.template cast<T>(), mode, cache);
}

template <typename T>
ModelGrads<T> pvcnn_backward(const ModelParams<T>& params, const ModelCache<T>& cache, const Tensor<T>& grad_logits) {
  ModelGrads<T> grads{params.zeros_like(), Tensor<T>()};
  const T slope = static_cast<T>(kLeakySlope);

  auto cls = linear_backward(cache.classifier_input, params.classifier, grad_logits);
  grads.params.classifier.weight = std::move(cls.weight);
  grads.params.classifier.bias = std::move(cls.bias);
  Tensor<T> grad_h = std::move(cls.input);

  for (std::size_t i = params.head.size(); i-- > 0;) {
    auto mlp = shared_mlp_backward(cache.head_inputs[i], params.head[i].linear, params.head[i].norm, cache.head[i],
                                   grad_h, slope);
    auto& hg = grads.params.head[i];
    hg.linear.weight = std::move(mlp.linear.weight);
    hg.linear.bias = std::move(mlp.linear.bias);
    hg.norm.gamma = std::move(mlp.norm.gamma);
    hg.norm.beta = std::move(mlp.norm.beta);
    grad_h = std::move(mlp.input);
  }

  std::vector<std::size_t> widths;
  for (const auto& out : cache.block_outputs) widths.push_back(out.dim(1));
  widths.push_back(cache.global.values.size());
  auto pieces = split_columns(grad_h, widths);

  const std::size_t n = cache.nc.size();
  const Tensor<T>& grad_tiled = pieces.back();
  const std::size_t g = grad_tiled.dim(1);
  Tensor<T> grad_global({g});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < g; ++j) grad_global[j] += grad_tiled[i * g + j];

  const std::size_t last = params.blocks.size() - 1;
  axpy_inplace(pieces[last], reduce_max_backward(grad_global, cache.global.argmax, n));

  Tensor<T> grad_x = std::move(pieces[last]);
  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    grad_x = pvconv_backward(params.blocks[b], cache.nc, cache.block_inputs[b], cache.blocks[b], grad_x,
                             grads.params.blocks[b]);
    if (b > 0) axpy_inplace(grad_x, pieces[b - 1]);
  }
  grads.input = std::move(grad_x);
  return grads;
}

template <typename T>
void update_running_stats(ModelParams<T>& params, const ModelCache<T>& cache) {
  for (std::size_t b = 0; b < params.blocks.size(); ++b) update_running_stats(params.blocks[b], cache.blocks[b]);
  for (std::size_t h = 0; h < params.head.size(); ++h) update_running_stats(params.head[h].norm, cache.head[h].norm);
}

namespace {
template <typename T>
std::vector<std::int32_t> argmax_rows_impl(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::int32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}
}  // namespace

std::vector<std::int32_t> argmax_rows(const Tensor<float>& logits) { return argmax_rows_impl(logits); }
std::vector<std::int32_t> argmax_rows(const Tensor<double>& logits) { return argmax_rows_impl(logits); }

#define PVC_INSTANTIATE_PVCNN(T)                                                                                  \
  template struct PVConvBlock<T>;                                                                                 \
  template struct ModelParams<T>;                                                                                 \
  template void visit_block(PVConvBlock<T>&, const std::string&, const ParamVisitor<T>&);                         \
  template Tensor<T> pvconv_forward(const PVConvBlock<T>&, const NormalizedCloud&, const Tensor<T>&, Mode,        \
                                    PVConvCache<T>*);                                                             \
  template Tensor<T> pvconv_backward(const PVConvBlock<T>&, const NormalizedCloud&, const Tensor<T>&,             \
                                     const PVConvCache<T>&, const Tensor<T>&, PVConvBlock<T>&);                   \
  template void update_running_stats(PVConvBlock<T>&, const PVConvCache<T>&);                                     \
  template ModelParams<T> build_pvcnn(const PVCNNConfig&, std::uint64_t);                                         \
  template Tensor<T> pvcnn_forward(const ModelParams<T>&, const NormalizedCloud&, const Tensor<T>&, Mode,         \
                                   ModelCache<T>*);                                                               \
  template Tensor<T> pvcnn_forward(const ModelParams<T>&, const PointCloud&, Mode, ModelCache<T>*);               \
  template ModelGrads<T> pvcnn_backward(const ModelParams<T>&, const ModelCache<T>&, const Tensor<T>&);           \
  template void update_running_stats(ModelParams<T>&, const ModelCache<T>&);

PVC_INSTANTIATE_PVCNN(float)
PVC_INSTANTIATE_PVCNN(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;

}  // namespace pvc
