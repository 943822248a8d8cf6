#include "pvc/voxel.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace pvc {

namespace {

std::array<double, 3> point_of(const NormalizedCloud& nc, std::size_t k) {
  return {nc.coords_hat[k * 3], nc.coords_hat[k * 3 + 1], nc.coords_hat[k * 3 + 2]};
}

void require_resolution(std::size_t r) {
  if (r == 0) throw std::invalid_argument("voxel resolution must be at least 1");
}

template <typename T>
std::size_t grid_resolution(const Tensor<T>& grid_values) {
  if (grid_values.rank() != 4 || grid_values.dim(0) != grid_values.dim(1) ||
      grid_values.dim(1) != grid_values.dim(2)) {
    throw ShapeError("expected a grid of shape [r, r, r, c], got " + shape_to_string(grid_values.shape()));
  }
  return grid_values.dim(0);
}

}  // namespace

VoxelCoord voxel_coord(const std::array<double, 3>& p_hat, std::size_t r) {
  VoxelCoord v{};
  for (std::size_t a = 0; a < 3; ++a) {
    const double scaled = std::floor(p_hat[a] * static_cast<double>(r));
    v[a] = scaled <= 0.0 ? 0 : std::min(static_cast<std::size_t>(scaled), r - 1);
  }
  return v;
}

std::vector<std::size_t> voxel_indices(const NormalizedCloud& nc, std::size_t r) {
  require_resolution(r);
  const std::size_t n = nc.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < n; ++k) idx[k] = voxel_flat(voxel_coord(point_of(nc, k), r), r);
  return idx;
}

template <typename T>
VoxelGrid<T> voxelize(const NormalizedCloud& nc, const Tensor<T>& features, std::size_t r,
                      AccessCounter* counter) {
  require_resolution(r);
  const std::size_t n = nc.size();
  if (features.rank() != 2 || features.dim(0) != n) {
    throw ShapeError(fmt::format("voxelize: features {} not row-aligned with {} points",
                                 shape_to_string(features.shape()), n));
  }
  const std::size_t c = features.dim(1);
  VoxelGrid<T> grid;
  grid.r = r;
  grid.c = c;
  grid.values = Tensor<T>({r, r, r, c});
  grid.counts = Tensor<std::int64_t>({r, r, r});
  grid.point_voxel = voxel_indices(nc, r);

  // Sums are kept in double so float32 grids do not depend on point order.
  std::vector<double> sums(r * r * r * c, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t v = grid.point_voxel[k];
    grid.counts[v] += 1;
    for (std::size_t ch = 0; ch < c; ++ch) sums[v * c + ch] += features[k * c + ch];
  }
  const std::size_t cells = r * r * r;
  for (std::size_t v = 0; v < cells; ++v) {
    if (grid.counts[v] == 0) continue;
    const double count = static_cast<double>(grid.counts[v]);
    for (std::size_t ch = 0; ch < c; ++ch) grid.values[v * c + ch] = static_cast<T>(sums[v * c + ch] / count);
  }
  if (counter) {
    counter->random_scatters += n;
    counter->sequential_reads += n;
  }
  return grid;
}

VoxelGrid<double> voxelize(const NormalizedCloud& nc, std::size_t r) { return voxelize(nc, nc.features, r); }

template <typename T>
Tensor<T> voxelize_backward(const Tensor<T>& cotangent, const NormalizedCloud& nc, const VoxelGrid<T>& grid) {
  const std::size_t r = grid.r, c = grid.c, n = nc.size();
  if (cotangent.shape() != Shape{r, r, r, c}) {
    throw ShapeError(fmt::format("voxelize_backward: cotangent {} does not match grid [{}x{}x{}x{}]",
                                 shape_to_string(cotangent.shape()), r, r, r, c));
  }
  if (grid.point_voxel.size() != n) throw ShapeError("voxelize_backward: grid was built from a different cloud");
  Tensor<T> grad({n, c});
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t v = grid.point_voxel[k];
    const T count = static_cast<T>(grid.counts[v]);
    for (std::size_t ch = 0; ch < c; ++ch) grad[k * c + ch] = cotangent[v * c + ch] / count;
  }
  return grad;
}

VoxelCoord TrilinearWeights::corner(std::size_t i, std::size_t r) const {
  return {std::min(base[0] + ((i >> 2) & 1), r - 1), std::min(base[1] + ((i >> 1) & 1), r - 1),
          std::min(base[2] + (i & 1), r - 1)};
}

TrilinearWeights trilinear_weights(const std::array<double, 3>& p_hat, std::size_t r) {
  require_resolution(r);
  for (double p : p_hat) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument(fmt::format("trilinear_weights: coordinate {} outside [0, 1]", p));
    }
  }
  TrilinearWeights tw;
  if (r == 1) {
    tw.weights[0] = 1.0;
    return tw;
  }
  std::array<double, 3> frac{};
  for (std::size_t a = 0; a < 3; ++a) {
    const double q = p_hat[a] * static_cast<double>(r) - 0.5;
    const double lo = std::clamp(std::floor(q), 0.0, static_cast<double>(r - 2));
    tw.base[a] = static_cast<std::size_t>(lo);
    frac[a] = std::clamp(q - lo, 0.0, 1.0);
  }
  for (std::size_t i = 0; i < 8; ++i) {
    const double wx = (i >> 2) & 1 ? frac[0] : 1.0 - frac[0];
    const double wy = (i >> 1) & 1 ? frac[1] : 1.0 - frac[1];
    const double wz = i & 1 ? frac[2] : 1.0 - frac[2];
    tw.weights[i] = wx * wy * wz;
  }
  return tw;
}

std::string devox_mode_name(DevoxMode mode) { return mode == DevoxMode::trilinear ? "trilinear" : "nearest"; }

DevoxMode parse_devox_mode(const std::string& name) {
  if (name == "trilinear") return DevoxMode::trilinear;
  if (name == "nearest") return DevoxMode::nearest;
  throw std::invalid_argument("unknown devoxelization mode '" + name + "'");
}

template <typename T>
Tensor<T> devoxelize_trilinear(const Tensor<T>& grid_values, const NormalizedCloud& nc, AccessCounter* counter) {
  const std::size_t r = grid_resolution(grid_values);
  const std::size_t c = grid_values.dim(3), n = nc.size();
  Tensor<T> out({n, c});
  for (std::size_t k = 0; k < n; ++k) {
    const TrilinearWeights tw = trilinear_weights(point_of(nc, k), r);
    for (std::size_t i = 0; i < 8; ++i) {
      const T w = static_cast<T>(tw.weights[i]);
      const std::size_t v = voxel_flat(tw.corner(i, r), r);
      for (std::size_t ch = 0; ch < c; ++ch) out[k * c + ch] += w * grid_values[v * c + ch];
    }
  }
  if (counter) {
    counter->random_gathers += 8 * n;
    counter->sequential_reads += n;
  }
  return out;
}

template <typename T>
Tensor<T> devoxelize_trilinear_backward(const Tensor<T>& cotangent, const NormalizedCloud& nc, std::size_t r) {
  require_resolution(r);
  const std::size_t n = nc.size();
  if (cotangent.rank() != 2 || cotangent.dim(0) != n) {
    throw ShapeError("devoxelize_trilinear_backward: cotangent must be n x c");
  }
  const std::size_t c = cotangent.dim(1);
  Tensor<T> grad({r, r, r, c});
  for (std::size_t k = 0; k < n; ++k) {
    const TrilinearWeights tw = trilinear_weights(point_of(nc, k), r);
    for (std::size_t i = 0; i < 8; ++i) {
      const T w = static_cast<T>(tw.weights[i]);
      const std::size_t v = voxel_flat(tw.corner(i, r), r);
      for (std::size_t ch = 0; ch < c; ++ch) grad[v * c + ch] += w * cotangent[k * c + ch];
    }
  }
  return grad;
}

template <typename T>
Tensor<T> devoxelize_nearest(const Tensor<T>& grid_values, const NormalizedCloud& nc) {
  const std::size_t r = grid_resolution(grid_values);
  const std::size_t c = grid_values.dim(3), n = nc.size();
  const auto idx = voxel_indices(nc, r);
  Tensor<T> out({n, c});
  for (std::size_t k = 0; k < n; ++k)
    std::copy_n(grid_values.data().begin() + idx[k] * c, c, out.data().begin() + k * c);
  return out;
}

template <typename T>
Tensor<T> devoxelize_nearest_backward(const Tensor<T>& cotangent, const NormalizedCloud& nc, std::size_t r) {
  const std::size_t n = nc.size();
  if (cotangent.rank() != 2 || cotangent.dim(0) != n) {
    throw ShapeError("devoxelize_nearest_backward: cotangent must be n x c");
  }
  const std::size_t c = cotangent.dim(1);
  const auto idx = voxel_indices(nc, r);
  Tensor<T> grad({r, r, r, c});
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t ch = 0; ch < c; ++ch) grad[idx[k] * c + ch] += cotangent[k * c + ch];
  return grad;
}

template <typename T>
Tensor<T> devoxelize(DevoxMode mode, const Tensor<T>& grid_values, const NormalizedCloud& nc) {
  return mode == DevoxMode::trilinear ? devoxelize_trilinear(grid_values, nc) : devoxelize_nearest(grid_values, nc);
}

template <typename T>
Tensor<T> devoxelize_backward(DevoxMode mode, const Tensor<T>& cotangent, const NormalizedCloud& nc,
                              std::size_t r) {
  return mode == DevoxMode::trilinear ? devoxelize_trilinear_backward(cotangent, nc, r)
                                      : devoxelize_nearest_backward(cotangent, nc, r);
}

std::size_t count_distinguishable(const NormalizedCloud& nc, std::size_t r) {
  auto idx = voxel_indices(nc, r);
  std::sort(idx.begin(), idx.end());
  std::size_t alone = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i + 1;
    while (j < idx.size() && idx[j] == idx[i]) ++j;
    if (j - i == 1) ++alone;
    i = j;
  }
  return alone;
}

template <typename T>
Tensor<T> grid_to_volume(const Tensor<T>& grid_values) {
  const std::size_t r = grid_resolution(grid_values);
  const std::size_t c = grid_values.dim(3), cells = r * r * r;
  Tensor<T> volume({1, c, r, r, r});
  for (std::size_t v = 0; v < cells; ++v)
    for (std::size_t ch = 0; ch < c; ++ch) volume[ch * cells + v] = grid_values[v * c + ch];
  return volume;
}

template <typename T>
Tensor<T> volume_to_grid(const Tensor<T>& volume) {
  if (volume.rank() != 5 || volume.dim(0) != 1 || volume.dim(2) != volume.dim(3) || volume.dim(3) != volume.dim(4)) {
    throw ShapeError("expected a volume of shape [1, c, r, r, r], got " + shape_to_string(volume.shape()));
  }
  const std::size_t c = volume.dim(1), r = volume.dim(2), cells = r * r * r;
  Tensor<T> grid({r, r, r, c});
  for (std::size_t v = 0; v < cells; ++v)
    for (std::size_t ch = 0; ch < c; ++ch) grid[v * c + ch] = volume[ch * cells + v];
  return grid;
}

#define PVC_INSTANTIATE_VOXEL(T)                                                                             \
  template VoxelGrid<T> voxelize(const NormalizedCloud&, const Tensor<T>&, std::size_t, AccessCounter*);     \
  template Tensor<T> voxelize_backward(const Tensor<T>&, const NormalizedCloud&, const VoxelGrid<T>&);       \
  template Tensor<T> devoxelize_trilinear(const Tensor<T>&, const NormalizedCloud&, AccessCounter*);         \
  template Tensor<T> devoxelize_trilinear_backward(const Tensor<T>&, const NormalizedCloud&, std::size_t);   \
  template Tensor<T> devoxelize_nearest(const Tensor<T>&, const NormalizedCloud&);                           \
  template Tensor<T> devoxelize_nearest_backward(const Tensor<T>&, const NormalizedCloud&, std::size_t);     \
  template Tensor<T> devoxelize(DevoxMode, const Tensor<T>&, const NormalizedCloud&);                        \
  template Tensor<T> devoxelize_backward(DevoxMode, const Tensor<T>&, const NormalizedCloud&, std::size_t);  \
  template Tensor<T> grid_to_volume(const Tensor<T>&);                                                       \
  template Tensor<T> volume_to_grid(const Tensor<T>&);

PVC_INSTANTIATE_VOXEL(float)
PVC_INSTANTIATE_VOXEL(double)

}  // namespace pvc
