#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pvc/access_counter.hpp"
#include "pvc/point_cloud.hpp"
#include "pvc/tensor.hpp"

namespace pvc {

using VoxelCoord = std::array<std::size_t, 3>;

/// floor(p * r) per axis, with the closed upper face (p == 1) folded into
/// the last cell.
VoxelCoord voxel_coord(const std::array<double, 3>& p_hat, std::size_t r);

inline std::size_t voxel_flat(const VoxelCoord& v, std::size_t r) { return (v[0] * r + v[1]) * r + v[2]; }

/// Flat voxel index of every point of `nc` at resolution r.
std::vector<std::size_t> voxel_indices(const NormalizedCloud& nc, std::size_t r);

/// Dense r^3 grid of per-voxel feature means (channels last) together with
/// the number of points that landed in each voxel.
template <typename T>
struct VoxelGrid {
  std::size_t r = 0;
  std::size_t c = 0;
  Tensor<T> values;                    // [r, r, r, c]
  Tensor<std::int64_t> counts;         // [r, r, r]
  std::vector<std::size_t> point_voxel;  // flat voxel index per point
};

/// Average-scatter of per-point features into an r^3 grid. Points are
/// accumulated in ascending index order; empty voxels stay zero. Counts one
/// random scatter per point on `counter` when given.
template <typename T>
VoxelGrid<T> voxelize(const NormalizedCloud& nc, const Tensor<T>& features, std::size_t r,
                      AccessCounter* counter = nullptr);

VoxelGrid<double> voxelize(const NormalizedCloud& nc, std::size_t r);

/// Transpose of voxelize w.r.t. features: point k receives
/// cotangent[voxel(k)] / count[voxel(k)].
template <typename T>
Tensor<T> voxelize_backward(const Tensor<T>& cotangent, const NormalizedCloud& nc, const VoxelGrid<T>& grid);

struct TrilinearWeights {
  VoxelCoord base{};
  std::array<double, 8> weights{};

  /// Voxel of corner i (bit 2: +x, bit 1: +y, bit 0: +z), clamped into
  /// the grid so r == 1 collapses every corner onto voxel 0.
  VoxelCoord corner(std::size_t i, std::size_t r) const;
};

/// Interpolation weights with samples at voxel centers (u + 0.5) / r.
TrilinearWeights trilinear_weights(const std::array<double, 3>& p_hat, std::size_t r);

enum class DevoxMode { trilinear, nearest };

std::string devox_mode_name(DevoxMode mode);
DevoxMode parse_devox_mode(const std::string& name);

/// Reads grid values [r, r, r, c] back at every point with trilinear
/// interpolation. Counts eight random gathers per point on `counter`.
template <typename T>
Tensor<T> devoxelize_trilinear(const Tensor<T>& grid_values, const NormalizedCloud& nc,
                               AccessCounter* counter = nullptr);

/// Scatters cotangent * weight into a grid-shaped gradient.
template <typename T>
Tensor<T> devoxelize_trilinear_backward(const Tensor<T>& cotangent, const NormalizedCloud& nc, std::size_t r);

/// Each point copies the value of the voxel it falls in.
template <typename T>
Tensor<T> devoxelize_nearest(const Tensor<T>& grid_values, const NormalizedCloud& nc);

template <typename T>
Tensor<T> devoxelize_nearest_backward(const Tensor<T>& cotangent, const NormalizedCloud& nc, std::size_t r);

template <typename T>
Tensor<T> devoxelize(DevoxMode mode, const Tensor<T>& grid_values, const NormalizedCloud& nc);

template <typename T>
Tensor<T> devoxelize_backward(DevoxMode mode, const Tensor<T>& cotangent, const NormalizedCloud& nc,
                              std::size_t r);

/// Number of points that occupy their voxel alone at resolution r.
std::size_t count_distinguishable(const NormalizedCloud& nc, std::size_t r);

/// [r, r, r, c] <-> [1, c, r, r, r] for feeding the grid to conv3d.
template <typename T>
Tensor<T> grid_to_volume(const Tensor<T>& grid_values);

template <typename T>
Tensor<T> volume_to_grid(const Tensor<T>& volume);

}  // namespace pvc
