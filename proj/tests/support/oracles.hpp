#pragma once

// Slow, obviously-correct reference implementations used as test oracles.
// They deliberately avoid the library's own index helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "pvc/point_cloud.hpp"
#include "pvc/tensor.hpp"

namespace oracle {

using pvc::Tensor;
using pvc::Tensor64;

inline Tensor64 random_tensor(pvc::Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor64 t(std::move(shape));
  for (auto& v : t.data()) v = dist(gen);
  return t;
}

/// Raw cloud with coordinates in [-2, 3]^3 and c random features.
inline pvc::PointCloud random_cloud(std::size_t n, std::size_t c, std::mt19937_64& gen) {
  pvc::PointCloud pc;
  pc.coords = random_tensor({n, 3}, gen, -2.0, 3.0);
  pc.features = random_tensor({n, c}, gen);
  return pc;
}

inline Tensor64 matmul(const Tensor64& a, const Tensor64& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor64 out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
      out[i * n + j] = s;
    }
  return out;
}

/// Direct nested-loop 3x3x3 cross-correlation, stride 1, zero padding 1.
inline Tensor64 conv3d(const Tensor64& x, const Tensor64& w, const Tensor64& bias) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t Co = w.dim(0);
  Tensor64 out({B, Co, D, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t z = 0; z < D; ++z)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t xx = 0; xx < W; ++xx) {
            double s = bias[co];
            for (std::size_t ci = 0; ci < Ci; ++ci)
              for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                  for (int dx = -1; dx <= 1; ++dx) {
                    const long zz = static_cast<long>(z) + dz, yy = static_cast<long>(y) + dy,
                               xs = static_cast<long>(xx) + dx;
                    if (zz < 0 || yy < 0 || xs < 0 || zz >= static_cast<long>(D) || yy >= static_cast<long>(H) ||
                        xs >= static_cast<long>(W))
                      continue;
                    s += w.at({co, ci, static_cast<std::size_t>(dz + 1), static_cast<std::size_t>(dy + 1),
                               static_cast<std::size_t>(dx + 1)}) *
                         x.at({b, ci, static_cast<std::size_t>(zz), static_cast<std::size_t>(yy),
                               static_cast<std::size_t>(xs)});
                  }
            out.at({b, co, z, y, xx}) = s;
          }
  return out;
}

inline std::size_t cell(double p, std::size_t r) {
  const double f = std::floor(p * static_cast<double>(r));
  return static_cast<std::size_t>(std::min(f, static_cast<double>(r - 1)));
}

struct Grid {
  Tensor64 values;                    // [r, r, r, c]
  Tensor<std::int64_t> counts;        // [r, r, r]
};

/// Visits every voxel and sums the features of the points that land in it.
inline Grid voxelize(const Tensor64& coords_hat, const Tensor64& features, std::size_t r) {
  const std::size_t n = coords_hat.dim(0), c = features.dim(1);
  Grid g{Tensor64({r, r, r, c}), Tensor<std::int64_t>({r, r, r})};
  for (std::size_t u = 0; u < r; ++u)
    for (std::size_t v = 0; v < r; ++v)
      for (std::size_t w = 0; w < r; ++w) {
        std::int64_t count = 0;
        std::vector<double> acc(c, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
          if (cell(coords_hat[k * 3], r) == u && cell(coords_hat[k * 3 + 1], r) == v &&
              cell(coords_hat[k * 3 + 2], r) == w) {
            ++count;
            for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += features[k * c + ch];
          }
        }
        g.counts.at({u, v, w}) = count;
        for (std::size_t ch = 0; ch < c; ++ch) g.values.at({u, v, w, ch}) = count ? acc[ch] / count : 0.0;
      }
  return g;
}

/// Tent-function weight of voxel centre u for a point at p on one axis.
inline double axis_weight(double p, std::size_t u, std::size_t r) {
  const double q = std::clamp(p * static_cast<double>(r) - 0.5, 0.0, static_cast<double>(r - 1));
  return std::max(0.0, 1.0 - std::abs(q - static_cast<double>(u)));
}

/// Sums over the whole grid with separable tent weights.
inline Tensor64 devoxelize_trilinear(const Tensor64& grid, const Tensor64& coords_hat) {
  const std::size_t r = grid.dim(0), c = grid.dim(3), n = coords_hat.dim(0);
  Tensor64 out({n, c});
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t u = 0; u < r; ++u)
      for (std::size_t v = 0; v < r; ++v)
        for (std::size_t w = 0; w < r; ++w) {
          const double weight = axis_weight(coords_hat[k * 3], u, r) * axis_weight(coords_hat[k * 3 + 1], v, r) *
                                axis_weight(coords_hat[k * 3 + 2], w, r);
          if (weight == 0.0) continue;
          for (std::size_t ch = 0; ch < c; ++ch) out[k * c + ch] += weight * grid.at({u, v, w, ch});
        }
  return out;
}

inline Tensor64 devoxelize_nearest(const Tensor64& grid, const Tensor64& coords_hat) {
  const std::size_t r = grid.dim(0), c = grid.dim(3), n = coords_hat.dim(0);
  Tensor64 out({n, c});
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t ch = 0; ch < c; ++ch)
      out[k * c + ch] = grid.at({cell(coords_hat[k * 3], r), cell(coords_hat[k * 3 + 1], r),
                                 cell(coords_hat[k * 3 + 2], r), ch});
  return out;
}

/// Full sort of every candidate per row: self first, then distance, then index.
inline std::vector<std::vector<std::int64_t>> knn(const Tensor64& coords, std::size_t k) {
  const std::size_t n = coords.dim(0);
  std::vector<std::vector<std::int64_t>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      double d = 0.0;
      for (std::size_t a = 0; a < 3; ++a) d += std::pow(coords[i * 3 + a] - coords[j * 3 + a], 2);
      cand.emplace_back(i == j ? -1.0 : d, j);
    }
    std::sort(cand.begin(), cand.end());
    for (std::size_t j = 0; j < k; ++j) rows[i].push_back(static_cast<std::int64_t>(cand[j].second));
  }
  return rows;
}

/// Points alone in their voxel, via a std::map tally.
inline std::size_t distinguishable(const Tensor64& coords_hat, std::size_t r) {
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> tally;
  const std::size_t n = coords_hat.dim(0);
  for (std::size_t k = 0; k < n; ++k)
    ++tally[{cell(coords_hat[k * 3], r), cell(coords_hat[k * 3 + 1], r), cell(coords_hat[k * 3 + 2], r)}];
  std::size_t alone = 0;
  for (const auto& [key, count] : tally) alone += count == 1;
  return alone;
}

/// Part-averaged IoU with explicit std::set intersections.
inline double shape_miou(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt) {
  std::set<std::int32_t> classes(pred.begin(), pred.end());
  classes.insert(gt.begin(), gt.end());
  double total = 0.0;
  std::size_t used = 0;
  for (std::int32_t c : classes) {
    std::set<std::size_t> p, g, inter, uni;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c) p.insert(i);
      if (gt[i] == c) g.insert(i);
    }
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::inserter(inter, inter.begin()));
    std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::inserter(uni, uni.begin()));
    if (uni.empty()) continue;
    total += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    ++used;
  }
  return used ? total / static_cast<double>(used) : 1.0;
}

}  // namespace oracle
