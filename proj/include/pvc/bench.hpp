#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvc/access_counter.hpp"
#include "pvc/point_cloud.hpp"
#include "pvc/tensor.hpp"

namespace pvc {

/// k nearest neighbours of every point, row i = neighbours of point i.
struct KnnIndex {
  std::size_t k = 0;
  Tensor<std::int64_t> neighbors;  // [n, k]
};

/// Exact Euclidean KNN over normalized coordinates. Each point lists itself
/// first; the rest follow by distance, ties to the lower index. Every
/// point-pair distance counts as one sequential read.
KnnIndex knn_bruteforce(const NormalizedCloud& nc, std::size_t k, AccessCounter* counter = nullptr);

/// out[i, j] = features[neighbors[i, j]]; one random gather per entry.
template <typename T>
Tensor<T> gather_neighbors(const Tensor<T>& features, const KnnIndex& index, AccessCounter* counter = nullptr);

struct BenchRow {
  std::string config;
  std::size_t n = 0, k = 0, c = 0, r = 0;
  std::uint64_t random_gathers = 0;
  std::uint64_t random_scatters = 0;
  std::uint64_t sequential_reads = 0;
  double wall_time_ms = 0.0;
  std::uint64_t bytes_estimated = 0;

  std::uint64_t indexed_total() const { return random_gathers + random_scatters; }

  friend bool operator==(const BenchRow&, const BenchRow&) = default;
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

inline constexpr const char* kBenchCsvHeader =
    "config,n,k,c,r,random_gathers,random_scatters,sequential_reads,wall_time_ms,bytes_estimated";

std::string to_csv(const BenchReport& report);
BenchReport parse_bench_csv(const std::string& text);
nlohmann::json to_json(const BenchReport& report);

/// Voxelize then trilinearly devoxelize random c-channel features on `nc`
/// at resolution r, counting indexed accesses: n scatters + 8n gathers.
BenchRow count_voxel_path(const NormalizedCloud& nc, std::size_t r, std::size_t c, AccessCounter& counter,
                          std::uint64_t seed = 0);

/// KNN search followed by the neighbour gather: k*n random gathers.
BenchRow count_knn_path(const NormalizedCloud& nc, std::size_t k, std::size_t c, AccessCounter& counter,
                        std::uint64_t seed = 0);

struct Comparison {
  BenchReport report;
  BenchRow knn;
  BenchRow voxel;

  /// k*n / n: neighbour gathers per voxel scatter.
  double gather_per_scatter_ratio() const;
  /// k*n / 9n: all KNN indexed accesses over all voxel-path indexed accesses.
  double indexed_access_ratio() const;
};

/// Both pipelines on one uniform_cube cloud of n points.
Comparison bench_compare(std::size_t n, std::size_t k, std::size_t c, std::size_t r, std::uint64_t seed);
nlohmann::json to_json(const Comparison& cmp);

struct SweepRow {
  std::size_t r = 0;
  std::size_t n = 0;
  std::size_t distinguishable = 0;
  double fraction = 0.0;
  std::uint64_t bytes_estimated = 0;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepReport {
  std::vector<SweepRow> rows;
};

inline constexpr const char* kSweepCsvHeader = "r,n,distinguishable,fraction,bytes_estimated";

/// Distinguishable points and analytic grid memory r^3 * c * scalar_bytes
/// for every resolution.
SweepReport sweep_distinguishable(const NormalizedCloud& nc, const std::vector<std::size_t>& resolutions,
                                  std::size_t c = 1, std::size_t scalar_bytes = 4);

std::string to_csv(const SweepReport& report);
SweepReport parse_sweep_csv(const std::string& text);
nlohmann::json to_json(const SweepReport& report);

}  // namespace pvc
