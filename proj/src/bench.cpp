#include "pvc/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "pvc/rng.hpp"
#include "pvc/voxel.hpp"

namespace pvc {

KnnIndex knn_bruteforce(const NormalizedCloud& nc, std::size_t k, AccessCounter* counter) {
  const std::size_t n = nc.size();
  if (k == 0 || k > n) throw std::invalid_argument(fmt::format("knn: k = {} must be in [1, {}]", k, n));
  KnnIndex index{k, Tensor<std::int64_t>({n, k})};
  const double* p = nc.coords_hat.data().data();
  std::vector<std::pair<double, std::size_t>> candidates(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = p[3 * i] - p[3 * j], dy = p[3 * i + 1] - p[3 * j + 1], dz = p[3 * i + 2] - p[3 * j + 2];
      candidates[j] = {j == i ? -1.0 : dx * dx + dy * dy + dz * dz, j};
    }
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end());
    for (std::size_t j = 0; j < k; ++j) index.neighbors[i * k + j] = static_cast<std::int64_t>(candidates[j].second);
  }
  if (counter) counter->sequential_reads += n * n;
  return index;
}

template <typename T>
Tensor<T> gather_neighbors(const Tensor<T>& features, const KnnIndex& index, AccessCounter* counter) {
  const std::size_t n = index.neighbors.dim(0), k = index.k;
  if (features.rank() != 2 || features.dim(0) != n) throw ShapeError("gather_neighbors: features must be n x c");
  const std::size_t c = features.dim(1);
  Tensor<T> out({n, k, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto src = static_cast<std::size_t>(index.neighbors[i * k + j]);
      std::copy_n(features.data().begin() + src * c, c, out.data().begin() + (i * k + j) * c);
    }
  }
  if (counter) counter->random_gathers += n * k;
  return out;
}

template Tensor<float> gather_neighbors(const Tensor<float>&, const KnnIndex&, AccessCounter*);
template Tensor<double> gather_neighbors(const Tensor<double>&, const KnnIndex&, AccessCounter*);

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Tensor<float> random_features(std::size_t n, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> f({n, c});
  for (auto& v : f.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return f;
}

BenchRow snapshot(std::string config, std::size_t n, std::size_t k, std::size_t c, std::size_t r,
                  const AccessCounter& counter, double ms, std::uint64_t bytes) {
  return {std::move(config), n, k, c, r, counter.random_gathers, counter.random_scatters, counter.sequential_reads,
          ms, bytes};
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <typename V>
V parse_field(const std::string& s, std::size_t line_no) {
  V value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument(fmt::format("csv line {}: cannot parse '{}'", line_no, s));
  }
  return value;
}

std::vector<std::string> csv_lines(const std::string& text, const char* header) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> lines;
  if (!std::getline(in, line) || line != header) throw std::invalid_argument("csv: unexpected header");
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace

std::string to_csv(const BenchReport& report) {
  std::string out = std::string(kBenchCsvHeader) + "\n";
  for (const auto& row : report.rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", row.config, row.n, row.k, row.c, row.r, row.random_gathers,
                       row.random_scatters, row.sequential_reads, format_shortest(row.wall_time_ms),
                       row.bytes_estimated);
  }
  return out;
}

BenchReport parse_bench_csv(const std::string& text) {
  BenchReport report;
  std::size_t line_no = 1;
  for (const auto& line : csv_lines(text, kBenchCsvHeader)) {
    ++line_no;
    const auto f = split_csv_line(line);
    if (f.size() != 10) throw std::invalid_argument(fmt::format("csv line {}: expected 10 fields", line_no));
    report.rows.push_back({f[0], parse_field<std::size_t>(f[1], line_no), parse_field<std::size_t>(f[2], line_no),
                           parse_field<std::size_t>(f[3], line_no), parse_field<std::size_t>(f[4], line_no),
                           parse_field<std::uint64_t>(f[5], line_no), parse_field<std::uint64_t>(f[6], line_no),
                           parse_field<std::uint64_t>(f[7], line_no), parse_field<double>(f[8], line_no),
                           parse_field<std::uint64_t>(f[9], line_no)});
  }
  return report;
}

nlohmann::json to_json(const BenchReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    rows.push_back({{"config", row.config},
                    {"n", row.n},
                    {"k", row.k},
                    {"c", row.c},
                    {"r", row.r},
                    {"random_gathers", row.random_gathers},
                    {"random_scatters", row.random_scatters},
                    {"sequential_reads", row.sequential_reads},
                    {"wall_time_ms", row.wall_time_ms},
                    {"bytes_estimated", row.bytes_estimated}});
  }
  return nlohmann::json{{"rows", rows}};
}

BenchRow count_voxel_path(const NormalizedCloud& nc, std::size_t r, std::size_t c, AccessCounter& counter,
                          std::uint64_t seed) {
  const std::size_t n = nc.size();
  const Tensor<float> features = random_features(n, c, seed);
  const auto start = Clock::now();
  const VoxelGrid<float> grid = voxelize(nc, features, r, &counter);
  const Tensor<float> back = devoxelize_trilinear(grid.values, nc, &counter);
  const double ms = elapsed_ms(start);
  (void)back;
  return snapshot("voxel_path", n, 0, c, r, counter, ms, static_cast<std::uint64_t>(r * r * r * c * sizeof(float)));
}

BenchRow count_knn_path(const NormalizedCloud& nc, std::size_t k, std::size_t c, AccessCounter& counter,
                        std::uint64_t seed) {
  const std::size_t n = nc.size();
  const Tensor<float> features = random_features(n, c, seed);
  const auto start = Clock::now();
  const KnnIndex index = knn_bruteforce(nc, k, &counter);
  const Tensor<float> gathered = gather_neighbors(features, index, &counter);
  const double ms = elapsed_ms(start);
  (void)gathered;
  return snapshot("knn_gather", n, k, c, 0, counter, ms, static_cast<std::uint64_t>(n * k * c * sizeof(float)));
}

double Comparison::gather_per_scatter_ratio() const {
  return static_cast<double>(knn.random_gathers) / static_cast<double>(voxel.random_scatters);
}

double Comparison::indexed_access_ratio() const {
  return static_cast<double>(knn.indexed_total()) / static_cast<double>(voxel.indexed_total());
}

Comparison bench_compare(std::size_t n, std::size_t k, std::size_t c, std::size_t r, std::uint64_t seed) {
  if (k > n) throw std::invalid_argument(fmt::format("bench: k = {} exceeds n = {}", k, n));
  const NormalizedCloud nc = normalize(generate_synthetic({Generator::uniform_cube, n, seed, 1}));
  Comparison cmp;
  AccessCounter knn_counter{"knn_gather"}, voxel_counter{"voxel_path"};
  cmp.knn = count_knn_path(nc, k, c, knn_counter, seed);
  cmp.knn.r = r;
  cmp.voxel = count_voxel_path(nc, r, c, voxel_counter, seed);
  cmp.voxel.k = k;
  cmp.report.rows = {cmp.knn, cmp.voxel};
  return cmp;
}

nlohmann::json to_json(const Comparison& cmp) {
  nlohmann::json j = to_json(cmp.report);
  j["gather_per_scatter_ratio"] = cmp.gather_per_scatter_ratio();
  j["indexed_access_ratio"] = cmp.indexed_access_ratio();
  return j;
}

SweepReport sweep_distinguishable(const NormalizedCloud& nc, const std::vector<std::size_t>& resolutions,
                                  std::size_t c, std::size_t scalar_bytes) {
  if (resolutions.empty()) throw std::invalid_argument("sweep needs at least one resolution");
  SweepReport report;
  const std::size_t n = nc.size();
  for (std::size_t r : resolutions) {
    if (r == 0) throw std::invalid_argument("sweep resolutions must be positive");
    const std::size_t alone = count_distinguishable(nc, r);
    report.rows.push_back({r, n, alone, static_cast<double>(alone) / static_cast<double>(n),
                           static_cast<std::uint64_t>(r) * r * r * c * scalar_bytes});
  }
  return report;
}

std::string to_csv(const SweepReport& report) {
  std::string out = std::string(kSweepCsvHeader) + "\n";
  for (const auto& row : report.rows) {
    out += fmt::format("{},{},{},{},{}\n", row.r, row.n, row.distinguishable, format_shortest(row.fraction),
                       row.bytes_estimated);
  }
  return out;
}

SweepReport parse_sweep_csv(const std::string& text) {
  SweepReport report;
  std::size_t line_no = 1;
  for (const auto& line : csv_lines(text, kSweepCsvHeader)) {
    ++line_no;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw std::invalid_argument(fmt::format("csv line {}: expected 5 fields", line_no));
    report.rows.push_back({parse_field<std::size_t>(f[0], line_no), parse_field<std::size_t>(f[1], line_no),
                           parse_field<std::size_t>(f[2], line_no), parse_field<double>(f[3], line_no),
                           parse_field<std::uint64_t>(f[4], line_no)});
  }
  return report;
}

nlohmann::json to_json(const SweepReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    rows.push_back({{"r", row.r},
                    {"n", row.n},
                    {"distinguishable", row.distinguishable},
                    {"fraction", row.fraction},
                    {"bytes_estimated", row.bytes_estimated}});
  }
  return nlohmann::json{{"rows", rows}};
}

}  // namespace pvc
