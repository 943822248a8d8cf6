#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvc/tensor.hpp"

namespace pvc {

/// Raised on malformed cloud files; the message carries the line number.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using Labels = std::vector<std::int32_t>;

/// Points as raw coordinates (n×3) plus per-point features (n×c) and
/// optional class labels.
struct PointCloud {
  Tensor64 coords;
  Tensor64 features;
  std::optional<Labels> labels;

  std::size_t size() const { return coords.empty() ? 0 : coords.dim(0); }
  std::size_t channels() const { return features.empty() ? 0 : features.dim(1); }

  /// Throws if coords/features/labels disagree on n or coords are not finite.
  void validate() const;
};

/// Coordinates mapped into [0,1]^3; features are carried over untouched.
struct NormalizedCloud {
  Tensor64 coords_hat;
  Tensor64 features;
  Tensor64 gravity_center;  // [3]
  double scale = 1.0;

  std::size_t size() const { return coords_hat.dim(0); }
};

inline constexpr double kDegenerateScale = 1e-12;

/// Centers on the mean, divides by the largest distance to the mean, then
/// maps the unit ball into [0,1]^3 via q/2 + 0.5.
NormalizedCloud normalize(const PointCloud& pc);

/// Inverse of the recorded affine map: q -> (2q - 1) * scale + center.
Tensor64 denormalize(const NormalizedCloud& nc);

/// Shortest decimal that parses back to the same double.
std::string format_shortest(double value);

/// Text format: a `#pvc n=<n> c=<c> labeled=<0|1>` header line, then one
/// point per line as `x y z f1 ... fc [label]`.
PointCloud load_cloud(const std::filesystem::path& path);
PointCloud parse_cloud(const std::string& text);
std::string serialize_cloud(const PointCloud& pc);
void save_cloud(const PointCloud& pc, const std::filesystem::path& path);

enum class Generator { uniform_cube, two_part_shape, multi_primitive };

struct SyntheticSpec {
  Generator generator = Generator::uniform_cube;
  std::size_t n = 1024;
  std::uint64_t seed = 0;
  std::size_t num_classes = 2;
};

Generator parse_generator(const std::string& name);
std::string generator_name(Generator g);

/// Deterministic synthetic cloud. Features are the raw coordinates (c=3).
/// uniform_cube is unlabeled; the shape generators label points by the
/// primitive they were sampled from.
PointCloud generate_synthetic(const SyntheticSpec& spec);

/// `count` clouds from one generator, cloud i seeded from (seed, i).
std::vector<PointCloud> generate_dataset(Generator generator, std::size_t count, std::size_t n,
                                         std::uint64_t seed, std::size_t num_classes = 2);

}  // namespace pvc
