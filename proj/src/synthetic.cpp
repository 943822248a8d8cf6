#include <array>
#include <cmath>
#include <numbers>

#include "pvc/point_cloud.hpp"
#include "pvc/rng.hpp"

namespace pvc {

namespace {

using Vec3 = std::array<double, 3>;

// Point on the surface of an axis-aligned box, faces chosen by area.
Vec3 sample_box_surface(Rng& rng, const Vec3& center, const Vec3& half) {
  const double area_x = half[1] * half[2], area_y = half[0] * half[2], area_z = half[0] * half[1];
  const double pick = rng.uniform() * (area_x + area_y + area_z);
  const int axis = pick < area_x ? 0 : (pick < area_x + area_y ? 1 : 2);
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  Vec3 p;
  for (int a = 0; a < 3; ++a) {
    p[a] = a == axis ? center[a] + side * half[a] : center[a] + rng.uniform(-half[a], half[a]);
  }
  return p;
}

// Point on the lateral surface of a z-aligned cylinder.
Vec3 sample_cylinder_surface(Rng& rng, const Vec3& base, double radius, double height) {
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {base[0] + radius * std::cos(theta), base[1] + radius * std::sin(theta),
          base[2] + rng.uniform(0.0, height)};
}

Vec3 sample_sphere_surface(Rng& rng, const Vec3& center, double radius) {
  Vec3 d{rng.normal(), rng.normal(), rng.normal()};
  double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (len < 1e-12) {
    d = {1.0, 0.0, 0.0};
    len = 1.0;
  }
  return {center[0] + radius * d[0] / len, center[1] + radius * d[1] / len, center[2] + radius * d[2] / len};
}

Vec3 rotate_z(const Vec3& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
}

PointCloud assemble(const std::vector<Vec3>& points, Labels labels, bool labeled) {
  const std::size_t n = points.size();
  std::vector<double> flat;
  flat.reserve(n * 3);
  for (const auto& p : points) flat.insert(flat.end(), p.begin(), p.end());
  PointCloud pc;
  pc.coords = Tensor64({n, 3}, flat);
  pc.features = Tensor64({n, 3}, std::move(flat));
  if (labeled) pc.labels = std::move(labels);
  return pc;
}

PointCloud uniform_cube(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  std::vector<Vec3> points(spec.n);
  for (auto& p : points) p = {rng.uniform(), rng.uniform(), rng.uniform()};
  return assemble(points, {}, false);
}

// A flat plate (box surface) resting above a cylindrical post, with
// randomized proportions and heading. Label 0 is the plate, 1 the post.
PointCloud two_part_shape(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  const Vec3 half{rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.06, 0.14)};
  const double radius = rng.uniform(0.12, 0.3);
  const double post_height = rng.uniform(0.8, 1.4);
  const double gap = rng.uniform(0.05, 0.15);
  const double heading = rng.uniform(0.0, std::numbers::pi);
  const Vec3 plate_center{0.0, 0.0, post_height + gap + half[2]};

  const std::size_t plate_points = spec.n / 2 + spec.n % 2;
  std::vector<Vec3> points;
  Labels labels;
  points.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const bool plate = i < plate_points;
    const Vec3 p = plate ? sample_box_surface(rng, plate_center, half)
                         : sample_cylinder_surface(rng, {0.0, 0.0, 0.0}, radius, post_height);
    points.push_back(rotate_z(p, heading));
    labels.push_back(plate ? 0 : 1);
  }
  return assemble(points, std::move(labels), true);
}

// num_classes primitives (sphere, box, cylinder in rotation) spaced on a
// circle so that no two overlap.
PointCloud multi_primitive(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  const std::size_t k = spec.num_classes;
  const double ring = k == 1 ? 0.0 : 1.0 / std::sin(std::numbers::pi / static_cast<double>(k));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<Vec3> points;
  Labels labels;
  points.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t part = i * k / spec.n;
    const double angle = phase + 2.0 * std::numbers::pi * static_cast<double>(part) / static_cast<double>(k);
    const Vec3 center{ring * std::cos(angle), ring * std::sin(angle), 0.0};
    Vec3 p;
    switch (part % 3) {
      case 0:
        p = sample_sphere_surface(rng, center, 0.7);
        break;
      case 1:
        p = sample_box_surface(rng, center, {0.5, 0.5, 0.5});
        break;
      default:
        p = sample_cylinder_surface(rng, {center[0], center[1], -0.6}, 0.5, 1.2);
        break;
    }
    points.push_back(p);
    labels.push_back(static_cast<std::int32_t>(part));
  }
  return assemble(points, std::move(labels), true);
}

}  // namespace

Generator parse_generator(const std::string& name) {
  if (name == "uniform_cube") return Generator::uniform_cube;
  if (name == "two_part_shape") return Generator::two_part_shape;
  if (name == "multi_primitive") return Generator::multi_primitive;
  throw std::invalid_argument("unknown generator '" + name + "'");
}

std::string generator_name(Generator g) {
  switch (g) {
    case Generator::uniform_cube:
      return "uniform_cube";
    case Generator::two_part_shape:
      return "two_part_shape";
    case Generator::multi_primitive:
      return "multi_primitive";
  }
  return "unknown";
}

PointCloud generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("synthetic cloud needs n >= 1");
  switch (spec.generator) {
    case Generator::uniform_cube:
      return uniform_cube(spec);
    case Generator::two_part_shape:
      return two_part_shape(spec);
    case Generator::multi_primitive:
      if (spec.num_classes == 0) throw std::invalid_argument("multi_primitive needs num_classes >= 1");
      return multi_primitive(spec);
  }
  throw std::invalid_argument("unknown generator");
}

std::vector<PointCloud> generate_dataset(Generator generator, std::size_t count, std::size_t n,
                                         std::uint64_t seed, std::size_t num_classes) {
  std::vector<PointCloud> clouds;
  clouds.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    // splitmix-style mixing so neighbouring seeds give unrelated streams
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + (i + 1) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 31)) * 0x94D049BB133111EBULL;
    clouds.push_back(generate_synthetic({generator, n, z ^ (z >> 29), num_classes}));
  }
  return clouds;
}

}  // namespace pvc
