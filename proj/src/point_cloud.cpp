#include "pvc/point_cloud.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace pvc {

void PointCloud::validate() const {
  if (coords.rank() != 2 || coords.dim(1) != 3) {
    throw ShapeError("point cloud coords must be n x 3, got " + shape_to_string(coords.shape()));
  }
  const std::size_t n = coords.dim(0);
  if (features.rank() != 2 || features.dim(0) != n) {
    throw ShapeError(fmt::format("point cloud features {} do not match {} points",
                                 shape_to_string(features.shape()), n));
  }
  if (labels && labels->size() != n) {
    throw ShapeError(fmt::format("point cloud has {} labels for {} points", labels->size(), n));
  }
  if (!all_finite(coords)) throw std::invalid_argument("point cloud coords contain NaN or Inf");
}

NormalizedCloud normalize(const PointCloud& pc) {
  if (pc.size() == 0) throw std::invalid_argument("cannot normalize an empty cloud");
  pc.validate();
  const std::size_t n = pc.size();

  Tensor64 center({3});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < 3; ++a) center[a] += pc.coords[i * 3 + a];
  for (std::size_t a = 0; a < 3; ++a) center[a] /= static_cast<double>(n);

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      const double d = pc.coords[i * 3 + a] - center[a];
      sq += d * d;
    }
    scale = std::max(scale, std::sqrt(sq));
  }
  if (scale < kDegenerateScale) scale = 1.0;

  Tensor64 hat({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      const double q = (pc.coords[i * 3 + a] - center[a]) / scale;
      // Rounding can push a max-norm component a hair past the unit ball.
      hat[i * 3 + a] = std::clamp(q / 2.0 + 0.5, 0.0, 1.0);
    }
  }
  return NormalizedCloud{std::move(hat), pc.features, std::move(center), scale};
}

Tensor64 denormalize(const NormalizedCloud& nc) {
  Tensor64 out(nc.coords_hat.shape());
  const std::size_t n = nc.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < 3; ++a)
      out[i * 3 + a] = (2.0 * nc.coords_hat[i * 3 + a] - 1.0) * nc.scale + nc.gravity_center[a];
  return out;
}

std::string format_shortest(double value) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

namespace {

struct Header {
  std::size_t n = 0;
  std::size_t c = 0;
  bool labeled = false;
};

Header parse_header(const std::string& line) {
  Header header;
  std::istringstream in(line);
  std::string magic;
  in >> magic;
  if (magic != "#pvc") throw FormatError("line 1: expected '#pvc' header");
  bool seen_n = false, seen_c = false, seen_labeled = false;
  std::string field;
  while (in >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw FormatError("line 1: malformed header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    std::size_t parsed = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), parsed);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      throw FormatError("line 1: header field '" + field + "' is not a nonnegative integer");
    }
    if (key == "n") {
      header.n = parsed;
      seen_n = true;
    } else if (key == "c") {
      header.c = parsed;
      seen_c = true;
    } else if (key == "labeled") {
      if (parsed > 1) throw FormatError("line 1: labeled must be 0 or 1");
      header.labeled = parsed == 1;
      seen_labeled = true;
    } else {
      throw FormatError("line 1: unknown header field '" + key + "'");
    }
  }
  if (!seen_n || !seen_c || !seen_labeled) throw FormatError("line 1: header needs n=, c= and labeled=");
  return header;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

template <typename V>
V parse_token(std::string_view token, std::size_t line_no) {
  V value{};
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError(fmt::format("line {}: cannot parse '{}'", line_no, token));
  }
  return value;
}

}  // namespace

PointCloud parse_cloud(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::optional<Header> header;
  std::vector<double> coords, features;
  Labels labels;
  std::size_t rows = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tokens = split_ws(line);
    if (!header) {
      if (tokens.empty()) continue;
      if (line_no != 1) throw FormatError(fmt::format("line {}: header must be the first line", line_no));
      header = parse_header(line);
      if (header->c == 0) throw FormatError("line 1: c must be at least 1");
      continue;
    }
    if (tokens.empty()) continue;
    const std::size_t expected = 3 + header->c + (header->labeled ? 1 : 0);
    if (tokens.size() != expected) {
      throw FormatError(fmt::format("line {}: expected {} columns, found {}", line_no, expected, tokens.size()));
    }
    for (std::size_t a = 0; a < 3; ++a) coords.push_back(parse_token<double>(tokens[a], line_no));
    for (std::size_t f = 0; f < header->c; ++f) features.push_back(parse_token<double>(tokens[3 + f], line_no));
    if (header->labeled) {
      const auto label = parse_token<std::int32_t>(tokens.back(), line_no);
      if (label < 0) throw FormatError(fmt::format("line {}: negative label", line_no));
      labels.push_back(label);
    }
    ++rows;
  }
  if (!header || rows == 0) throw FormatError("empty cloud");
  if (rows != header->n) {
    throw FormatError(fmt::format("header declares n={} but file has {} points", header->n, rows));
  }

  PointCloud pc;
  pc.coords = Tensor64({rows, 3}, std::move(coords));
  pc.features = Tensor64({rows, header->c}, std::move(features));
  if (header->labeled) pc.labels = std::move(labels);
  pc.validate();
  return pc;
}

PointCloud load_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open cloud file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_cloud(buffer.str());
}

std::string serialize_cloud(const PointCloud& pc) {
  pc.validate();
  const std::size_t n = pc.size(), c = pc.channels();
  std::string out = fmt::format("#pvc n={} c={} labeled={}\n", n, c, pc.labels ? 1 : 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      out += format_shortest(pc.coords[i * 3 + a]);
      out += ' ';
    }
    for (std::size_t f = 0; f < c; ++f) {
      out += format_shortest(pc.features[i * c + f]);
      if (f + 1 < c || pc.labels) out += ' ';
    }
    if (pc.labels) out += std::to_string((*pc.labels)[i]);
    out += '\n';
  }
  return out;
}

void save_cloud(const PointCloud& pc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write cloud file " + path.string());
  out << serialize_cloud(pc);
}

}  // namespace pvc
