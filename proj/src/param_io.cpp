#include "pvc/param_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace pvc {

namespace {

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void append_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(const char* src) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

template <typename T>
void save_parameters(const std::filesystem::path& prefix, const NamedTensors<T>& tensors) {
  std::string payload;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& [name, tensor] : tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["dtype"] = dtype_name<T>();
    entry["shape"] = tensor.shape();
    entry["offset"] = payload.size();
    entry["nbytes"] = tensor.size() * sizeof(T);
    for (T v : tensor.data()) append_le(payload, v);
    entries.push_back(std::move(entry));
  }
  nlohmann::ordered_json manifest;
  manifest["format"] = "pvc-params";
  manifest["version"] = 1;
  manifest["byte_order"] = "little";
  manifest["total_bytes"] = payload.size();
  manifest["checksum"] = fmt::format("fnv1a64:{:016x}", fnv1a(payload));
  manifest["tensors"] = std::move(entries);

  std::ofstream bin(with_suffix(prefix, ".bin"), std::ios::binary);
  std::ofstream json(with_suffix(prefix, ".json"), std::ios::binary);
  if (!bin || !json) throw CheckpointError("cannot write parameter container at " + prefix.string());
  bin.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  json << manifest.dump(2) << '\n';
}

template <typename T>
NamedTensors<T> load_parameters(const std::filesystem::path& prefix) {
  const std::string payload = read_file(with_suffix(prefix, ".bin"));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(with_suffix(prefix, ".json")));
    if (manifest.at("format") != "pvc-params") throw CheckpointError("not a pvc parameter manifest");
    if (manifest.at("byte_order") != "little") throw CheckpointError("unsupported byte order");
    if (manifest.at("total_bytes").get<std::size_t>() != payload.size()) {
      throw CheckpointError(fmt::format("payload has {} bytes, manifest declares {}", payload.size(),
                                        manifest.at("total_bytes").get<std::size_t>()));
    }
    if (manifest.at("checksum").get<std::string>() != fmt::format("fnv1a64:{:016x}", fnv1a(payload))) {
      throw CheckpointError("payload checksum mismatch");
    }
    NamedTensors<T> out;
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<std::string>() != dtype_name<T>()) {
        throw CheckpointError(fmt::format("tensor {} has dtype {}, expected {}", name,
                                          entry.at("dtype").get<std::string>(), dtype_name<T>()));
      }
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      const std::size_t count = shape_numel(shape);
      if (nbytes != count * sizeof(T) || offset + nbytes > payload.size()) {
        throw CheckpointError("tensor " + name + " extends past the payload");
      }
      std::vector<T> values(count);
      for (std::size_t i = 0; i < count; ++i) values[i] = read_le<T>(payload.data() + offset + i * sizeof(T));
      out.emplace_back(name, Tensor<T>(shape, std::move(values)));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed parameter manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("malformed tensor in manifest: ") + e.what());
  }
}

template void save_parameters(const std::filesystem::path&, const NamedTensors<float>&);
template void save_parameters(const std::filesystem::path&, const NamedTensors<double>&);
template NamedTensors<float> load_parameters(const std::filesystem::path&);
template NamedTensors<double> load_parameters(const std::filesystem::path&);

}  // namespace pvc
