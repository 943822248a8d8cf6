#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pvc/tensor.hpp"

namespace pvc {

/// Raised when a parameter container is missing, truncated, or does not
/// match its manifest.
class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Writes `<prefix>.bin` (tensors back to back, little-endian) and
/// `<prefix>.json` (name, dtype, shape, byte offset per tensor plus a
/// checksum of the payload).
template <typename T>
void save_parameters(const std::filesystem::path& prefix, const NamedTensors<T>& tensors);

template <typename T>
NamedTensors<T> load_parameters(const std::filesystem::path& prefix);

template <typename T>
constexpr const char* dtype_name();

template <>
constexpr const char* dtype_name<float>() {
  return "float32";
}
template <>
constexpr const char* dtype_name<double>() {
  return "float64";
}

}  // namespace pvc
