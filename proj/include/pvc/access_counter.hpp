#pragma once

#include <cstdint>
#include <string>

namespace pvc {

/// Tally of data-dependent (indexed) memory accesses versus streaming
/// reads. Counts only grow during a run.
struct AccessCounter {
  std::string label;
  std::uint64_t random_gathers = 0;
  std::uint64_t random_scatters = 0;
  std::uint64_t sequential_reads = 0;

  std::uint64_t indexed_total() const { return random_gathers + random_scatters; }

  friend bool operator==(const AccessCounter&, const AccessCounter&) = default;
};

}  // namespace pvc
