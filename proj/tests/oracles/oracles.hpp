#pragma once

// Randomized equivalence suites: library results against straightforward
// reference implementations written independently here.

#include <cstddef>
#include <cstdint>
#include <string>

namespace oracles {

inline constexpr double kTolerance = 1e-9;

struct SuiteResult {
  std::string name;
  std::size_t seeds = 0;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double max_error = 0;
  std::string first_failure;
  double seconds = 0;

  bool ok() const noexcept { return failures == 0 && seeds > 0 && cases > 0; }
};

/// Every transform op on random tensors (rank <= 4, up to 1e5 elements).
SuiteResult transform_suite(std::size_t seeds);
/// compute_descriptors against a long-double two-pass computation.
SuiteResult descriptor_suite(std::size_t seeds);
/// top_k_weights against a full sort, kernels up to 64x64, any k.
SuiteResult top_k_suite(std::size_t seeds);
/// Experiment partition against union-find on random lineages.
SuiteResult partition_suite(std::size_t seeds);
/// Badge counts against exhaustive traversal, including structure queries
/// checked by simple-path enumeration.
SuiteResult badge_suite(std::size_t seeds);

}  // namespace oracles
