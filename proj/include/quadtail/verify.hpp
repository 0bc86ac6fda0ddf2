#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace quadtail {

struct CheckResult {
  std::string module;
  std::string name;
  bool pass;
  double measured;
  double tolerance;
  std::uint64_t seed;
  std::string detail;
};

struct VerifyConfig {
  std::uint64_t seed = 20260101;
  int workers = 1;
  /// Replaces one tolerance with an impossible one so the failure path can be
  /// exercised end to end.
  bool inject_failure = false;
};

/// Quick invariant checks across all modules; each records the measured value
/// and the tolerance it was held to.
std::vector<CheckResult> verify_suite(const VerifyConfig& config);

}  // namespace quadtail
