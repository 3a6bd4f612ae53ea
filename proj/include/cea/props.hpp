#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cea/assembly.hpp"
#include "cea/tensor.hpp"

namespace cea {

/// U(lo, hi) entries from `rng`.
Tensor uniform_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

/// Max absolute elementwise difference; throws DimensionError on shape mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

struct PropResult {
  std::string suite;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst = 0.0;  ///< largest observed error metric, suite-specific
  std::vector<std::string> counterexamples;  ///< first few failing cases

  bool passed() const { return failures == 0 && cases > 0; }
};

struct PropOptions {
  std::uint64_t seed = 0;
  /// Mutation switch for self-testing the suites. Known value: "skip-ranknorm".
  std::string fault;
};

const std::vector<std::string>& prop_suite_names();
PropResult run_prop_suite(const std::string& name, const PropOptions& opts = {});
std::vector<PropResult> run_all_props(const PropOptions& opts = {});

nlohmann::json props_to_json(const std::vector<PropResult>& results);
std::string props_table(const std::vector<PropResult>& results);

/// Normalizer used by the scale-invariance suites; `fault` may disable it.
FactorPair normalize_for_props(const FactorPair& fp, double epsilon, const std::string& fault);

}  // namespace cea
