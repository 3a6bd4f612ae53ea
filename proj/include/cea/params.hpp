#pragma once

#include <cstdint>
#include <string>

#include "cea/serialize.hpp"
#include "cea/tensor.hpp"

namespace cea {

/// splitmix64 finalizer; used to derive independent RNG streams.
std::uint64_t mix_seed(std::uint64_t x);
/// Stream seed for a named entity under a global seed. Names decouple streams
/// so adding a parameter never shifts the initialization of another.
std::uint64_t derive_seed(std::uint64_t global_seed, const std::string& name);

enum class Init {
  Zeros,
  Ones,
  Uniform,  ///< U(-s, s) with s = gain / sqrt(fan_in)
  DeltaKernel,  ///< depthwise kernel with 1 at the centre tap
};

/// Flat, name-addressed parameter collection. Every learnable tensor of a
/// restorer lives here so checkpoints can round-trip by name.
class ParamStore {
 public:
  /// Creates (or replaces) a parameter. `fan_in` and `gain` apply to Uniform.
  Tensor create(const std::string& name, Shape shape, Init init, std::uint64_t global_seed,
                std::size_t fan_in = 1, double gain = 1.0);
  Tensor at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const NamedTensors& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;
  void zero_grad();
  /// Copies values from `src` into existing parameters; shapes and names must match.
  void load(const NamedTensors& src);

 private:
  NamedTensors params_;
};

}  // namespace cea
