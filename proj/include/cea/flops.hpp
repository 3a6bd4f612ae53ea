#pragma once

#include <cstdint>

namespace cea {

/// Thread-local multiply-accumulate counter fed by the forward pass of every
/// MAC-bearing primitive (matmul, depthwise and pointwise convolution).
/// Backward passes are not counted.
class MacCounter {
 public:
  static std::uint64_t value();
  static void add(std::uint64_t macs);
  static void reset();
};

/// Counts the MACs issued while in scope, restoring the outer total on exit.
class MacScope {
 public:
  MacScope();
  ~MacScope();
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;
  std::uint64_t count() const;

 private:
  std::uint64_t saved_;
};

}  // namespace cea
