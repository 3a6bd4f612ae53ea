#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cea/tensor.hpp"

// Synthetic, seeded degradation operators on [H x W x 3] images in [0, 1].
// Every operator returns a new image of the same shape, clipped to [0, 1].

namespace cea {

enum class OpType { Noise, Haze, LowLight, Rain, Blur, Snow };

std::string to_string(OpType t);
OpType op_from_string(const std::string& s);
/// Single-letter tag used in category names (L, H, R, S, N, B).
char op_letter(OpType t);

struct DegradationOp {
  OpType type = OpType::Noise;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;
};

/// Ordered chain of one to three operators, applied left to right.
struct DegradationSpec {
  std::vector<DegradationOp> chain;
  std::uint64_t seed = 0;

  /// Throws ConfigError on chain length or parameter-range violations.
  void validate() const;
  std::string category() const;
};

/// y + N(0, (sigma/255)^2), clipped. sigma on the 0-255 scale.
Tensor apply_noise(const Tensor& y, double sigma, std::uint64_t seed);

/// Smooth transmission field in [t0, 1]: three seeded low-frequency cosine
/// modes, min-max mapped. Returns [H x W].
Tensor haze_transmission(std::size_t h, std::size_t w, double t0, std::uint64_t seed);
/// x = y t + A (1 - t) with a per-pixel transmission field [H x W].
Tensor apply_haze_field(const Tensor& y, const Tensor& transmission, double airlight);
Tensor apply_haze(const Tensor& y, double t0, double airlight, std::uint64_t seed);

/// x = scale * y^gamma.
Tensor apply_lowlight(const Tensor& y, double gamma, double scale);

/// Streak length in pixels used by the rain overlay for an image of this size.
std::size_t rain_streak_length(std::size_t h, std::size_t w);
/// Binary [H x W] coverage of round(density*H*W) oriented streaks, wrapping at borders.
Tensor rain_mask(std::size_t h, std::size_t w, double density, double angle, std::uint64_t seed);
Tensor apply_rain(const Tensor& y, double density, double angle, double intensity,
                  std::uint64_t seed);

/// Separable Gaussian blur with reflect padding; radius ceil(3 sigma).
Tensor apply_blur(const Tensor& y, double kernel_sigma);

/// Binary [H x W] coverage of round(density*H*W) discs of radius flake_size.
Tensor snow_mask(std::size_t h, std::size_t w, double density, double flake_size,
                 std::uint64_t seed);
Tensor apply_snow(const Tensor& y, double density, double flake_size, std::uint64_t seed);

Tensor apply_op(const Tensor& y, const DegradationOp& op);
Tensor compose(const DegradationSpec& spec, const Tensor& y);

}  // namespace cea
