#include "cea/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace cea {

std::string to_string(OpType t) {
  switch (t) {
    case OpType::Noise: return "noise";
    case OpType::Haze: return "haze";
    case OpType::LowLight: return "lowlight";
    case OpType::Rain: return "rain";
    case OpType::Blur: return "blur";
    case OpType::Snow: return "snow";
  }
  return "?";
}

OpType op_from_string(const std::string& s) {
  for (auto t : {OpType::Noise, OpType::Haze, OpType::LowLight, OpType::Rain, OpType::Blur,
                 OpType::Snow})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown degradation operator '" + s + "'");
}

char op_letter(OpType t) {
  switch (t) {
    case OpType::Noise: return 'N';
    case OpType::Haze: return 'H';
    case OpType::LowLight: return 'L';
    case OpType::Rain: return 'R';
    case OpType::Blur: return 'B';
    case OpType::Snow: return 'S';
  }
  return '?';
}

namespace {

void check_image(const Tensor& y) {
  if (y.rank() != 3) throw DimensionError("degradation expects [H x W x C] images");
}

double param(const DegradationOp& op, const std::string& key) {
  auto it = op.params.find(key);
  if (it == op.params.end())
    throw ConfigError(to_string(op.type) + ": missing parameter '" + key + "'");
  return it->second;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

Tensor clip01(std::vector<double> v, const Shape& shape) {
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  return Tensor::from(shape, std::move(v));
}

// Blend toward white where mask > 0.
Tensor blend_white(const Tensor& y, const Tensor& mask, double strength) {
  const auto h = y.dim(0), w = y.dim(1), c = y.dim(2);
  auto yd = y.data(), md = mask.data();
  std::vector<double> out(yd.size());
  for (std::size_t p = 0; p < h * w; ++p) {
    const double a = strength * md[p];
    for (std::size_t ch = 0; ch < c; ++ch) out[p * c + ch] = yd[p * c + ch] * (1.0 - a) + a;
  }
  return clip01(std::move(out), y.shape());
}

std::size_t overlay_count(std::size_t h, std::size_t w, double density) {
  return static_cast<std::size_t>(std::llround(density * static_cast<double>(h * w)));
}

}  // namespace

void DegradationSpec::validate() const {
  require(!chain.empty() && chain.size() <= 3, "degradation chain length must be 1, 2 or 3");
  for (const auto& op : chain) {
    switch (op.type) {
      case OpType::Noise: require(param(op, "sigma") >= 0.0, "noise: sigma must be >= 0"); break;
      case OpType::Haze: {
        const double t0 = param(op, "t0"), a = param(op, "airlight");
        require(t0 > 0.0 && t0 <= 1.0, "haze: t0 must be in (0, 1]");
        require(a >= 0.0 && a <= 1.0, "haze: airlight must be in [0, 1]");
        break;
      }
      case OpType::LowLight: {
        const double g = param(op, "gamma"), s = param(op, "scale");
        require(g >= 1.0, "lowlight: gamma must be >= 1");
        require(s > 0.0 && s <= 1.0, "lowlight: scale must be in (0, 1]");
        break;
      }
      case OpType::Rain:
        require(param(op, "density") >= 0.0 && param(op, "density") <= 1.0,
                "rain: density must be in [0, 1]");
        require(param(op, "intensity") >= 0.0 && param(op, "intensity") <= 1.0,
                "rain: intensity must be in [0, 1]");
        param(op, "angle");
        break;
      case OpType::Blur: require(param(op, "sigma") >= 0.0, "blur: sigma must be >= 0"); break;
      case OpType::Snow:
        require(param(op, "density") >= 0.0 && param(op, "density") <= 1.0,
                "snow: density must be in [0, 1]");
        require(param(op, "flake_size") >= 0.0, "snow: flake_size must be >= 0");
        break;
    }
  }
}

std::string DegradationSpec::category() const {
  std::string s;
  for (const auto& op : chain) {
    if (!s.empty()) s += '+';
    s += op_letter(op.type);
  }
  return s;
}

Tensor apply_noise(const Tensor& y, double sigma, std::uint64_t seed) {
  check_image(y);
  if (sigma < 0.0) throw ConfigError("noise: sigma must be >= 0");
  auto yd = y.data();
  std::vector<double> out(yd.begin(), yd.end());
  if (sigma == 0.0) return Tensor::from(y.shape(), std::move(out));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma / 255.0);
  for (auto& v : out) v += n(rng);
  return clip01(std::move(out), y.shape());
}

Tensor haze_transmission(std::size_t h, std::size_t w, double t0, std::uint64_t seed) {
  if (!(t0 > 0.0 && t0 <= 1.0)) throw ConfigError("haze: t0 must be in (0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(0.5, 2.0), phase(0.0, 2.0 * std::numbers::pi),
      amp(0.5, 1.0);
  struct Mode {
    double fx, fy, ph, a;
  };
  std::vector<Mode> modes(3);
  for (auto& m : modes) m = {freq(rng), freq(rng), phase(rng), amp(rng)};
  std::vector<double> f(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (const auto& m : modes)
        f[y * w + x] += m.a * std::cos(2.0 * std::numbers::pi *
                                           (m.fx * static_cast<double>(x) / static_cast<double>(w) +
                                            m.fy * static_cast<double>(y) / static_cast<double>(h)) +
                                       m.ph);
  const auto [mn, mx] = std::minmax_element(f.begin(), f.end());
  const double lo = *mn, span = *mx - *mn;
  for (auto& v : f) v = span > 0.0 ? t0 + (1.0 - t0) * (v - lo) / span : 1.0;
  return Tensor::from({h, w}, std::move(f));
}

Tensor apply_haze_field(const Tensor& y, const Tensor& transmission, double airlight) {
  check_image(y);
  const auto h = y.dim(0), w = y.dim(1), c = y.dim(2);
  if (transmission.numel() != h * w) throw DimensionError("haze: transmission size mismatch");
  auto yd = y.data(), td = transmission.data();
  std::vector<double> out(yd.size());
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t ch = 0; ch < c; ++ch)
      out[p * c + ch] = yd[p * c + ch] * td[p] + airlight * (1.0 - td[p]);
  return clip01(std::move(out), y.shape());
}

Tensor apply_haze(const Tensor& y, double t0, double airlight, std::uint64_t seed) {
  check_image(y);
  if (!(airlight >= 0.0 && airlight <= 1.0)) throw ConfigError("haze: airlight must be in [0, 1]");
  return apply_haze_field(y, haze_transmission(y.dim(0), y.dim(1), t0, seed), airlight);
}

Tensor apply_lowlight(const Tensor& y, double gamma, double scale) {
  check_image(y);
  if (gamma < 1.0) throw ConfigError("lowlight: gamma must be >= 1");
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("lowlight: scale must be in (0, 1]");
  auto yd = y.data();
  std::vector<double> out(yd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * std::pow(yd[i], gamma);
  return clip01(std::move(out), y.shape());
}

std::size_t rain_streak_length(std::size_t h, std::size_t w) {
  return std::max<std::size_t>(4, std::min(h, w) / 4);
}

Tensor rain_mask(std::size_t h, std::size_t w, double density, double angle, std::uint64_t seed) {
  if (!(density >= 0.0 && density <= 1.0)) throw ConfigError("rain: density must be in [0, 1]");
  std::vector<double> m(h * w, 0.0);
  const auto count = overlay_count(h, w, density);
  const auto len = rain_streak_length(h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(w)),
      uy(0.0, static_cast<double>(h));
  const double dx = std::sin(angle), dy = std::cos(angle);
  const auto wrap = [](long v, std::size_t n) {
    const long ln = static_cast<long>(n);
    return static_cast<std::size_t>(((v % ln) + ln) % ln);
  };
  for (std::size_t s = 0; s < count; ++s) {
    const double x0 = ux(rng), y0 = uy(rng);
    for (std::size_t t = 0; t < len; ++t) {
      const auto px = wrap(std::lround(std::floor(x0 + dx * static_cast<double>(t))), w);
      const auto py = wrap(std::lround(std::floor(y0 + dy * static_cast<double>(t))), h);
      m[py * w + px] = 1.0;
    }
  }
  return Tensor::from({h, w}, std::move(m));
}

Tensor apply_rain(const Tensor& y, double density, double angle, double intensity,
                  std::uint64_t seed) {
  check_image(y);
  if (!(intensity >= 0.0 && intensity <= 1.0))
    throw ConfigError("rain: intensity must be in [0, 1]");
  return blend_white(y, rain_mask(y.dim(0), y.dim(1), density, angle, seed), intensity);
}

Tensor apply_blur(const Tensor& y, double kernel_sigma) {
  check_image(y);
  if (kernel_sigma < 0.0) throw ConfigError("blur: sigma must be >= 0");
  auto yd = y.data();
  if (kernel_sigma == 0.0) return Tensor::from(y.shape(), {yd.begin(), yd.end()});
  const auto h = y.dim(0), w = y.dim(1), c = y.dim(2);
  const auto radius = static_cast<long>(std::ceil(3.0 * kernel_sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (kernel_sigma * kernel_sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  const auto reflect = [](long i, std::size_t n) {
    const long ln = static_cast<long>(n);
    if (ln == 1) return std::size_t{0};
    const long period = 2 * (ln - 1);
    i = ((i % period) + period) % period;
    return static_cast<std::size_t>(i < ln ? i : period - i);
  };
  std::vector<double> tmp(yd.size(), 0.0), out(yd.size(), 0.0);
  for (std::size_t yy = 0; yy < h; ++yy)
    for (std::size_t x = 0; x < w; ++x)
      for (long i = -radius; i <= radius; ++i) {
        const auto sx = reflect(static_cast<long>(x) + i, w);
        for (std::size_t ch = 0; ch < c; ++ch)
          tmp[(yy * w + x) * c + ch] += k[i + radius] * yd[(yy * w + sx) * c + ch];
      }
  for (std::size_t yy = 0; yy < h; ++yy)
    for (std::size_t x = 0; x < w; ++x)
      for (long i = -radius; i <= radius; ++i) {
        const auto sy = reflect(static_cast<long>(yy) + i, h);
        for (std::size_t ch = 0; ch < c; ++ch)
          out[(yy * w + x) * c + ch] += k[i + radius] * tmp[(sy * w + x) * c + ch];
      }
  return clip01(std::move(out), y.shape());
}

Tensor snow_mask(std::size_t h, std::size_t w, double density, double flake_size,
                 std::uint64_t seed) {
  if (!(density >= 0.0 && density <= 1.0)) throw ConfigError("snow: density must be in [0, 1]");
  if (flake_size < 0.0) throw ConfigError("snow: flake_size must be >= 0");
  std::vector<double> m(h * w, 0.0);
  const auto count = overlay_count(h, w, density);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(w)),
      uy(0.0, static_cast<double>(h));
  const auto reach = static_cast<long>(std::ceil(flake_size));
  for (std::size_t s = 0; s < count; ++s) {
    const double cx = ux(rng), cy = uy(rng);
    for (long oy = -reach; oy <= reach; ++oy)
      for (long ox = -reach; ox <= reach; ++ox) {
        const long px = static_cast<long>(std::floor(cx)) + ox;
        const long py = static_cast<long>(std::floor(cy)) + oy;
        if (px < 0 || py < 0 || px >= static_cast<long>(w) || py >= static_cast<long>(h)) continue;
        const double ddx = static_cast<double>(px) + 0.5 - cx;
        const double ddy = static_cast<double>(py) + 0.5 - cy;
        if (ddx * ddx + ddy * ddy <= flake_size * flake_size)
          m[static_cast<std::size_t>(py) * w + static_cast<std::size_t>(px)] = 1.0;
      }
  }
  return Tensor::from({h, w}, std::move(m));
}

Tensor apply_snow(const Tensor& y, double density, double flake_size, std::uint64_t seed) {
  check_image(y);
  return blend_white(y, snow_mask(y.dim(0), y.dim(1), density, flake_size, seed), 0.9);
}

Tensor apply_op(const Tensor& y, const DegradationOp& op) {
  switch (op.type) {
    case OpType::Noise: return apply_noise(y, param(op, "sigma"), op.seed);
    case OpType::Haze: return apply_haze(y, param(op, "t0"), param(op, "airlight"), op.seed);
    case OpType::LowLight: return apply_lowlight(y, param(op, "gamma"), param(op, "scale"));
    case OpType::Rain:
      return apply_rain(y, param(op, "density"), param(op, "angle"), param(op, "intensity"),
                        op.seed);
    case OpType::Blur: return apply_blur(y, param(op, "sigma"));
    case OpType::Snow:
      return apply_snow(y, param(op, "density"), param(op, "flake_size"), op.seed);
  }
  throw ConfigError("unhandled degradation operator");
}

Tensor compose(const DegradationSpec& spec, const Tensor& y) {
  spec.validate();
  Tensor x = y;
  for (const auto& op : spec.chain) x = apply_op(x, op);
  return x;
}

}  // namespace cea
