#include "cea/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "cea/ops.hpp"

namespace cea {

void LossConfig::validate() const {
  if (!(lambda_f >= 0.0)) throw ConfigError("loss.lambda_f must be >= 0");
}

Tensor loss_total(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
  cfg.validate();
  if (pred.shape() != target.shape())
    throw DimensionError("loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  Tensor rec = mean(abs(sub(pred, target)));
  if (cfg.lambda_f == 0.0) return rec;
  Tensor target_mag = fft2_magnitude(target.detach());
  Tensor freq = mean(abs(sub(fft2_magnitude(pred), target_mag)));
  return add(rec, scale(freq, cfg.lambda_f));
}

double psnr(const Tensor& pred, const Tensor& target, double peak) {
  if (pred.shape() != target.shape()) throw DimensionError("psnr: shape mismatch");
  auto a = pred.data(), b = target.data();
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> g(kWindow * kWindow);
  const double c = (kWindow - 1) / 2.0;
  double total = 0.0;
  for (std::size_t y = 0; y < kWindow; ++y)
    for (std::size_t x = 0; x < kWindow; ++x) {
      const double dy = y - c, dx = x - c;
      g[y * kWindow + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
      total += g[y * kWindow + x];
    }
  for (auto& v : g) v /= total;
  return g;
}

}  // namespace

double ssim(const Tensor& pred, const Tensor& target, double peak) {
  if (pred.shape() != target.shape()) throw DimensionError("ssim: shape mismatch");
  if (pred.rank() != 2 && pred.rank() != 3) throw DimensionError("ssim expects [H x W (x C)]");
  const auto h = pred.dim(0), w = pred.dim(1);
  const auto ch = pred.rank() == 3 ? pred.dim(2) : 1;
  if (h < kWindow || w < kWindow)
    throw DimensionError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " smaller than the 11x11 window");
  static const auto g = gaussian_window();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  auto a = pred.data(), b = target.data();
  double acc = 0.0;
  const auto ny = h - kWindow + 1, nx = w - kWindow + 1;
  for (std::size_t c = 0; c < ch; ++c) {
    double channel_sum = 0.0;
    for (std::size_t oy = 0; oy < ny; ++oy)
      for (std::size_t ox = 0; ox < nx; ++ox) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::size_t ky = 0; ky < kWindow; ++ky)
          for (std::size_t kx = 0; kx < kWindow; ++kx) {
            const auto idx = ((oy + ky) * w + ox + kx) * ch + c;
            const double wt = g[ky * kWindow + kx];
            const double x = a[idx], y = b[idx];
            mx += wt * x;
            my += wt * y;
            sxx += wt * x * x;
            syy += wt * y * y;
            sxy += wt * x * y;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        channel_sum += ((2 * mx * my + c1) * (2 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    acc += channel_sum / static_cast<double>(ny * nx);
  }
  return acc / static_cast<double>(ch);
}

void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "image_id,psnr_db,ssim\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.image_id << ',';
    if (r.identical()) os << "inf";
    else os << r.psnr_db;
    os << ',' << r.ssim << '\n';
  }
  if (!os) throw IoError("metric CSV write failed: " + path.string());
}

std::vector<MetricRecord> read_metric_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty metric CSV: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image_id,psnr_db,ssim")
    throw IoError("unexpected metric CSV header in " + path.string() + ": " + line);
  std::vector<MetricRecord> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, p, s;
    if (!std::getline(ss, id, ',') || !std::getline(ss, p, ',') || !std::getline(ss, s, ','))
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    MetricRecord r;
    r.image_id = id;
    try {
      r.psnr_db = (p == "inf") ? std::numeric_limits<double>::infinity() : std::stod(p);
      r.ssim = std::stod(s);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

double quantile_linear(std::vector<double> values, double p) {
  if (values.empty()) throw ConfigError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

// Mean as shift + mean(x - shift); exact for constant samples.
template <class IndexFn>
double shifted_mean(std::size_t n, double shift, IndexFn value) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += value(i) - shift;
  return shift + acc / static_cast<double>(n);
}

}  // namespace

BootstrapResult paired_bootstrap(const std::vector<double>& diffs, std::size_t n_resamples,
                                 double ci, std::uint64_t seed) {
  if (diffs.empty()) throw ConfigError("paired_bootstrap: no differences");
  if (n_resamples == 0) throw ConfigError("paired_bootstrap: n_resamples must be >= 1");
  if (!(ci > 0.0 && ci < 1.0)) throw ConfigError("paired_bootstrap: ci must be in (0, 1)");
  for (double d : diffs)
    if (!std::isfinite(d)) throw NumericError("paired_bootstrap: non-finite difference");
  const auto n = diffs.size();
  const double shift = diffs.front();
  BootstrapResult res;
  res.n_pairs = n;
  res.n_resamples = n_resamples;
  res.ci = ci;
  res.mean = shifted_mean(n, shift, [&](std::size_t i) { return diffs[i]; });
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> means(n_resamples);
  std::size_t non_positive = 0;
  for (auto& m : means) {
    m = shifted_mean(n, shift, [&](std::size_t) { return diffs[pick(rng)]; });
    if (m <= 0.0) ++non_positive;
  }
  const double tail = (1.0 - ci) / 2.0;
  res.lo = quantile_linear(means, tail);
  res.hi = quantile_linear(means, 1.0 - tail);
  res.p_boot = static_cast<double>(non_positive) / static_cast<double>(n_resamples);
  res.p_below_resolution = non_positive == 0;
  return res;
}

PairedDiffs join_metrics(const std::vector<MetricRecord>& a, const std::vector<MetricRecord>& b) {
  std::map<std::string, const MetricRecord*> index;
  for (const auto& r : b) index[r.image_id] = &r;
  std::vector<std::string> missing;
  PairedDiffs out;
  std::map<std::string, bool> seen;
  for (const auto& r : a) {
    seen[r.image_id] = true;
    auto it = index.find(r.image_id);
    if (it == index.end()) {
      missing.push_back(r.image_id + " (only in first)");
      continue;
    }
    const auto& o = *it->second;
    double dp;
    if (r.identical() && o.identical()) dp = 0.0;
    else if (r.identical() || o.identical())
      throw NumericError("image " + r.image_id +
                         " has an identical-image PSNR on one side only; difference undefined");
    else dp = r.psnr_db - o.psnr_db;
    out.ids.push_back(r.image_id);
    out.psnr.push_back(dp);
    out.ssim.push_back(r.ssim - o.ssim);
  }
  for (const auto& r : b)
    if (!seen.count(r.image_id)) missing.push_back(r.image_id + " (only in second)");
  if (!missing.empty()) {
    std::string msg = "unmatched image ids:";
    for (const auto& m : missing) msg += " " + m;
    throw ConfigError(msg);
  }
  return out;
}

}  // namespace cea
