#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "cea/tensor.hpp"

namespace cea {

struct LossConfig {
  double lambda_f = 0.10;
  void validate() const;
};

/// mean |pred - target| + lambda_f * mean | |F(pred)| - |F(target)| |, with F the
/// unnormalized per-channel 2-D DFT. Both inputs are [H x W x C].
Tensor loss_total(const Tensor& pred, const Tensor& target, const LossConfig& cfg);

/// 10 log10(peak^2 / MSE). Identical inputs return +infinity.
double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over
/// channels, with C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2. Accepts
/// [H x W] or [H x W x C]. Throws DimensionError for images smaller than the window.
double ssim(const Tensor& pred, const Tensor& target, double peak = 1.0);

struct MetricRecord {
  std::string image_id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::string category;  ///< optional; not part of the CSV schema

  bool identical() const { return psnr_db == std::numeric_limits<double>::infinity(); }
};

/// CSV with header `image_id,psnr_db,ssim`; identical images are written as `inf`.
void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& rows);
std::vector<MetricRecord> read_metric_csv(const std::filesystem::path& path);

struct BootstrapResult {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  /// Fraction of resampled means <= 0.
  double p_boot = 0.0;
  /// True when no resampled mean was <= 0; the probability is then below 1/n.
  bool p_below_resolution = false;
  std::size_t n_resamples = 0;
  std::size_t n_pairs = 0;
  double ci = 0.95;

  /// Upper bound reported when p_boot hits zero: 1 / n_resamples.
  double p_bound() const { return 1.0 / static_cast<double>(n_resamples); }
};

/// Linear interpolation between order statistics (h = (n - 1) p).
double quantile_linear(std::vector<double> values, double p);

/// Paired percentile bootstrap over per-image differences.
BootstrapResult paired_bootstrap(const std::vector<double>& diffs, std::size_t n_resamples = 10000,
                                 double ci = 0.95, std::uint64_t seed = 0);

/// Per-image differences a - b for rows joined on image_id (order of `a`).
/// Throws ConfigError listing ids missing from either side.
struct PairedDiffs {
  std::vector<std::string> ids;
  std::vector<double> psnr;
  std::vector<double> ssim;
};
PairedDiffs join_metrics(const std::vector<MetricRecord>& a, const std::vector<MetricRecord>& b);

}  // namespace cea
