#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cea/config.hpp"
#include "cea/objectives.hpp"
#include "cea/props.hpp"
#include "cea/train.hpp"

namespace cea {

/// Human-readable table plus machine-readable JSON for one command.
struct Report {
  std::string table;
  nlohmann::json json;
  int exit_code = 0;
};

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);
/// Hash over every regular file under `dir` (relative path + content), in path order.
std::string sha256_tree(const std::filesystem::path& dir);

/// SHA-256 over the named parameters (name, shape, bytes); `skip_cea` drops CEA modules.
std::string parameter_hash(const ParamStore& params, bool skip_cea);

Report cmd_generate(const RunConfig& cfg, const std::filesystem::path& out);
Report cmd_train(const RunConfig& cfg, const std::filesystem::path& out);
Report cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                const std::string& split, const std::filesystem::path& out);
Report cmd_props(const PropOptions& opts, const std::vector<std::string>& suites = {});

struct BenchPoint {
  std::size_t n = 0, d_in = 0, d_out = 0, r = 0;
};
struct BenchOptions {
  std::vector<BenchPoint> grid;
  std::size_t warmup = 10;
  std::size_t runs = 100;
  std::uint64_t seed = 0;
};
std::vector<BenchPoint> default_bench_grid();
Report cmd_bench(const BenchOptions& opts);

struct AblationVariant {
  std::string table;  ///< "4", "6", "7", "8"
  std::string label;
  std::vector<std::string> overrides;
  /// Dotted config keys this variant is allowed to change.
  std::vector<std::string> axis;
  bool is_default = false;
};

/// Variants of one ablation table ("4", "6", "7", "8").
std::vector<AblationVariant> ablation_variants(const std::string& table);

struct AblationOptions {
  std::vector<std::string> tables{"4"};
  std::size_t seeds = 3;
  std::size_t bootstrap_resamples = 10000;
  /// Reuse finished runs whose config matches exactly.
  bool reuse = true;
};

struct VariantSummary {
  AblationVariant variant;
  std::vector<EvalReport> per_seed;
  std::map<std::string, double> median_psnr;  ///< by group
  std::map<std::string, double> median_ssim;
  std::vector<std::string> init_hashes;  ///< backbone-only parameter hash per seed
  std::vector<std::string> config_diff_violations;
};

struct AblationResult {
  std::string dataset_hash;
  std::vector<VariantSummary> variants;  ///< in table order
  std::map<std::string, BootstrapResult> bootstrap_vs_default;  ///< by "table/label"
  double seconds = 0.0;
  bool hashes_consistent = true;
  bool diffs_clean = true;
};

AblationResult run_ablation(const RunConfig& base, const std::filesystem::path& out,
                            const AblationOptions& opts);
Report ablation_report(const AblationResult& res);
Report cmd_ablate(const RunConfig& base, const std::filesystem::path& out,
                  const AblationOptions& opts);

Report cmd_bootstrap(const std::filesystem::path& csv_a, const std::filesystem::path& csv_b,
                     std::size_t n, double ci, std::uint64_t seed);

}  // namespace cea
