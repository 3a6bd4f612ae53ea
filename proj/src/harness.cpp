#include "cea/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "cea/backbone.hpp"
#include "cea/ops.hpp"
#include "cea/params.hpp"

namespace cea {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw IoError("sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) {
    if (n && EVP_DigestUpdate(ctx_, data, n) != 1) throw IoError("sha256 update failed");
  }
  void update(const std::string& s) {
    // Length prefix keeps concatenated fields unambiguous.
    const std::uint64_t n = s.size();
    update(&n, sizeof n);
    update(s.data(), s.size());
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw IoError("sha256 final failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i)
      os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

std::string fmt(double v, int prec = 2) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string signed_fmt(double v, int prec = 2) { return (v >= 0 ? "+" : "") + fmt(v, prec); }

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json bootstrap_json(const BootstrapResult& b) {
  return json{{"mean", b.mean},
              {"ci_lo", b.lo},
              {"ci_hi", b.hi},
              {"ci", b.ci},
              {"p_boot", b.p_boot},
              {"p_below_resolution", b.p_below_resolution},
              {"p_bound", b.p_bound()},
              {"n_resamples", b.n_resamples},
              {"n_pairs", b.n_pairs}};
}

std::string p_text(const BootstrapResult& b) {
  if (b.p_below_resolution) return "< " + fmt(b.p_bound(), 6);
  return fmt(b.p_boot, 4);
}

ToyDataset require_dataset(const RunConfig& cfg) {
  const fs::path dir = cfg.dataset_path;
  if (!fs::exists(dir / "manifest.json"))
    throw ConfigError("dataset not found at '" + dir.string() +
                      "' (create it with `cea-kit generate`)");
  return load_dataset(dir);
}

// Adopts the on-disk dataset geometry so the run record describes what was trained on.
RunConfig bind_dataset(RunConfig cfg, const ToyDataset& data) {
  const std::size_t threads = cfg.dataset.threads;
  cfg.dataset = data.config;
  cfg.dataset.threads = threads;
  cfg.validate();
  return cfg;
}

std::string dataset_hash(const fs::path& dir) {
  Sha256 h;
  h.update(read_file(dir / "manifest.json"));
  for (const char* sub : {"clean", "degraded"}) {
    h.update(std::string(sub));
    h.update(sha256_tree(dir / sub));
  }
  return h.hex();
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string sha256_tree(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) {
    h.update(f.generic_string());
    h.update(read_file(dir / f));
  }
  return h.hex();
}

std::string parameter_hash(const ParamStore& params, bool skip_cea) {
  Sha256 h;
  for (const auto& [name, t] : params.all()) {
    if (skip_cea && name.find(".cea.") != std::string::npos) continue;
    h.update(name);
    h.update(shape_str(t.shape()));
    const auto d = t.data();
    h.update(d.data(), d.size() * sizeof(double));
  }
  return h.hex();
}

Report cmd_generate(const RunConfig& cfg, const fs::path& out) {
  const fs::path dir = out.empty() ? fs::path(cfg.dataset_path) : out;
  const auto ds = generate_dataset(cfg.dataset, cfg.seed, dir);
  const auto hash = dataset_hash(dir);
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  for (const auto& it : ds.items) ++counts[it.split][it.category];

  Report r;
  std::ostringstream t;
  t << "dataset " << dir.string() << "  seed " << cfg.seed << "  " << ds.config.height << "x"
    << ds.config.width << "\n";
  t << std::left << std::setw(10) << "category";
  for (const auto& [split, _] : counts) t << std::right << std::setw(8) << split;
  t << "\n";
  for (const auto& cat : ds.config.categories) {
    t << std::left << std::setw(10) << cat;
    for (const auto& [split, c] : counts) {
      auto it = c.find(cat);
      t << std::right << std::setw(8) << (it == c.end() ? 0 : it->second);
    }
    t << "\n";
  }
  t << "sha256 " << hash << "\n";
  r.table = t.str();
  r.json = {{"command", "generate"},
            {"path", dir.string()},
            {"seed", cfg.seed},
            {"items", ds.items.size()},
            {"counts", counts},
            {"sha256", hash}};
  write_json(dir / "generate_report.json", r.json);
  return r;
}

Report cmd_train(const RunConfig& base, const fs::path& out) {
  const auto data = require_dataset(base);
  const auto cfg = bind_dataset(base, data);
  const fs::path dir = out.empty() ? fs::path(cfg.out) : out;
  const auto art = run_training(cfg, data, dir);

  Report r;
  std::ostringstream t;
  t << "run " << dir.string() << "  seed " << cfg.seed << "  steps " << art.result.log.size()
    << "\n";
  t << "loss " << fmt(art.result.initial_loss, 5) << " -> " << fmt(art.result.final_loss, 5)
    << "\n";
  t << eval_table(art.eval);
  const auto ck = sha256_file(art.checkpoint);
  t << "checkpoint " << art.checkpoint.string() << "  sha256 " << ck << "\n";
  r.table = t.str();
  r.json = {{"command", "train"},
            {"dir", dir.string()},
            {"seed", cfg.seed},
            {"steps", art.result.log.size()},
            {"initial_loss", art.result.initial_loss},
            {"final_loss", art.result.final_loss},
            {"checkpoint", art.checkpoint.string()},
            {"checkpoint_sha256", ck},
            {"eval", eval_to_json(art.eval)}};
  write_json(dir / "train_report.json", r.json);
  return r;
}

Report cmd_eval(const RunConfig& base, const fs::path& checkpoint, const std::string& split,
                const fs::path& out) {
  const auto data = require_dataset(base);
  const auto cfg = bind_dataset(base, data);
  if (data.split(split).empty()) throw ConfigError("split '" + split + "' is empty or unknown");
  const auto state = load_restorer(checkpoint, cfg);
  const auto ev = evaluate(state, data, split, cfg.threads);

  Report r;
  r.table = "checkpoint " + checkpoint.string() + "  split " + split + "\n" + eval_table(ev);
  r.json = {{"command", "eval"},
            {"checkpoint", checkpoint.string()},
            {"split", split},
            {"rows", ev.records.size()},
            {"eval", eval_to_json(ev)}};
  if (!out.empty()) {
    fs::create_directories(out);
    write_metric_csv(out / ("metrics_" + split + ".csv"), ev.records);
    write_json(out / ("eval_" + split + ".json"), eval_to_json(ev));
    write_json(out / "eval_report.json", r.json);
  }
  return r;
}

Report cmd_props(const PropOptions& opts, const std::vector<std::string>& suites) {
  std::vector<PropResult> res;
  if (suites.empty()) {
    res = run_all_props(opts);
  } else {
    for (const auto& s : suites) res.push_back(run_prop_suite(s, opts));
  }
  Report r;
  r.table = props_table(res);
  r.json = props_to_json(res);
  r.json["seed"] = opts.seed;
  r.json["fault"] = opts.fault;
  r.exit_code = std::all_of(res.begin(), res.end(), [](const auto& p) { return p.passed(); }) ? 0 : 1;
  return r;
}

std::vector<BenchPoint> default_bench_grid() {
  return {{256, 64, 64, 8},     {4096, 64, 64, 8},    {4096, 256, 256, 4},
          {4096, 256, 256, 8},  {4096, 256, 256, 16}, {4096, 64, 64, 64}};
}

Report cmd_bench(const BenchOptions& opts) {
  if (opts.runs < 100 || opts.warmup < 10)
    throw ConfigError("bench needs at least 10 warm-up and 100 timed runs");
  const auto grid = opts.grid.empty() ? default_bench_grid() : opts.grid;
  NoGradGuard ng;
  using clock = std::chrono::steady_clock;

  json rows = json::array();
  std::ostringstream t;
  t << std::right << std::setw(6) << "N" << std::setw(6) << "d_in" << std::setw(6) << "d_out"
    << std::setw(5) << "r" << std::setw(13) << "lowrank_MAC" << std::setw(13) << "dense_MAC"
    << std::setw(8) << "ratio" << std::setw(12) << "lowrank_ms" << std::setw(11) << "dense_ms"
    << std::setw(9) << "speedup" << "\n";
  for (const auto& p : grid) {
    if (!p.n || !p.d_in || !p.d_out || !p.r) throw ConfigError("bench dimensions must be >= 1");
    std::mt19937_64 rng(derive_seed(opts.seed, "bench"));
    const auto x = uniform_tensor({p.n, p.d_in}, rng);
    const auto a = uniform_tensor({p.d_in, p.r}, rng);
    const auto b = uniform_tensor({p.r, p.d_out}, rng);
    const double alpha = 1.0 / static_cast<double>(p.r);

    // (a) two skinny products; (b) the instance weight alpha*A*B is formed, then applied.
    auto lowrank = [&] { return matmul(scale(matmul(x, a), alpha), b); };
    auto dense = [&] { return matmul(x, scale(matmul(a, b), alpha)); };

    auto time_ms = [&](auto&& f) {
      volatile double sink = 0.0;
      for (std::size_t i = 0; i < opts.warmup; ++i) sink = sink + f()[0];
      std::vector<double> ms;
      ms.reserve(opts.runs);
      for (std::size_t i = 0; i < opts.runs; ++i) {
        const auto t0 = clock::now();
        sink = sink + f()[0];
        ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
      }
      return median(ms);
    };
    const double max_err = max_abs_diff(lowrank(), dense());
    const double lr_ms = time_ms(lowrank);
    const double de_ms = time_ms(dense);
    const auto cost = assembly_cost(p.n, p.d_in, p.d_out, p.r);
    const double speedup = de_ms / lr_ms;
    t << std::right << std::setw(6) << p.n << std::setw(6) << p.d_in << std::setw(6) << p.d_out
      << std::setw(5) << p.r << std::setw(13) << cost.lowrank << std::setw(13) << cost.dense
      << std::setw(8) << fmt(cost.ratio, 3) << std::setw(12) << fmt(lr_ms, 4) << std::setw(11)
      << fmt(de_ms, 4) << std::setw(9) << fmt(speedup, 2) << "\n";
    rows.push_back({{"n", p.n},
                    {"d_in", p.d_in},
                    {"d_out", p.d_out},
                    {"r", p.r},
                    {"lowrank_macs", cost.lowrank},
                    {"dense_macs", cost.dense},
                    {"mac_ratio", cost.ratio},
                    {"lowrank_median_ms", lr_ms},
                    {"dense_median_ms", de_ms},
                    {"speedup", speedup},
                    {"max_abs_diff", max_err}});
  }
  t << "timing: median of " << opts.runs << " runs after " << opts.warmup
    << " warm-ups; dense path includes forming the instance weight\n";
  Report r;
  r.table = t.str();
  r.json = {{"command", "bench"},
            {"warmup", opts.warmup},
            {"runs", opts.runs},
            {"protocol", "median wall time; reference 100 warm-up / 1000 timed scaled to 10/100"},
            {"dense_path", "matmul(X, alpha * A B) with A B formed per call"},
            {"rows", rows}};
  return r;
}

std::vector<AblationVariant> ablation_variants(const std::string& table) {
  std::vector<AblationVariant> v;
  if (table == "4") {
    const std::vector<std::string> axis{"cea.source", "cea.routing", "cea.top_k"};
    auto add = [&](const char* label, const char* src, const char* rt, bool def) {
      v.push_back({"4", label,
                   {std::string("cea.source=") + src, std::string("cea.routing=") + rt,
                    "cea.top_k=2"},
                   axis, def});
    };
    add("Static+Top-2", "static", "topk_softmax", false);
    add("Static+Dense", "static", "dense_signed", false);
    add("Dynamic+Top-2", "dynamic", "topk_softmax", false);
    add("Dynamic+Dense", "dynamic", "dense_signed", true);
  } else if (table == "6") {
    const std::vector<std::string> axis{"cea.generator"};
    v.push_back({"6", "GAP+MLP", {"cea.generator=gap_mlp"}, axis, false});
    v.push_back({"6", "Query probe", {"cea.generator=query_probe"}, axis, true});
  } else if (table == "7") {
    const std::vector<std::string> axis{"cea.rank"};
    for (int r : {4, 8, 16})
      v.push_back({"7", "r=" + std::to_string(r), {"cea.rank=" + std::to_string(r)}, axis, r == 8});
  } else if (table == "8") {
    const std::vector<std::string> axis{"backbone.cea_enabled", "cea.targets"};
    v.push_back({"8", "none", {"backbone.cea_enabled=false"}, axis, false});
    auto add = [&](const char* label, const char* targets, bool def) {
      v.push_back({"8", label,
                   {"backbone.cea_enabled=true", std::string("cea.targets=") + targets}, axis, def});
    };
    add("Q", R"(["Q"])", false);
    add("K", R"(["K"])", false);
    add("V", R"(["V"])", false);
    add("Q+K", R"(["Q","K"])", true);
    add("Q+K+V", R"(["Q","K","V"])", false);
    add("FFN_in", R"(["FFN_in"])", false);
  } else {
    throw ConfigError("unknown ablation table '" + table + "' (expected 4, 6, 7 or 8)");
  }
  return v;
}

AblationResult run_ablation(const RunConfig& base_in, const fs::path& out,
                            const AblationOptions& opts) {
  if (opts.seeds < 1) throw ConfigError("ablation needs at least one seed");
  const auto t_start = std::chrono::steady_clock::now();
  const auto data = require_dataset(base_in);
  const auto base = bind_dataset(base_in, data);

  AblationResult res;
  res.dataset_hash = dataset_hash(base.dataset_path);
  std::map<std::string, std::string> category_of;
  for (const auto& it : data.items) category_of[it.id] = it.category;

  std::map<std::string, EvalReport> cache;  // config hash -> eval
  auto run_one = [&](const RunConfig& cfg) {
    const auto key = sha256_hex(to_json(cfg).dump()).substr(0, 16);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    const fs::path dir = out / "runs" / key;
    const auto metrics = dir / ("metrics_" + cfg.eval_split + ".csv");
    EvalReport ev;
    bool reused = false;
    if (opts.reuse && fs::exists(metrics) && fs::exists(dir / "checkpoint.ceak") &&
        fs::exists(dir / "config.json")) {
      std::ifstream is(dir / "config.json");
      json saved;
      is >> saved;
      if (saved == to_json(cfg)) {
        auto recs = read_metric_csv(metrics);
        for (auto& r : recs) r.category = category_of.at(r.image_id);
        ev = aggregate(std::move(recs));
        reused = true;
      }
    }
    if (!reused) ev = run_training(cfg, data, dir).eval;
    cache[key] = ev;
    return ev;
  };

  for (const auto& table : opts.tables) {
    const auto variants = ablation_variants(table);
    const auto def = std::find_if(variants.begin(), variants.end(),
                                  [](const auto& v) { return v.is_default; });
    std::vector<std::map<std::string, double>> mean_psnr(variants.size());
    std::vector<std::map<std::string, std::size_t>> seen(variants.size());
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      const auto& var = variants[vi];
      VariantSummary s;
      s.variant = var;
      std::map<std::string, std::vector<double>> gp, gs;
      for (std::size_t si = 0; si < opts.seeds; ++si) {
        const std::string seed_set = "seed=" + std::to_string(base.seed + si);
        const auto ref = with_overrides(base, {seed_set});
        auto sets = var.overrides;
        sets.push_back(seed_set);
        const auto cfg = with_overrides(base, sets);
        for (const auto& k : config_diff(ref, cfg))
          if (std::find(var.axis.begin(), var.axis.end(), k) == var.axis.end())
            s.config_diff_violations.push_back(k);
        const auto init = make_restorer(cfg.model(), data.config.height, data.config.width, cfg.seed);
        s.init_hashes.push_back(parameter_hash(init.params, true));
        auto ev = run_one(cfg);
        for (const auto& [g, m] : ev.groups) {
          gp[g].push_back(m.psnr);
          gs[g].push_back(m.ssim);
        }
        for (const auto& rec : ev.records) {
          if (rec.identical()) continue;
          mean_psnr[vi][rec.image_id] += rec.psnr_db;
          ++seen[vi][rec.image_id];
        }
        s.per_seed.push_back(std::move(ev));
      }
      for (const auto& [g, v] : gp) s.median_psnr[g] = median(v);
      for (const auto& [g, v] : gs) s.median_ssim[g] = median(v);
      if (!s.config_diff_violations.empty()) res.diffs_clean = false;
      res.variants.push_back(std::move(s));
    }
    // Backbone initializations must agree across variants seed by seed.
    const std::size_t first = res.variants.size() - variants.size();
    for (std::size_t vi = first + 1; vi < res.variants.size(); ++vi)
      if (res.variants[vi].init_hashes != res.variants[first].init_hashes)
        res.hashes_consistent = false;

    if (def == variants.end()) continue;
    const std::size_t di = static_cast<std::size_t>(def - variants.begin());
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      if (vi == di) continue;
      std::vector<double> diffs;
      for (const auto& [id, sum] : mean_psnr[di]) {
        auto it = mean_psnr[vi].find(id);
        if (it == mean_psnr[vi].end()) continue;
        diffs.push_back(sum / static_cast<double>(seen[di].at(id)) -
                        it->second / static_cast<double>(seen[vi].at(id)));
      }
      if (diffs.empty()) continue;
      res.bootstrap_vs_default[table + "/" + variants[vi].label] =
          paired_bootstrap(diffs, opts.bootstrap_resamples, 0.95, base.seed);
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

Report ablation_report(const AblationResult& res) {
  static const std::vector<std::string> groups{"Single", "Double", "Triple", "Avg"};
  Report r;
  std::ostringstream t;
  json tables = json::object();
  std::string current;
  const VariantSummary* def = nullptr;
  for (std::size_t i = 0; i < res.variants.size(); ++i) {
    const auto& s = res.variants[i];
    const auto& table = s.variant.table;
    if (table != current) {
      current = table;
      def = nullptr;
      for (std::size_t j = i; j < res.variants.size() && res.variants[j].variant.table == table; ++j)
        if (res.variants[j].variant.is_default) def = &res.variants[j];
      t << "\nTable " << table << " (median over " << s.per_seed.size()
        << " seeds, PSNR/SSIM)\n";
      t << std::left << std::setw(16) << "Variant";
      for (const auto& g : groups) t << std::right << std::setw(15) << g;
      t << std::setw(9) << "dAvg" << "  bootstrap vs default (PSNR)\n";
    }
    t << std::left << std::setw(16) << (s.variant.label + (s.variant.is_default ? " *" : ""));
    json row{{"label", s.variant.label},
             {"default", s.variant.is_default},
             {"overrides", s.variant.overrides},
             {"init_hashes", s.init_hashes},
             {"config_diff_violations", s.config_diff_violations}};
    for (const auto& g : groups) {
      const double p = s.median_psnr.count(g) ? s.median_psnr.at(g) : std::nan("");
      const double q = s.median_ssim.count(g) ? s.median_ssim.at(g) : std::nan("");
      t << std::right << std::setw(15) << (fmt(p) + "/" + fmt(q, 4));
      row["psnr"][g] = p;
      row["ssim"][g] = q;
    }
    json seeds = json::array();
    for (const auto& ev : s.per_seed) seeds.push_back(ev.groups.at("Avg").psnr);
    row["seed_avg_psnr"] = seeds;
    const double delta = def ? s.median_psnr.at("Avg") - def->median_psnr.at("Avg") : std::nan("");
    row["delta_avg_psnr"] = delta;
    t << std::right << std::setw(9) << (s.variant.is_default ? "-" : signed_fmt(delta));
    const auto key = table + "/" + s.variant.label;
    if (auto it = res.bootstrap_vs_default.find(key); it != res.bootstrap_vs_default.end()) {
      const auto& b = it->second;
      t << "  " << signed_fmt(b.mean, 3) << " [" << fmt(b.lo, 3) << ", " << fmt(b.hi, 3)
        << "] p=" << p_text(b);
      row["bootstrap_default_minus_variant"] = bootstrap_json(b);
    }
    t << "\n";
    tables[table].push_back(row);
  }
  t << "\ndataset sha256 " << res.dataset_hash << "\n";
  t << "initial backbone weights identical across variants: "
    << (res.hashes_consistent ? "yes" : "NO") << "\n";
  t << "config diffs confined to ablation axes: " << (res.diffs_clean ? "yes" : "NO") << "\n";
  t << "grid time " << fmt(res.seconds, 1) << " s\n";
  r.table = t.str();
  r.json = {{"command", "ablate"},
            {"dataset_sha256", res.dataset_hash},
            {"hashes_consistent", res.hashes_consistent},
            {"diffs_clean", res.diffs_clean},
            {"seconds", res.seconds},
            {"tables", tables}};
  r.exit_code = res.hashes_consistent && res.diffs_clean ? 0 : 1;
  return r;
}

Report cmd_ablate(const RunConfig& base, const fs::path& out, const AblationOptions& opts) {
  const fs::path dir = out.empty() ? fs::path(base.out) : out;
  fs::create_directories(dir);
  auto r = ablation_report(run_ablation(base, dir, opts));
  write_json(dir / "ablate_report.json", r.json);
  {
    std::ofstream os(dir / "ablate_report.txt", std::ios::trunc);
    os << r.table;
  }
  return r;
}

Report cmd_bootstrap(const fs::path& csv_a, const fs::path& csv_b, std::size_t n, double ci,
                     std::uint64_t seed) {
  const auto d = join_metrics(read_metric_csv(csv_a), read_metric_csv(csv_b));
  const auto bp = paired_bootstrap(d.psnr, n, ci, seed);
  const auto bs = paired_bootstrap(d.ssim, n, ci, seed);
  Report r;
  std::ostringstream t;
  t << "paired bootstrap  a=" << csv_a.string() << "  b=" << csv_b.string() << "\n";
  t << "pairs " << d.ids.size() << "  resamples " << n << "  ci " << fmt(ci * 100, 1)
    << "%  seed " << seed << "\n";
  t << std::left << std::setw(7) << "metric" << std::right << std::setw(12) << "mean(a-b)"
    << std::setw(26) << "CI" << std::setw(14) << "p_boot" << "\n";
  auto line = [&](const char* name, const BootstrapResult& b, int prec) {
    t << std::left << std::setw(7) << name << std::right << std::setw(12) << fmt(b.mean, prec)
      << std::setw(26) << ("[" + fmt(b.lo, prec) + ", " + fmt(b.hi, prec) + "]") << std::setw(14)
      << p_text(b) << "\n";
  };
  line("PSNR", bp, 4);
  line("SSIM", bs, 6);
  r.table = t.str();
  r.json = {{"command", "bootstrap"},
            {"a", csv_a.string()},
            {"b", csv_b.string()},
            {"seed", seed},
            {"psnr", bootstrap_json(bp)},
            {"ssim", bootstrap_json(bs)}};
  return r;
}

}  // namespace cea
