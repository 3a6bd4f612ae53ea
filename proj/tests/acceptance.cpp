// Acceptance run: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cea/backbone.hpp"
#include "cea/grad_check.hpp"
#include "cea/harness.hpp"
#include "cea/ops.hpp"
#include "cea/props.hpp"

#ifndef CEA_KIT_PATH
#define CEA_KIT_PATH "cea-kit"
#endif

using namespace cea;
namespace fs = std::filesystem;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

std::string fixed(double v, int p = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(p);
  os << v;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Training recipe for the ablation criteria (5 and 6); 16x16 keeps the grid under 30 minutes.
RunConfig ablation_base(const fs::path& work, std::size_t steps, double lr) {
  RunConfig c;
  c.dataset.height = c.dataset.width = 16;
  c.dataset_path = (work / "data16").string();
  c.optim.steps = steps;
  c.optim.lr = lr;
  c.out = (work / "ablate").string();
  return c;
}

Outcome criterion1() {
  const auto t0 = clock_type::now();
  auto r = run_prop_suite("tokenwise_matrix_equivalence");
  const double s = seconds_since(t0);
  return {r.passed() && r.cases >= 50 && r.worst < 1e-10 && s < 5.0,
          std::to_string(r.cases) + " instances, worst |diff| " + sci(r.worst) +
              " (tol 1e-10), " + fixed(s, 3) + " s (limit 5 s)"};
}

// Max |dY(scaled) - dY(raw)| over 20 seeds for a given RankNorm epsilon.
double scale_ambiguity_deviation(double eps) {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(derive_seed(1000 + s, "c2"));
    const std::size_t n = 16, din = 12, dout = 10, r = 6;
    CeaConfig cfg;
    cfg.rank = r;
    cfg.epsilon = eps;
    auto x = uniform_tensor({n, din}, rng);
    auto a = uniform_tensor({din, r}, rng), b = uniform_tensor({r, dout}, rng);
    std::uniform_real_distribution<double> mag(0.1, 10.0);
    std::bernoulli_distribution neg(0.5);
    std::vector<double> c(r);
    for (auto& v : c) v = (neg(rng) ? -1.0 : 1.0) * mag(rng);
    std::vector<double> as(a.to_vector()), bs(b.to_vector());
    for (std::size_t i = 0; i < din; ++i)
      for (std::size_t k = 0; k < r; ++k) as[i * r + k] *= c[k];
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t j = 0; j < dout; ++j) bs[k * dout + j] /= c[k];
    FactorPair raw{a, b, Target::Q, false};
    FactorPair scaled{Tensor::from({din, r}, as), Tensor::from({r, dout}, bs), Target::Q, false};
    const auto y0 = assemble_residual_matrix(x, rank_norm(raw, eps), cfg);
    const auto y1 = assemble_residual_matrix(x, rank_norm(scaled, eps), cfg);
    worst = std::max(worst, max_abs_diff(y0, y1));
  }
  return worst;
}

Outcome criterion2() {
  const double tight = scale_ambiguity_deviation(1e-12);
  const double dflt = scale_ambiguity_deviation(CeaConfig{}.epsilon);
  auto suite = run_prop_suite("ranknorm_scale_invariance");
  return {tight < 1e-9 && suite.passed(),
          "20 seeds, c_k in +-[0.1,10]: max |dY diff| " + sci(tight) +
              " at eps=1e-12 (tol 1e-9); suite " + (suite.passed() ? "ok" : "FAILED") +
              "; at the training eps=1e-6 the floor itself shifts dY by " + sci(dflt)};
}

Outcome criterion3() {
  double worst = 0.0;
  std::size_t checked = 0;
  bool ok = true;
  for (auto source : {FactorSource::Dynamic, FactorSource::Static}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const std::size_t h = 4, w = 4, c = 8;
      ParamStore store;
      CeaConfig cfg;
      cfg.rank = 4;
      cfg.adapter_heads = 2;
      cfg.source = source;
      cfg.targets = {Target::Q, Target::K, Target::V, Target::FfnIn};
      auto block = init_block(store, "blk", c, 2, 2, s);
      CeaModule mod;
      mod.source = source;
      const auto dims = block_target_dims(c, 2);
      if (source == FactorSource::Static) mod.fixed = init_static(store, "blk.cea", cfg, dims, s);
      else mod.adapter = init_adapter(store, "blk.cea", c, cfg, dims, s);
      std::mt19937_64 rng(derive_seed(s, "c3"));
      auto feats = uniform_tensor({h, w, c}, rng);
      auto target = uniform_tensor({h, w, c}, rng);
      auto f = [&] {
        CeaContext ctx;
        ctx.cfg = &cfg;
        ctx.factors = generate_factors(feats, mod, cfg);
        auto y = transformer_block_forward(reshape(feats, {h * w, c}), block, &ctx);
        return loss_total(reshape(y, {h, w, c}), target, LossConfig{});
      };
      std::vector<Tensor> params;
      std::vector<std::string> names;
      for (const auto& [n, t] : store.all())
        if (n.find(".cea.") != std::string::npos) {
          names.push_back(n);
          params.push_back(t);
        }
      GradCheckOptions o;
      o.eps = 1e-5;
      o.tol = 1e-4;
      // Entries below ~1e-7 carry ~1e-11 of central-difference roundoff.
      o.floor = 1e-6;
      auto rep = grad_check(f, params, names, o);
      worst = std::max(worst, rep.max_rel_error);
      checked += params.size();
      ok = ok && rep.passed && rep.max_rel_error < 1e-4;
    }
  }
  return {ok, "central differences (eps 1e-5) on L1+FFT loss through a CEA block, Q/K/V/FFN_in, "
              "dynamic and static sources, 5 seeds each, " +
                  std::to_string(checked) + " parameter tensors: max rel error " + sci(worst) +
                  " (tol 1e-4, denominator floor 1e-6)"};
}

Outcome criterion4() {
  const auto c = assembly_cost(256, 64, 64, 8);
  bool ok = c.lowrank == 256ull * 64 * 8 + 256ull * 8 * 64 && c.dense == 256ull * 64 * 64 &&
            c.ratio == 4.0;

  // Independent sum of the formula over every CEA-equipped block and target.
  for (std::size_t s : {16u, 32u}) {
    BackboneConfig cfg;
    const auto levels = cfg.levels_for(s, s);
    std::uint64_t lo = 0, de = 0;
    for (const auto& slot : cea_placement(cfg, levels)) {
      const std::size_t level = levels - 1 - slot.stage;
      const std::uint64_t side = (s + (1u << level) - 1) >> level;
      const std::uint64_t n = side * side, ch = cfg.channels(level), r = cfg.cea.rank;
      for (auto t : cfg.cea.targets) {
        const std::uint64_t dout = t == Target::FfnIn ? ch * cfg.ffn_ratio : ch;
        lo += n * ch * r + n * r * dout;
        de += n * ch * dout;
      }
    }
    const auto fr = flop_report(cfg, s, s);
    ok = ok && fr.cea_assembly.lowrank == lo && fr.cea_assembly.dense == de;
  }
  const auto cross = run_prop_suite("flop_counter_crosscheck");
  ok = ok && cross.passed();

  BenchOptions bo;
  bo.grid = {{4096, 256, 256, 8}};
  const auto bench = cmd_bench(bo);
  const double speedup = bench.json.at("rows").at(0).at("speedup").get<double>();
  ok = ok && speedup > 1.5;
  return {ok, "N=256,d=64,r=8: " + std::to_string(c.lowrank) + " vs " + std::to_string(c.dense) +
                  " MACs, ratio " + fixed(c.ratio, 1) +
                  "; flop_report assembly totals match the formula; instrumented counter " +
                  (cross.passed() ? "agrees" : "DISAGREES") + "; measured speedup at r=8,d=256,N=4096: " +
                  fixed(speedup, 2) + "x (floor 1.5x)"};
}

const VariantSummary& find_variant(const AblationResult& r, const std::string& table,
                                   const std::string& label) {
  for (const auto& v : r.variants)
    if (v.variant.table == table && v.variant.label == label) return v;
  throw ConfigError("missing ablation variant " + table + "/" + label);
}

struct GridRun {
  AblationResult t4, t6;
  double t4_seconds = 0.0;
};

GridRun run_grids(const fs::path& work, std::size_t steps, double lr, std::size_t seeds,
                  bool fresh) {
  auto base = ablation_base(work, steps, lr);
  if (!fs::exists(fs::path(base.dataset_path) / "manifest.json")) cmd_generate(base, {});
  GridRun g;
  AblationOptions o;
  o.seeds = seeds;
  o.tables = {"4"};
  o.reuse = !fresh;
  const auto t0 = clock_type::now();
  g.t4 = run_ablation(base, base.out, o);
  g.t4_seconds = seconds_since(t0);
  o.tables = {"6"};
  o.reuse = true;
  g.t6 = run_ablation(base, base.out, o);
  fs::create_directories(base.out);
  for (const auto* r : {&g.t4, &g.t6}) {
    auto rep = ablation_report(*r);
    std::cout << rep.table;
  }
  return g;
}

Outcome criterion5(const GridRun& g, bool fresh) {
  const double dd = find_variant(g.t4, "4", "Dynamic+Dense").median_psnr.at("Avg");
  const double dt = find_variant(g.t4, "4", "Dynamic+Top-2").median_psnr.at("Avg");
  const double sd = find_variant(g.t4, "4", "Static+Dense").median_psnr.at("Avg");
  const double m1 = dd - dt, m2 = dd - sd;
  const bool timed = fresh;
  bool ok = m1 >= 0.1 && m2 >= 0.1 && g.t4.hashes_consistent && g.t4.diffs_clean;
  if (timed) ok = ok && g.t4_seconds < 1800.0;
  return {ok, "median Avg PSNR Dyn+Dense " + fixed(dd) + " vs Dyn+Top-2 " + fixed(dt) + " (" +
                  (m1 >= 0 ? "+" : "") + fixed(m1) + " dB) and Static+Dense " + fixed(sd) + " (" +
                  (m2 >= 0 ? "+" : "") + fixed(m2) + " dB), margin floor 0.10 dB; grid " +
                  (timed ? fixed(g.t4_seconds, 0) + " s (limit 1800 s)"
                         : "reused from an earlier run, time not measured")};
}

Outcome criterion6(const GridRun& g) {
  const double qp = find_variant(g.t6, "6", "Query probe").median_psnr.at("Avg");
  const double gm = find_variant(g.t6, "6", "GAP+MLP").median_psnr.at("Avg");
  const auto perm = run_prop_suite("gap_permutation_invariance");
  return {qp >= gm && perm.passed() && g.t6.hashes_consistent && g.t6.diffs_clean,
          "median Avg PSNR query probe " + fixed(qp) + " vs GAP+MLP " + fixed(gm) +
              "; permutation test (GAP exact, probe sensitive) " + (perm.passed() ? "ok" : "FAILED")};
}

Outcome criterion7() {
  auto zero = run_prop_suite("zeroed_factors_bitwise");
  auto place = run_prop_suite("cea_placement_counts");
  BackboneConfig cfg;
  cfg.decoder_blocks = {2, 4, 4};
  std::vector<std::size_t> per(3, 0);
  for (const auto& s : cea_placement(cfg, 3)) ++per[s.stage];
  const bool expected = per == std::vector<std::size_t>{1, 2, 2};
  return {zero.passed() && place.passed() && expected,
          "zeroed factors bitwise equal to CEA-free output in " + std::to_string(zero.cases) +
              " configs; placement [2,4,4] -> [" + std::to_string(per[0]) + "," +
              std::to_string(per[1]) + "," + std::to_string(per[2]) + "]; ceil(d/2) suite " +
              (place.passed() ? "ok" : "FAILED")};
}

Outcome criterion8() {
  const std::size_t n = 10000;
  auto c = paired_bootstrap(std::vector<double>(300, 1.0), n, 0.95, 0);
  bool ok = c.lo == 1.0 && c.hi == 1.0 && c.p_boot < 1.0 / n && c.p_below_resolution;

  // Matched differences shaped like a 2200-image paired comparison: mean +0.74 dB, sd 1.8 dB.
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd(0.7434, 1.8);
  std::vector<double> d(2200);
  for (auto& v : d) v = nd(rng);
  auto a = paired_bootstrap(d, n, 0.95, 7);
  auto b = paired_bootstrap(d, n, 0.95, 7);
  ok = ok && a.lo > 0.0 && a.lo == b.lo && a.hi == b.hi && a.p_boot == b.p_boot;
  return {ok, "constant +1: CI [" + fixed(c.lo, 3) + ", " + fixed(c.hi, 3) + "], p_boot " +
                  sci(c.p_boot) + " < 1/n; synthetic n=2200: mean " + fixed(a.mean, 3) + ", CI [" +
                  fixed(a.lo, 3) + ", " + fixed(a.hi, 3) + "], p_boot " + sci(a.p_boot) +
                  ", identical on rerun"};
}

Outcome criterion9() {
  std::mt19937_64 rng(9);
  auto y = uniform_tensor({16, 16, 3}, rng, 0, 1);
  const double pi = psnr(y, y), si = ssim(y, y);
  std::vector<double> z(100, 0.0), e = z;
  e[0] = 1.0;
  const double p20 = psnr(Tensor::from({10, 10}, e), Tensor::from({10, 10}, z));
  std::vector<double> cb(256), inv(256);
  for (std::size_t i = 0; i < 256; ++i) {
    cb[i] = static_cast<double>((i / 16 + i % 16) % 2);
    inv[i] = 1.0 - cb[i];
  }
  const double sn = ssim(Tensor::from({16, 16}, inv), Tensor::from({16, 16}, cb));
  const bool ok = pi == std::numeric_limits<double>::infinity() && si == 1.0 && p20 == 20.0 && sn < 0.0;
  return {ok, "identical: PSNR " + fixed(pi) + ", SSIM " + fixed(si, 12) + "; MSE 0.01: " +
                  fixed(p20, 12) + " dB; inverse checkerboard SSIM " + fixed(sn, 4)};
}

int run_kit(const std::string& args) {
  const std::string cmd = std::string("\"") + CEA_KIT_PATH + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome criterion10(const fs::path& work) {
  const fs::path root = work / "repro";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string data = (root / "data").string();
  const std::string common = " --threads 1 --set dataset.height=16 dataset.width=16 dataset.n_train=22 "
                             "dataset.n_test=11 optim.steps=10 dataset.path='\"" + data + "\"'";
  int rc = run_kit("generate --out '" + data + "'" + common);
  rc |= run_kit("generate --out '" + (root / "data_again").string() + "'" + common);
  rc |= run_kit("train --out '" + (root / "a").string() + "'" + common);
  rc |= run_kit("train --out '" + (root / "b").string() + "'" + common);
  if (rc != 0) return {false, "cea-kit exited with an error"};
  // generate_report.json records absolute paths, so only the payload is hashed.
  auto payload_hash = [](const fs::path& d) {
    return sha256_hex(sha256_file(d / "manifest.json") + sha256_tree(d / "clean") +
                      sha256_tree(d / "degraded"));
  };
  const auto h1 = payload_hash(root / "data"), h2 = payload_hash(root / "data_again");
  const auto c1 = sha256_file(root / "a" / "checkpoint.ceak");
  const auto c2 = sha256_file(root / "b" / "checkpoint.ceak");
  return {h1 == h2 && c1 == c2, "dataset hash " + h1.substr(0, 16) + (h1 == h2 ? " == " : " != ") +
                                    h2.substr(0, 16) + "; checkpoints " + c1.substr(0, 16) +
                                    (c1 == c2 ? " == " : " != ") + c2.substr(0, 16)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CEA acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool reuse = false;
  std::size_t steps = 1500, seeds = 3;
  double lr = 1e-3;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  app.add_flag("--reuse", reuse, "reuse finished ablation runs (grid time is then not measured)");
  app.add_option("--steps", steps, "training steps per ablation run");
  app.add_option("--lr", lr, "learning rate for ablation runs");
  app.add_option("--seeds", seeds, "seeds per ablation variant");
  CLI11_PARSE(app, argc, argv);

  const fs::path wd = work;
  fs::create_directories(wd);
  auto want = [&](int id) { return only.empty() || std::count(only.begin(), only.end(), id) > 0; };

  std::vector<std::pair<int, std::function<Outcome()>>> plan;
  GridRun grid;
  bool grid_done = false;
  auto ensure_grid = [&] {
    if (!grid_done) grid = run_grids(wd, steps, lr, seeds, !reuse);
    grid_done = true;
  };
  plan.emplace_back(1, criterion1);
  plan.emplace_back(2, criterion2);
  plan.emplace_back(3, criterion3);
  plan.emplace_back(4, criterion4);
  plan.emplace_back(5, [&] {
    ensure_grid();
    return criterion5(grid, !reuse);
  });
  plan.emplace_back(6, [&] {
    ensure_grid();
    return criterion6(grid);
  });
  plan.emplace_back(7, criterion7);
  plan.emplace_back(8, criterion8);
  plan.emplace_back(9, criterion9);
  plan.emplace_back(10, [&] { return criterion10(wd); });

  std::vector<std::string> lines;
  int failures = 0;
  for (auto& [id, fn] : plan) {
    if (!want(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    lines.push_back((o.pass ? "PASS " : "FAIL ") + std::string("criterion ") + std::to_string(id) +
                    ": " + o.detail);
    std::cout << lines.back() << std::endl;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << '\n';
  return failures == 0 ? 0 : 1;
}
