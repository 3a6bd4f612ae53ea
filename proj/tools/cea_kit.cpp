#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cea/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
  std::optional<std::size_t> threads;
  std::string json;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "global seed");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--set", c.sets, "override a config field, e.g. cea.rank=16")->take_all();
  sub->add_option("--threads", c.threads, "worker threads (1 = bitwise reproducible)");
  sub->add_option("--json", c.json, "write the JSON report to this file ('-' for stdout)");
}

cea::RunConfig resolve_config(const Common& c, const fs::path& fallback = {}) {
  cea::RunConfig cfg;
  if (!c.config.empty()) cfg = cea::load_run_config(c.config);
  else if (!fallback.empty() && fs::exists(fallback)) cfg = cea::load_run_config(fallback);
  auto sets = c.sets;
  if (c.seed) sets.push_back("seed=" + std::to_string(*c.seed));
  if (c.threads) sets.push_back("threads=" + std::to_string(*c.threads));
  if (!c.out.empty()) sets.push_back("out=\"" + c.out + "\"");
  return sets.empty() ? cfg : cea::with_overrides(cfg, sets);
}

int emit(const cea::Report& r, const Common& c, bool json_to_stdout_by_default) {
  std::cout << r.table;
  if (c.json == "-" || (c.json.empty() && json_to_stdout_by_default)) {
    std::cout << r.json.dump(2) << '\n';
  } else if (!c.json.empty()) {
    std::ofstream os(c.json, std::ios::trunc);
    if (!os) throw cea::IoError("cannot write " + c.json);
    os << r.json.dump(2) << '\n';
  }
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cea-kit: train, evaluate and probe continuous expert assembly restorers"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, props_c, bench_c, ablate_c, boot_c;

  auto* gen = app.add_subcommand("generate", "build the toy compositional dataset");
  add_common(gen, gen_c);

  auto* train = app.add_subcommand("train", "train one variant and write run artifacts");
  add_common(train, train_c);

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  add_common(eval, eval_c);
  std::string checkpoint, split;
  eval->add_option("--checkpoint", checkpoint, "checkpoint.ceak from a run")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--split", split, "dataset split (default: config eval_split)");

  auto* props = app.add_subcommand("props", "run the property suites");
  add_common(props, props_c);
  std::string fault;
  std::vector<std::string> suites;
  props->add_option("--inject-fault", fault, "mutation for self-test (skip-ranknorm)");
  props->add_option("--suite", suites, "run only these suites")->take_all();
  bool list_suites = false;
  props->add_flag("--list", list_suites, "list suite names");

  auto* bench = app.add_subcommand("bench", "low-rank vs dense assembly cost and timing");
  add_common(bench, bench_c);
  std::vector<std::size_t> bn, bd, br;
  std::size_t warmup = 10, runs = 100;
  bench->add_option("--n", bn, "token counts")->take_all();
  bench->add_option("--d", bd, "feature widths (d_in = d_out)")->take_all();
  bench->add_option("--r", br, "ranks")->take_all();
  bench->add_option("--warmup", warmup, "warm-up iterations (>= 10)");
  bench->add_option("--runs", runs, "timed iterations (>= 100)");

  auto* ablate = app.add_subcommand("ablate", "train an ablation grid with matched seeds");
  add_common(ablate, ablate_c);
  cea::AblationOptions aopts;
  bool no_reuse = false;
  ablate->add_option("--table", aopts.tables, "tables to run: 4, 6, 7, 8")->take_all();
  ablate->add_option("--seeds", aopts.seeds, "seeds per variant");
  ablate->add_option("--resamples", aopts.bootstrap_resamples, "bootstrap resamples");
  ablate->add_flag("--no-reuse", no_reuse, "retrain even when a finished run matches");

  auto* boot = app.add_subcommand("bootstrap", "paired bootstrap between two metric CSVs");
  add_common(boot, boot_c);
  std::string csv_a, csv_b;
  std::size_t n_resamples = 10000;
  double ci = 0.95;
  boot->add_option("csv_a", csv_a, "metrics CSV (image_id,psnr_db,ssim)")
      ->required()
      ->check(CLI::ExistingFile);
  boot->add_option("csv_b", csv_b, "metrics CSV to subtract")->required()->check(CLI::ExistingFile);
  boot->add_option("--n", n_resamples, "resamples");
  boot->add_option("--ci", ci, "confidence level")->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      // --out names the dataset directory here; default is dataset.path.
      const fs::path dir = gen_c.out;
      gen_c.out.clear();
      const auto cfg = resolve_config(gen_c);
      return emit(cea::cmd_generate(cfg, dir), gen_c, false);
    }
    if (*train) {
      const auto cfg = resolve_config(train_c);
      return emit(cea::cmd_train(cfg, cfg.out), train_c, false);
    }
    if (*eval) {
      const auto cfg = resolve_config(eval_c, fs::path(checkpoint).parent_path() / "config.json");
      return emit(cea::cmd_eval(cfg, checkpoint, split.empty() ? cfg.eval_split : split, eval_c.out),
                  eval_c, eval_c.out.empty());
    }
    if (*props) {
      if (list_suites) {
        for (const auto& s : cea::prop_suite_names()) std::cout << s << '\n';
        return 0;
      }
      cea::PropOptions o;
      o.seed = props_c.seed.value_or(0);
      o.fault = fault;
      return emit(cea::cmd_props(o, suites), props_c, true);
    }
    if (*bench) {
      cea::BenchOptions o;
      o.warmup = warmup;
      o.runs = runs;
      o.seed = bench_c.seed.value_or(0);
      if (!bn.empty() || !bd.empty() || !br.empty()) {
        if (bn.empty()) bn = {4096};
        if (bd.empty()) bd = {256};
        if (br.empty()) br = {8};
        for (auto n : bn)
          for (auto d : bd)
            for (auto r : br) o.grid.push_back({n, d, d, r});
      }
      return emit(cea::cmd_bench(o), bench_c, true);
    }
    if (*ablate) {
      const auto cfg = resolve_config(ablate_c);
      aopts.reuse = !no_reuse;
      return emit(cea::cmd_ablate(cfg, cfg.out, aopts), ablate_c, false);
    }
    if (*boot) {
      return emit(cea::cmd_bootstrap(csv_a, csv_b, n_resamples, ci, boot_c.seed.value_or(0)), boot_c,
                  true);
    }
  } catch (const cea::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const cea::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
