#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>

#include "cea/harness.hpp"
#include "cea/ops.hpp"
#include "cea/serialize.hpp"

using namespace cea;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cea_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// A tiny but complete setup: 16x16 images, one sample per category and split.
RunConfig tiny_config(const fs::path& root) {
  RunConfig c;
  c.backbone.embed_dim = 8;
  c.cea.adapter_heads = 2;
  c.dataset.n_train = 11;
  c.dataset.n_test = 11;
  c.dataset.height = c.dataset.width = 16;
  c.dataset_path = (root / "data").string();
  c.out = (root / "run").string();
  c.optim.steps = 3;
  c.optim.batch = 4;
  return c;
}

bool same_bytes(const fs::path& a, const fs::path& b) { return sha256_file(a) == sha256_file(b); }

std::vector<MetricRecord> synthetic(std::size_t n, double shift, std::uint64_t seed, double sd) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(shift, sd);
  std::vector<MetricRecord> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"img" + std::to_string(i), 25.0 + nd(rng), 0.8, ""});
  return out;
}

}  // namespace

TEST_CASE("config JSON round-trip, unknown keys and overrides") {
  RunConfig c;
  c.cea.rank = 16;
  c.cea.targets = {Target::V, Target::FfnIn};
  c.optim.epochs = 3;
  auto back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_diff(c, back).empty());

  auto j = to_json(c);
  j["cea"]["rnak"] = 3;
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  CHECK_THROWS_AS(with_overrides(c, {"optim.nope=1"}), ConfigError);
  CHECK_THROWS_AS(with_overrides(c, {"cea.rank"}), ConfigError);
  CHECK_THROWS_AS(with_overrides(c, {"cea.routing=sideways"}), ConfigError);

  auto o = with_overrides(c, {"cea.rank=4", "cea.routing=topk_softmax", "out=elsewhere",
                              "cea.alpha=0.5", "optim.epochs=null"});
  CHECK(o.cea.rank == 4);
  CHECK(o.cea.routing == RoutingRule::TopKSoftmax);
  CHECK(o.out == "elsewhere");
  CHECK(o.cea.alpha == 0.5);
  CHECK_FALSE(o.optim.epochs.has_value());
  auto diff = config_diff(c, o);
  CHECK(diff == std::vector<std::string>{"cea.alpha", "cea.rank", "cea.routing", "optim.epochs", "out"});
}

TEST_CASE("train without a dataset is a config error") {
  auto root = scratch("nodata");
  CHECK_THROWS_AS(cmd_train(tiny_config(root), {}), ConfigError);
  fs::remove_all(root);
}

TEST_CASE("zero epochs keep the initialization and the identity restorer") {
  auto root = scratch("epochs0");
  auto cfg = tiny_config(root);
  cfg.optim.epochs = 0;
  cmd_generate(cfg, {});
  auto r = cmd_train(cfg, {});
  CHECK(r.json.at("steps") == 0);
  auto ckpt = load_checkpoint(root / "run" / "checkpoint.ceak");
  auto init = make_restorer(cfg.model(), 16, 16, cfg.seed);
  REQUIRE(ckpt.size() == init.params.all().size());
  for (const auto& [name, t] : init.params.all()) {
    const auto& c = ckpt.at(name);
    REQUIRE(c.numel() == t.numel());
    CHECK(std::memcmp(c.data().data(), t.data().data(), t.numel() * sizeof(double)) == 0);
  }
  // eval of the untouched model equals scoring the degraded inputs
  auto data = load_dataset(cfg.dataset_path);
  auto ev = evaluate(load_restorer(root / "run" / "checkpoint.ceak", cfg), data, "test");
  auto idn = evaluate_identity(data, "test");
  REQUIRE(ev.records.size() == idn.records.size());
  for (std::size_t i = 0; i < ev.records.size(); ++i)
    CHECK(ev.records[i].psnr_db == idn.records[i].psnr_db);
  for (const auto& it : data.split("test")) {
    auto rec = std::find_if(idn.records.begin(), idn.records.end(),
                            [&](const auto& m) { return m.image_id == it->id; });
    REQUIRE(rec != idn.records.end());
    CHECK(rec->psnr_db == psnr(it->degraded, it->clean));
  }
  fs::remove_all(root);
}

TEST_CASE("one epoch on eight images lowers the training loss") {
  auto root = scratch("epoch1");
  auto cfg = tiny_config(root);
  cfg.dataset.n_train = 8;
  cfg.dataset.categories = {"H", "R", "S", "L+H"};
  cfg.optim.epochs = 1;
  cfg.optim.batch = 2;
  cfg.optim.lr = 2e-3;
  auto data = build_dataset(cfg.dataset, 3);
  auto res = train_model(cfg, data);
  CHECK(res.log.size() == 4);
  CHECK(res.final_loss < res.initial_loss);
  fs::remove_all(root);
}

TEST_CASE("same config and seed give bit-identical checkpoints") {
  auto root = scratch("determinism");
  auto cfg = tiny_config(root);
  cmd_generate(cfg, {});
  cmd_train(cfg, root / "a");
  cmd_train(cfg, root / "b");
  for (const char* f : {"checkpoint.ceak", "loss_log.csv", "metrics_test.csv", "eval_test.json",
                        "config.json", "flops.json"})
    CHECK_MESSAGE(same_bytes(root / "a" / f, root / "b" / f), f);
  auto other = cfg;
  other.seed = 1;
  cmd_train(other, root / "c");
  CHECK_FALSE(same_bytes(root / "a" / "checkpoint.ceak", root / "c" / "checkpoint.ceak"));
  fs::remove_all(root);
}

TEST_CASE("eval CSV rows and category-wise group means") {
  auto root = scratch("eval");
  auto cfg = tiny_config(root);
  cfg.dataset.n_test = 23;
  cmd_generate(cfg, {});
  cmd_train(cfg, {});
  auto r = cmd_eval(cfg, root / "run" / "checkpoint.ceak", "test", root / "ev");
  auto rows = read_metric_csv(root / "ev" / "metrics_test.csv");
  CHECK(rows.size() == 23);

  // brute-force: group value = mean over that group's category means
  auto data = load_dataset(cfg.dataset_path);
  std::map<std::string, std::string> cat;
  for (const auto& it : data.items) cat[it.id] = it.category;
  std::map<std::string, std::pair<double, int>> per_cat;
  for (const auto& m : rows) {
    per_cat[cat[m.image_id]].first += m.psnr_db;
    per_cat[cat[m.image_id]].second += 1;
  }
  std::map<std::string, std::pair<double, int>> per_group;
  for (const auto& [c, v] : per_cat) {
    const auto n = std::count(c.begin(), c.end(), '+');
    const char* g = n == 0 ? "Single" : n == 1 ? "Double" : "Triple";
    for (const char* key : {g, "Avg"}) {
      per_group[key].first += v.first / v.second;
      per_group[key].second += 1;
    }
  }
  const auto& groups = r.json.at("eval").at("groups");
  for (const auto& [g, v] : per_group)
    CHECK(groups.at(g).at("psnr_db").get<double>() == doctest::Approx(v.first / v.second).epsilon(1e-12));
  // image mean differs from the category-wise mean when group sizes are unequal
  double img_mean = 0.0;
  for (const auto& m : rows) img_mean += m.psnr_db / rows.size();
  CHECK(groups.at("Avg").at("psnr_db").get<double>() != img_mean);

  auto bad = with_overrides(cfg, {"cea.rank=4"});
  CHECK_THROWS_AS(cmd_eval(bad, root / "run" / "checkpoint.ceak", "test", {}), DimensionError);
  fs::remove_all(root);
}

TEST_CASE("identical images are excluded from PSNR means") {
  std::vector<MetricRecord> recs{{"a", 20.0, 0.5, "H"},
                                 {"b", std::numeric_limits<double>::infinity(), 1.0, "H"},
                                 {"c", 30.0, 0.7, "L"}};
  auto ev = aggregate(recs);
  CHECK(ev.categories.at("H").psnr == 20.0);
  CHECK(ev.groups.at("Single").psnr == 25.0);
}

TEST_CASE("a non-finite loss aborts with the offending tensor named") {
  auto root = scratch("nan");
  auto cfg = tiny_config(root);
  auto data = build_dataset(cfg.dataset, 1);
  for (auto& it : data.items)
    if (it.split == "train") it.clean.mutable_data()[5] = std::nan("");
  try {
    train_model(cfg, data);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("first non-finite tensor") != std::string::npos);
  }
  fs::remove_all(root);
}

TEST_CASE("props command exit codes") {
  PropOptions o;
  CHECK(cmd_props(o, {"tokenwise_matrix_equivalence"}).exit_code == 0);
  o.fault = "skip-ranknorm";
  auto r = cmd_props(o, {"ranknorm_scale_invariance"});
  CHECK(r.exit_code == 1);
  CHECK(r.json.at("passed") == false);
  CHECK_FALSE(r.json.at("suites").at(0).at("counterexamples").empty());
  o.fault = "unknown";
  CHECK_THROWS_AS(cmd_props(o, {}), ConfigError);
}

TEST_CASE("bench reports the analytic ratio and the break-even case") {
  BenchOptions o;
  o.grid = {{4096, 64, 64, 8}, {256, 32, 32, 32}};
  auto r = cmd_bench(o);
  const auto& rows = r.json.at("rows");
  CHECK(rows.at(0).at("mac_ratio").get<double>() == 4.0);
  CHECK(rows.at(1).at("mac_ratio").get<double>() <= 1.0);
  CHECK(rows.at(0).at("max_abs_diff").get<double>() < 1e-10);
  CHECK(r.json.at("runs") == 100);
  o.runs = 50;
  CHECK_THROWS_AS(cmd_bench(o), ConfigError);
}

TEST_CASE("ablation variants change only their axis") {
  CHECK(ablation_variants("4").size() == 4);
  CHECK(ablation_variants("6").size() == 2);
  CHECK(ablation_variants("7").size() == 3);
  CHECK(ablation_variants("8").size() == 7);
  CHECK_THROWS_AS(ablation_variants("5"), ConfigError);
  RunConfig base;
  for (const char* t : {"4", "6", "7", "8"}) {
    int defaults = 0;
    for (const auto& v : ablation_variants(t)) {
      defaults += v.is_default;
      for (const auto& k : config_diff(base, with_overrides(base, v.overrides)))
        CHECK_MESSAGE(std::find(v.axis.begin(), v.axis.end(), k) != v.axis.end(), t, " ", k);
    }
    CHECK(defaults == 1);
  }
}

TEST_CASE("small ablation grid: matched seeds, shared hashes, table layout") {
  auto root = scratch("ablate");
  auto cfg = tiny_config(root);
  cfg.optim.steps = 2;
  cmd_generate(cfg, {});
  AblationOptions o;
  o.tables = {"4"};
  o.seeds = 2;
  o.bootstrap_resamples = 200;
  auto res = run_ablation(cfg, root / "abl", o);
  CHECK(res.variants.size() == 4);
  std::size_t runs = 0;
  for (const auto& v : res.variants) {
    runs += v.per_seed.size();
    CHECK(v.init_hashes.size() == 2);
    CHECK(v.init_hashes[0] != v.init_hashes[1]);
    CHECK(v.config_diff_violations.empty());
  }
  CHECK(runs == 4 * 2);
  CHECK(res.hashes_consistent);
  CHECK(res.diffs_clean);
  CHECK(res.bootstrap_vs_default.size() == 3);
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(root / "abl" / "runs")) dirs += e.is_directory();
  CHECK(dirs == 8);

  auto rep = ablation_report(res);
  CHECK(rep.exit_code == 0);
  for (const char* col : {"Single", "Double", "Triple", "Avg"}) {
    CHECK(rep.table.find(col) != std::string::npos);
    CHECK(rep.json.at("tables").at("4").at(0).at("psnr").contains(col));
  }
  // a rerun reuses the finished runs and reproduces the numbers
  auto again = run_ablation(cfg, root / "abl", o);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(again.variants[i].median_psnr.at("Avg") == res.variants[i].median_psnr.at("Avg"));
  fs::remove_all(root);
}

TEST_CASE("bootstrap command: identical files, constant shift, seeded replication") {
  auto root = scratch("bootstrap");
  auto a = synthetic(500, 0.3, 1, 1.0);
  write_metric_csv(root / "a.csv", a);
  auto same = cmd_bootstrap(root / "a.csv", root / "a.csv", 1000, 0.95, 0);
  CHECK(same.json.at("psnr").at("mean") == 0.0);
  CHECK(same.json.at("psnr").at("ci_lo") == 0.0);
  CHECK(same.json.at("psnr").at("ci_hi") == 0.0);

  auto b = a;
  for (auto& m : b) m.psnr_db -= 1.0;
  write_metric_csv(root / "b.csv", b);
  auto one = cmd_bootstrap(root / "a.csv", root / "b.csv", 1000, 0.95, 0);
  CHECK(one.json.at("psnr").at("ci_lo").get<double>() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(one.json.at("psnr").at("ci_hi").get<double>() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(one.json.at("psnr").at("p_boot") == 0.0);
  CHECK(one.json.at("psnr").at("p_below_resolution") == true);

  auto base = synthetic(500, 0.0, 2, 0.0);
  write_metric_csv(root / "base.csv", base);
  auto r1 = cmd_bootstrap(root / "a.csv", root / "base.csv", 2000, 0.95, 11);
  auto r2 = cmd_bootstrap(root / "a.csv", root / "base.csv", 2000, 0.95, 11);
  CHECK(r1.json == r2.json);
  CHECK(r1.table == r2.table);

  auto c = a;
  c.pop_back();
  write_metric_csv(root / "c.csv", c);
  CHECK_THROWS_AS(cmd_bootstrap(root / "a.csv", root / "c.csv", 100, 0.95, 0), ConfigError);
  fs::remove_all(root);
}
