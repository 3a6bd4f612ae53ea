#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

#include "cea/dataset.hpp"
#include "cea/degradation.hpp"
#include "cea/harness.hpp"
#include "cea/objectives.hpp"
#include "cea/ops.hpp"
#include "cea/props.hpp"

using namespace cea;
namespace fs = std::filesystem;

namespace {

Tensor clean(std::size_t s = 32, std::uint64_t seed = 3) { return procedural_image(s, s, seed); }

void in_unit_range(const Tensor& t) {
  for (double v : t.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

DegradationOp op(OpType t, std::map<std::string, double> p, std::uint64_t seed = 1) {
  return DegradationOp{t, std::move(p), seed};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cea_test_degradation_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("noise: identity, sample deviation and range") {
  auto y = clean();
  CHECK(max_abs_diff(apply_noise(y, 0.0, 1), y) == 0.0);

  auto gray = Tensor::full({64, 64, 3}, 0.5);
  auto x = apply_noise(gray, 25.0, 2);
  double s2 = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s2 += (x[i] - 0.5) * (x[i] - 0.5);
  const double sd = std::sqrt(s2 / static_cast<double>(x.numel()));
  CHECK(std::abs(sd - 25.0 / 255.0) <= 0.05 * 25.0 / 255.0);

  in_unit_range(apply_noise(gray, 255.0, 3));
}

TEST_CASE("haze: identity field, closed form and lower bound") {
  auto y = clean();
  CHECK(max_abs_diff(apply_haze_field(y, Tensor::full({32, 32}, 1.0), 0.8), y) == 0.0);
  auto x = apply_haze_field(Tensor::zeros({4, 4, 3}), Tensor::full({4, 4}, 0.5), 1.0);
  for (double v : x.data()) CHECK(v == 0.5);
  CHECK(max_abs_diff(apply_haze(y, 1.0, 0.9, 4), y) == 0.0);

  const double t0 = 0.35;
  auto t = haze_transmission(32, 32, t0, 5);
  double tmin = 1.0, tmax = 0.0;
  for (double v : t.data()) {
    tmin = std::min(tmin, v);
    tmax = std::max(tmax, v);
  }
  CHECK(tmin == doctest::Approx(t0).epsilon(1e-12));
  CHECK(tmax == doctest::Approx(1.0).epsilon(1e-12));
  auto hx = apply_haze(y, t0, 0.9, 5);
  double ymin = 1.0, xmin = 1.0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    ymin = std::min(ymin, y[i] * t0);
    xmin = std::min(xmin, hx[i]);
  }
  CHECK(xmin >= ymin);
}

TEST_CASE("identity parameters of the remaining operators") {
  auto y = clean();
  CHECK(max_abs_diff(apply_lowlight(y, 1.0, 1.0), y) == 0.0);
  CHECK(max_abs_diff(apply_rain(y, 0.0, 0.3, 0.8, 1), y) == 0.0);
  CHECK(max_abs_diff(apply_blur(y, 0.0), y) == 0.0);
  CHECK(max_abs_diff(apply_snow(y, 0.0, 2.0, 1), y) == 0.0);
}

TEST_CASE("low-light closed form and blur of a constant") {
  auto x = apply_lowlight(Tensor::full({4, 4, 3}, 1.0), 2.0, 0.5);
  for (double v : x.data()) CHECK(v == 0.5);
  auto c = Tensor::full({9, 7, 3}, 0.42);
  CHECK(max_abs_diff(apply_blur(c, 1.3), c) < 1e-15);
}

TEST_CASE("rain coverage is close to density times streak length") {
  const std::size_t s = 64;
  const double d = 0.005;
  const double expect = d * static_cast<double>(rain_streak_length(s, s));
  double covered = 0.0;
  const int trials = 20;
  for (int k = 0; k < trials; ++k) {
    auto m = rain_mask(s, s, d, 0.3, static_cast<std::uint64_t>(k));
    for (double v : m.data()) covered += v > 0.0 ? 1.0 : 0.0;
  }
  covered /= static_cast<double>(trials * s * s);
  CHECK(std::abs(covered - expect) <= 0.2 * expect);
}

TEST_CASE("operators keep shape and range") {
  auto y = clean(24, 9);
  for (const auto& o : {op(OpType::Noise, {{"sigma", 50}}),
                        op(OpType::Haze, {{"t0", 0.3}, {"airlight", 1.0}}),
                        op(OpType::LowLight, {{"gamma", 2.5}, {"scale", 0.3}}),
                        op(OpType::Rain, {{"density", 0.02}, {"angle", -0.4}, {"intensity", 0.9}}),
                        op(OpType::Blur, {{"sigma", 1.5}}),
                        op(OpType::Snow, {{"density", 0.01}, {"flake_size", 2}})}) {
    CAPTURE(to_string(o.type));
    auto x = apply_op(y, o);
    CHECK(x.shape() == y.shape());
    in_unit_range(x);
  }
}

TEST_CASE("compose: identity chain, sequential oracle, order sensitivity") {
  auto y = clean();
  DegradationSpec id{{op(OpType::LowLight, {{"gamma", 1}, {"scale", 1}}),
                      op(OpType::Blur, {{"sigma", 0}})},
                     0};
  CHECK(max_abs_diff(compose(id, y), y) == 0.0);

  auto l = op(OpType::LowLight, {{"gamma", 2.0}, {"scale", 0.5}});
  auto h = op(OpType::Haze, {{"t0", 0.4}, {"airlight", 0.9}}, 7);
  auto lh = compose(DegradationSpec{{l, h}, 0}, y);
  auto manual = apply_haze(apply_lowlight(y, 2.0, 0.5), 0.4, 0.9, 7);
  CHECK(max_abs_diff(lh, manual) == 0.0);
  CHECK(max_abs_diff(compose(DegradationSpec{{h, l}, 0}, y), lh) > 1e-3);

  CHECK_THROWS_AS(compose(DegradationSpec{}, y), ConfigError);
  CHECK_THROWS_AS(compose(DegradationSpec{{l, l, l, l}, 0}, y), ConfigError);
  CHECK_THROWS_AS(compose(DegradationSpec{{op(OpType::Haze, {{"t0", 0}, {"airlight", 1}})}, 0}, y),
                  ConfigError);
}

TEST_CASE("category tags name the chain") {
  CHECK(sample_spec("L+H+R", 3).category() == "L+H+R");
  CHECK(sample_spec("S", 3).chain.size() == 1);
  CHECK_THROWS_AS(sample_spec("Q", 3), ConfigError);
}

TEST_CASE("empty dataset writes a valid manifest") {
  auto dir = scratch("empty");
  DatasetConfig cfg;
  cfg.n_train = 0;
  cfg.n_test = 0;
  generate_dataset(cfg, 1, dir);
  std::ifstream is(dir / "manifest.json");
  auto j = nlohmann::json::parse(is);
  CHECK(j.at("items").empty());
  CHECK(load_dataset(dir).items.empty());
  fs::remove_all(dir);
}

TEST_CASE("same seed gives byte-identical dataset files") {
  auto a = scratch("a"), b = scratch("b"), c = scratch("c");
  DatasetConfig cfg;
  cfg.n_train = 11;
  cfg.n_test = 11;
  cfg.height = cfg.width = 16;
  generate_dataset(cfg, 5, a);
  cfg.threads = 3;
  generate_dataset(cfg, 5, b);
  generate_dataset(cfg, 6, c);
  CHECK(sha256_tree(a) == sha256_tree(b));
  CHECK(sha256_tree(a) != sha256_tree(c));
  auto back = load_dataset(a);
  REQUIRE(back.items.size() == 22);
  CHECK(max_abs_diff(back.items[3].degraded,
                     compose(back.items[3].spec, back.items[3].clean)) == 0.0);
  for (auto p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("category mix follows the 4 single / 5 double / 2 triple structure") {
  const auto& cats = cdd11_categories();
  REQUIRE(cats.size() == 11);
  std::map<std::size_t, int> by_len;
  for (const auto& c : cats) ++by_len[std::count(c.begin(), c.end(), '+') + 1];
  CHECK(by_len[1] == 4);
  CHECK(by_len[2] == 5);
  CHECK(by_len[3] == 2);

  DatasetConfig cfg;
  cfg.n_train = 22;
  cfg.n_test = 33;
  cfg.height = cfg.width = 16;
  auto ds = build_dataset(cfg, 2);
  std::map<std::string, int> train, test;
  for (const auto& it : ds.items) ++(it.split == "train" ? train : test)[it.category];
  for (const auto& c : cats) {
    CHECK(train[c] == 2);
    CHECK(test[c] == 3);
  }
  for (const auto& it : ds.items) {
    CHECK(it.spec.category() == it.category);
    CHECK(std::isfinite(psnr(it.degraded, it.clean)));
  }
}

TEST_CASE("property suites for degradations") {
  CHECK(run_prop_suite("degradation_identity_range").passed());
  CHECK(run_prop_suite("noise_psnr_monotone").passed());
}
