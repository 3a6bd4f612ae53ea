#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "cea/objectives.hpp"
#include "cea/grad_check.hpp"
#include "cea/ops.hpp"
#include "cea/props.hpp"

using namespace cea;

TEST_CASE("loss of identical images is zero") {
  std::mt19937_64 rng(1);
  auto y = uniform_tensor({4, 4, 3}, rng, 0, 1);
  CHECK(loss_total(y, y, LossConfig{}).item() == 0.0);
}

TEST_CASE("constant shift with no frequency term") {
  std::mt19937_64 rng(2);
  auto y = uniform_tensor({4, 4, 3}, rng, 0, 1);
  LossConfig lc;
  lc.lambda_f = 0.0;
  CHECK(loss_total(add_scalar(y, 0.5), y, lc).item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("2x2 single-channel loss against a hand DFT") {
  const double p[4] = {0.9, 0.1, 0.4, 0.3}, t[4] = {0.5, 0.5, 0.2, 0.6};
  // X[u,v] for a 2x2 image [[a,b],[c,d]] is real: sums with signs (-1)^(u*i + v*j).
  auto dft = [](const double* x) {
    return std::vector<double>{x[0] + x[1] + x[2] + x[3], x[0] - x[1] + x[2] - x[3],
                               x[0] + x[1] - x[2] - x[3], x[0] - x[1] - x[2] + x[3]};
  };
  const auto fp = dft(p), ft = dft(t);
  double l1 = 0.0, lf = 0.0;
  for (int i = 0; i < 4; ++i) {
    l1 += std::abs(p[i] - t[i]) / 4.0;
    lf += std::abs(std::abs(fp[i]) - std::abs(ft[i])) / 4.0;
  }
  auto got = loss_total(Tensor::from({2, 2, 1}, {p[0], p[1], p[2], p[3]}),
                        Tensor::from({2, 2, 1}, {t[0], t[1], t[2], t[3]}), LossConfig{});
  CHECK(got.item() == doctest::Approx(l1 + 0.1 * lf).epsilon(1e-14));
}

TEST_CASE("loss gradient passes a finite-difference check") {
  std::mt19937_64 rng(3);
  auto pred = uniform_tensor({5, 4, 2}, rng, 0, 1);
  auto tgt = uniform_tensor({5, 4, 2}, rng, 0, 1);
  pred.set_requires_grad(true);
  GradCheckOptions o;
  o.tol = 1e-5;
  o.floor = 1e-6;
  auto rep = grad_check([&] { return loss_total(pred, tgt, LossConfig{}); }, {pred}, {"pred"}, o);
  CHECK(rep.passed);
}

TEST_CASE("psnr closed forms") {
  // one unit error among 100 values: MSE is exactly 0.01
  std::vector<double> z(100, 0.0), e = z;
  e[37] = 1.0;
  CHECK(psnr(Tensor::from({10, 10}, e), Tensor::from({10, 10}, z)) == 20.0);
  auto y = Tensor::full({8, 8, 3}, 0.4);
  CHECK(psnr(y, y) == std::numeric_limits<double>::infinity());
  CHECK(psnr(Tensor::full({8, 8, 3}, 0.1), Tensor::zeros({8, 8, 3})) ==
        doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(y, Tensor::zeros({8, 8, 2})), DimensionError);
}

TEST_CASE("ssim identical, inverse checkerboard and constant levels") {
  std::mt19937_64 rng(4);
  auto y = uniform_tensor({16, 16, 3}, rng, 0, 1);
  CHECK(ssim(y, y) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> cb(16 * 16), inv(16 * 16);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      cb[i * 16 + j] = (i + j) % 2;
      inv[i * 16 + j] = 1.0 - cb[i * 16 + j];
    }
  CHECK(ssim(Tensor::from({16, 16}, inv), Tensor::from({16, 16}, cb)) < 0.0);

  const double a = 0.3, b = 0.7, c1 = 0.01 * 0.01;
  const double want = (2 * a * b + c1) / (a * a + b * b + c1);
  CHECK(ssim(Tensor::full({12, 12}, a), Tensor::full({12, 12}, b)) ==
        doctest::Approx(want).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(Tensor::zeros({8, 8}), Tensor::zeros({8, 8})), DimensionError);
}

TEST_CASE("linear quantile matches a hand interpolation") {
  std::vector<double> v{4, 1, 3, 2};
  CHECK(quantile_linear(v, 0.0) == 1.0);
  CHECK(quantile_linear(v, 1.0) == 4.0);
  // h = 3 * 0.5 = 1.5 between 2 and 3
  CHECK(quantile_linear(v, 0.5) == 2.5);
  CHECK(quantile_linear(v, 0.1) == doctest::Approx(1.3));
}

TEST_CASE("bootstrap on constant differences gives a point interval") {
  auto r = paired_bootstrap(std::vector<double>(50, 1.0), 2000, 0.95, 1);
  CHECK(r.mean == 1.0);
  CHECK(r.lo == 1.0);
  CHECK(r.hi == 1.0);
  CHECK(r.p_boot == 0.0);
  CHECK(r.p_below_resolution);
  CHECK(r.p_bound() == doctest::Approx(1.0 / 2000));
  auto z = paired_bootstrap(std::vector<double>(20, 0.0), 500, 0.95, 1);
  CHECK(z.lo == 0.0);
  CHECK(z.hi == 0.0);
}

TEST_CASE("bootstrap on symmetric +-1 differences straddles zero") {
  std::vector<double> d(1000);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = i % 2 ? 1.0 : -1.0;
  auto r = paired_bootstrap(d, 10000, 0.95, 42);
  CHECK(r.lo < 0.0);
  CHECK(r.hi > 0.0);
  CHECK(std::abs(r.p_boot - 0.5) <= 0.05);
}

TEST_CASE("bootstrap on a positive shift excludes zero and is reproducible") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.74, 0.5);
  std::vector<double> d(200);
  for (auto& v : d) v = nd(rng);
  auto a = paired_bootstrap(d, 10000, 0.95, 9);
  auto b = paired_bootstrap(d, 10000, 0.95, 9);
  CHECK(a.lo > 0.0);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.p_boot == b.p_boot);
}

TEST_CASE("bootstrap interval endpoints are order statistics of resampled means") {
  std::vector<double> d{0.5, -0.1, 0.3, 0.9, 0.2, 0.0, 0.4};
  const std::size_t n = 300;
  auto r = paired_bootstrap(d, n, 0.9, 5);
  // replay the resampling independently
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pick(0, d.size() - 1);
  std::vector<double> means(n);
  for (auto& m : means) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < d.size(); ++i) s += d[pick(rng)];
    m = static_cast<double>(s / d.size());
  }
  std::sort(means.begin(), means.end());
  auto q = [&](double p) {
    const double h = (n - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, n - 1);
    return means[lo] + (h - lo) * (means[hi] - means[lo]);
  };
  CHECK(r.lo == doctest::Approx(q(0.05)).epsilon(1e-12));
  CHECK(r.hi == doctest::Approx(q(0.95)).epsilon(1e-12));
}

TEST_CASE("metric CSV round-trip keeps inf and rejects unmatched ids") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "cea_test_objectives";
  fs::create_directories(dir);
  std::vector<MetricRecord> rows{{"a", 21.5, 0.8, ""},
                                 {"b", std::numeric_limits<double>::infinity(), 1.0, ""}};
  write_metric_csv(dir / "m.csv", rows);
  auto back = read_metric_csv(dir / "m.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == "a");
  CHECK(back[0].psnr_db == 21.5);
  CHECK(back[1].identical());
  auto same = join_metrics(back, back);
  CHECK(same.psnr == std::vector<double>{0.0, 0.0});
  std::vector<MetricRecord> other{{"a", 20.0, 0.7, ""}, {"c", 19.0, 0.6, ""}};
  try {
    join_metrics(back, other);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("b") != std::string::npos);
    CHECK(msg.find("c") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("property suites for metrics") {
  CHECK(run_prop_suite("psnr_monotone").passed());
  CHECK(run_prop_suite("bootstrap_determinism").passed());
}
