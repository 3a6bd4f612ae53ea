#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "cea/backbone.hpp"
#include "cea/flops.hpp"
#include "cea/grad_check.hpp"
#include "cea/objectives.hpp"
#include "cea/ops.hpp"
#include "cea/props.hpp"

using namespace cea;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

void set_values(Tensor t, const std::vector<double>& v) {
  auto d = t.mutable_data();
  REQUIRE(d.size() == v.size());
  std::copy(v.begin(), v.end(), d.begin());
}

// Layer norm of one row, unit gain, biased variance.
std::vector<double> ln_row(double a, double b) {
  const double mu = 0.5 * (a + b);
  const double var = 0.5 * ((a - mu) * (a - mu) + (b - mu) * (b - mu));
  const double s = 1.0 / std::sqrt(var + 1e-5);
  return {(a - mu) * s, (b - mu) * s};
}

}  // namespace

TEST_CASE("decoder CEA placement counts are ceil(d/2)") {
  BackboneConfig cfg;
  cfg.decoder_blocks = {2, 4, 4};
  auto slots = cea_placement(cfg, 3);
  std::vector<std::size_t> per(3, 0);
  for (const auto& s : slots) {
    ++per[s.stage];
    CHECK(s.block % 2 == 0);
  }
  CHECK(per == std::vector<std::size_t>{1, 2, 2});
  cfg.decoder_blocks = {3, 1, 5};
  per.assign(3, 0);
  for (const auto& s : cea_placement(cfg, 3)) ++per[s.stage];
  CHECK(per == std::vector<std::size_t>{2, 1, 3});
}

TEST_CASE("block without context and with zero factors") {
  ParamStore store;
  auto w = init_block(store, "b", 8, 2, 2, 7);
  std::mt19937_64 rng(7);
  auto x = uniform_tensor({12, 8}, rng);
  auto plain = transformer_block_forward(x, w);
  CHECK(bitwise_equal(plain, transformer_block_forward(x, w)));

  CeaConfig cfg;
  cfg.rank = 2;
  cfg.targets = {Target::Q, Target::K, Target::V, Target::FfnIn};
  CeaContext ctx;
  ctx.cfg = &cfg;
  for (auto t : cfg.targets) {
    const std::size_t din = 8, dout = t == Target::FfnIn ? 16 : 8;
    FactorPair fp;
    fp.target = t;
    fp.a = Tensor::zeros({din, 2});
    fp.b = Tensor::zeros({2, dout});
    fp.normalized = true;
    ctx.factors[t] = fp;
  }
  CHECK(max_abs_diff(plain, transformer_block_forward(x, w, &ctx)) <= 1e-12);
}

TEST_CASE("rank-1 Q+K injection shifts attention logits as computed by hand") {
  ParamStore store;
  auto w = init_block(store, "b", 2, 1, 2, 1);
  set_values(w.norm1, {1, 1});
  set_values(w.wq, {1, 0, 0, 1});
  set_values(w.wk, {1, 0, 0, 1});
  set_values(w.wv, {1, 0, 0, 1});
  set_values(w.wo, {1, 0, 0, 1});
  set_values(w.w2, std::vector<double>(w.w2.numel(), 0.0));

  const std::vector<double> xv{0.3, -0.2, 0.4, 1.0};
  auto x = Tensor::from({2, 2}, xv);
  CeaConfig cfg;
  cfg.rank = 1;
  cfg.alpha = 1.0;
  cfg.targets = {Target::Q, Target::K};
  CeaContext ctx;
  ctx.cfg = &cfg;
  FactorPair fq{Tensor::from({2, 1}, {1, 0}), Tensor::from({1, 2}, {0, 1}), Target::Q, true};
  FactorPair fk{Tensor::from({2, 1}, {0, 1}), Tensor::from({1, 2}, {1, 0}), Target::K, true};
  ctx.factors[Target::Q] = fq;
  ctx.factors[Target::K] = fk;
  auto y = transformer_block_forward(x, w, &ctx);

  // h = LN(x); q = h + (h . a_q) b_q; k = h + (h . a_k) b_k; v = h.
  std::vector<std::vector<double>> h{ln_row(xv[0], xv[1]), ln_row(xv[2], xv[3])}, q = h, k = h;
  for (int n = 0; n < 2; ++n) {
    q[n][1] += h[n][0];
    k[n][0] += h[n][1];
  }
  for (int n = 0; n < 2; ++n) {
    double logit[2], z = 0.0;
    for (int m = 0; m < 2; ++m) logit[m] = (q[n][0] * k[m][0] + q[n][1] * k[m][1]) / std::sqrt(2.0);
    const double mx = std::max(logit[0], logit[1]);
    double p[2];
    for (int m = 0; m < 2; ++m) z += (p[m] = std::exp(logit[m] - mx));
    for (int j = 0; j < 2; ++j) {
      const double att = (p[0] * h[0][j] + p[1] * h[1][j]) / z;
      CHECK(y[n * 2 + j] == doctest::Approx(xv[n * 2 + j] + att).epsilon(1e-12));
    }
  }
  // the injection must matter for this instance
  CHECK(max_abs_diff(y, transformer_block_forward(x, w)) > 1e-3);
}

TEST_CASE("restorer starts at identity and preserves shape") {
  BackboneConfig cfg;
  cfg.embed_dim = 8;
  cfg.cea.adapter_heads = 2;
  for (std::size_t s : {16u, 32u, 64u}) {
    CAPTURE(s);
    auto st = make_restorer(cfg, s, s, 3);
    CHECK(st.levels == (s < 32 ? 2u : 3u));
    std::mt19937_64 rng(s);
    auto x = uniform_tensor({s, s, 3}, rng, 0, 1);
    auto y = restore(x, st);
    CHECK(y.shape() == x.shape());
    CHECK(bitwise_equal(x, y));
  }
}

TEST_CASE("cost model arithmetic") {
  auto c = assembly_cost(256, 64, 64, 8);
  CHECK(c.lowrank == 262144);
  CHECK(c.dense == 1048576);
  CHECK(c.ratio == 4.0);
  CHECK(assembly_cost(4096, 64, 64, 8).ratio == 4.0);
  // break-even rank r = d_in d_out / (d_in + d_out)
  CHECK(assembly_cost(100, 16, 16, 8).ratio == 1.0);
  CHECK(assembly_cost(100, 12, 24, 8).ratio == 1.0);
  CHECK(assembly_cost(4096, 64, 64, 64).ratio <= 1.0);
}

TEST_CASE("analytic MACs equal the instrumented count for the full config at 64x64") {
  BackboneConfig cfg;
  auto st = make_restorer(cfg, 64, 64, 0);
  std::mt19937_64 rng(1);
  auto x = uniform_tensor({64, 64, 3}, rng, 0, 1);
  NoGradGuard ng;
  MacScope scope;
  restore(x, st);
  const auto counted = scope.count();
  const auto fr = flop_report(cfg, 64, 64);
  CHECK(fr.levels == 3);
  CHECK(counted == fr.total);
}

TEST_CASE("end-to-end gradient check on a 16x16 input, 1% of parameters") {
  BackboneConfig cfg;
  cfg.embed_dim = 8;
  cfg.cea.adapter_heads = 2;
  auto st = make_restorer(cfg, 16, 16, 5);
  std::mt19937_64 rng(5);
  // a zero head would make every upstream gradient vanish
  {
    auto h = st.head.mutable_data();
    for (auto& v : h) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  }
  auto x = uniform_tensor({16, 16, 3}, rng, 0, 1);
  auto y = uniform_tensor({16, 16, 3}, rng, 0, 1);
  LossConfig lc;
  std::vector<Tensor> params;
  std::vector<std::string> names;
  for (const auto& [n, t] : st.params.all()) {
    names.push_back(n);
    params.push_back(t);
  }
  GradCheckOptions o;
  o.tol = 1e-4;
  o.floor = 1e-4;
  o.sample_fraction = 0.01;
  o.seed = 5;
  auto rep = grad_check([&] { return loss_total(restore(x, st), y, lc); }, params, names, o);
  CHECK(rep.max_rel_error < 1e-4);
  CHECK(rep.passed);
}

TEST_CASE("property suites for the backbone") {
  for (const char* s : {"cea_placement_counts", "zeroed_factors_bitwise", "flop_counter_crosscheck",
                        "constant_image_consistency", "checkpoint_roundtrip"}) {
    CAPTURE(s);
    CHECK(run_prop_suite(s).passed());
  }
}
