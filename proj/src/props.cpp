#include "cea/props.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "cea/backbone.hpp"
#include "cea/degradation.hpp"
#include "cea/flops.hpp"
#include "cea/grad_check.hpp"
#include "cea/hyper_adapter.hpp"
#include "cea/objectives.hpp"
#include "cea/ops.hpp"
#include "cea/params.hpp"
#include "cea/serialize.hpp"

namespace cea {

using nlohmann::json;

Tensor uniform_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

FactorPair normalize_for_props(const FactorPair& fp, double epsilon, const std::string& fault) {
  if (fault == "skip-ranknorm") {
    FactorPair out = fp;
    out.normalized = true;
    return out;
  }
  return rank_norm(fp, epsilon);
}

namespace {

constexpr std::size_t kMaxDumps = 5;

struct Ctx {
  PropResult res;
  const PropOptions& opts;

  std::mt19937_64 rng(std::uint64_t salt) const { return std::mt19937_64(mix_seed(opts.seed ^ salt)); }

  void check(bool ok, double metric, const std::function<std::string()>& describe) {
    ++res.cases;
    if (std::isfinite(metric)) res.worst = std::max(res.worst, metric);
    if (ok) return;
    ++res.failures;
    if (res.counterexamples.size() < kMaxDumps) res.counterexamples.push_back(describe());
  }
};

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double signed_scale(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 10.0);
  return (rng() & 1U) ? mag(rng) : -mag(rng);
}

FactorPair random_pair(std::mt19937_64& rng, std::size_t d_in, std::size_t r, std::size_t d_out) {
  FactorPair fp;
  fp.a = uniform_tensor({d_in, r}, rng);
  fp.b = uniform_tensor({r, d_out}, rng);
  return fp;
}

Tensor scale_columns(const Tensor& a, const std::vector<double>& c) {
  return mul_rows(a, Tensor::from({c.size()}, c));
}

Tensor scale_rows(const Tensor& b, const std::vector<double>& c) {
  return mul_cols(b, Tensor::from({c.size()}, c));
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

// ---------------------------------------------------------------- tensor engine

void matmul_associativity(Ctx& cx) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto rng = cx.rng(0x100 + s);
    Tensor a = uniform_tensor({8, 4}, rng), b = uniform_tensor({4, 16}, rng),
           c = uniform_tensor({16, 5}, rng);
    const double d = max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c)));
    cx.check(d < 1e-10, d, [&] { return "seed " + std::to_string(s) + ": |(AB)C-A(BC)| = " + fmt(d); });
  }
}

void primitive_grad_check(Ctx& cx) {
  using Inputs = std::vector<Tensor>;
  using G = std::mt19937_64;
  struct Prim {
    std::string name;
    std::function<Inputs(G&)> inputs;
    std::function<Tensor(const Inputs&)> op;
  };
  const auto u = [](Shape s, double lo = -1.0, double hi = 1.0) {
    return [s, lo, hi](G& g) { return uniform_tensor(s, g, lo, hi); };
  };
  const std::vector<Prim> prims = {
      {"add", [&](G& g) { return Inputs{u({3, 4})(g), u({3, 4})(g)}; }, [](const Inputs& p) { return add(p[0], p[1]); }},
      {"sub", [&](G& g) { return Inputs{u({3, 4})(g), u({3, 4})(g)}; }, [](const Inputs& p) { return sub(p[0], p[1]); }},
      {"mul", [&](G& g) { return Inputs{u({3, 4})(g), u({3, 4})(g)}; }, [](const Inputs& p) { return mul(p[0], p[1]); }},
      {"matmul", [&](G& g) { return Inputs{u({3, 5})(g), u({5, 2})(g)}; }, [](const Inputs& p) { return matmul(p[0], p[1]); }},
      {"matmul_tt", [&](G& g) { return Inputs{u({5, 3})(g), u({2, 5})(g)}; }, [](const Inputs& p) { return matmul(p[0], p[1], true, true); }},
      {"softmax", [&](G& g) { return Inputs{u({4, 6}, -2, 2)(g)}; }, [](const Inputs& p) { return softmax(p[0], 1); }},
      {"layer_norm", [&](G& g) { return Inputs{u({4, 6})(g), u({6}, 0.5, 1.5)(g)}; }, [](const Inputs& p) { return layer_norm(p[0], p[1]); }},
      {"gelu", [&](G& g) { return Inputs{u({4, 8}, -3, 3)(g)}; }, [](const Inputs& p) { return gelu(p[0]); }},
      {"l2_norm", [&](G& g) { return Inputs{u({5, 4})(g)}; }, [](const Inputs& p) { return l2_norm(p[0], 0); }},
      {"reciprocal", [&](G& g) { return Inputs{u({10}, 0.5, 2.0)(g)}; }, [](const Inputs& p) { return reciprocal(p[0]); }},
      {"abs",
       [&](G& g) {
         Tensor t = u({12}, 0.1, 1.0)(g);
         auto d = t.mutable_data();
         for (std::size_t i = 0; i < d.size(); i += 2) d[i] = -d[i];
         return Inputs{t};
       },
       [](const Inputs& p) { return abs(p[0]); }},
      {"scale_add_scalar", [&](G& g) { return Inputs{u({6})(g)}; }, [](const Inputs& p) { return add_scalar(scale(p[0], -1.7), 0.3); }},
      {"mul_rows", [&](G& g) { return Inputs{u({3, 4})(g), u({4})(g)}; }, [](const Inputs& p) { return mul_rows(p[0], p[1]); }},
      {"mul_cols", [&](G& g) { return Inputs{u({3, 4})(g), u({3})(g)}; }, [](const Inputs& p) { return mul_cols(p[0], p[1]); }},
      {"reshape_transpose", [&](G& g) { return Inputs{u({2, 6})(g)}; }, [](const Inputs& p) { return transpose(reshape(p[0], {3, 4})); }},
      {"slice_concat", [&](G& g) { return Inputs{u({4, 5})(g), u({4, 2})(g)}; }, [](const Inputs& p) { return concat({slice(p[0], 1, 1, 4), p[1]}, 1); }},
      {"sum_mean_axis", [&](G& g) { return Inputs{u({3, 4, 2})(g)}; }, [](const Inputs& p) { return add(sum_axis(p[0], 1), mean_axis(p[0], 1)); }},
      {"pool_mean", [&](G& g) { return Inputs{u({7, 3})(g)}; }, [](const Inputs& p) { return pool_mean(p[0]); }},
      {"depthwise_conv2d", [&](G& g) { return Inputs{u({5, 4, 2})(g), u({3, 3, 2})(g)}; }, [](const Inputs& p) { return depthwise_conv2d(p[0], p[1], 2, 1); }},
      {"pointwise_conv2d", [&](G& g) { return Inputs{u({4, 4, 3})(g), u({3, 2})(g)}; }, [](const Inputs& p) { return pointwise_conv2d(p[0], p[1], 2); }},
      {"upsample_nearest", [&](G& g) { return Inputs{u({2, 3, 2})(g)}; }, [](const Inputs& p) { return upsample_nearest(p[0], 2); }},
      {"flip", [&](G& g) { return Inputs{u({3, 4, 2})(g)}; }, [](const Inputs& p) { return flip(p[0], true, true); }},
      {"fft2_magnitude", [&](G& g) { return Inputs{u({4, 4, 2})(g)}; }, [](const Inputs& p) { return fft2_magnitude(p[0]); }},
  };
  GradCheckOptions o;
  o.tol = 1e-6;
  o.floor = 1e-4;
  for (const auto& prim : prims) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      auto rng = cx.rng(0x200 + s * 131 + std::hash<std::string>{}(prim.name));
      Inputs params = prim.inputs(rng);
      std::vector<std::string> names;
      for (std::size_t i = 0; i < params.size(); ++i) {
        params[i].set_requires_grad(true);
        names.push_back(prim.name + ".in" + std::to_string(i));
      }
      Tensor weights;
      {
        NoGradGuard ng;
        weights = uniform_tensor(prim.op(params).shape(), rng);
      }
      const auto objective = [&] { return sum(mul(prim.op(params), weights)); };
      const auto rep = grad_check(objective, params, names, o);
      cx.check(rep.passed, rep.max_rel_error, [&] {
        std::string worst;
        for (const auto& pc : rep.params)
          if (pc.max_rel_error > o.tol)
            worst += pc.name + "[" + std::to_string(pc.worst_index) + "] analytic " +
                     fmt(pc.analytic_at_worst) + " numeric " + fmt(pc.numeric_at_worst) + "; ";
        return prim.name + " seed " + std::to_string(s) + ": " + worst;
      });
    }
  }
}

// Small CEA-equipped block used by several suites.
struct BlockFixture {
  ParamStore store;
  BlockWeights block;
  CeaModule module;
  CeaConfig cfg;
  Tensor features;  // [H x W x C]

  BlockFixture(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t c,
               FactorSource source = FactorSource::Dynamic,
               Generator gen = Generator::QueryProbe) {
    cfg.rank = 4;
    cfg.source = source;
    cfg.generator = gen;
    cfg.adapter_heads = 2;
    block = init_block(store, "blk", c, 2, 2, seed);
    module.source = source;
    module.generator = gen;
    const auto dims = block_target_dims(c, 2);
    if (source == FactorSource::Static) module.fixed = init_static(store, "blk.cea", cfg, dims, seed);
    else if (gen == Generator::GapMlp) module.gap = init_gap_mlp(store, "blk.cea", c, cfg, dims, seed);
    else module.adapter = init_adapter(store, "blk.cea", c, cfg, dims, seed);
    std::mt19937_64 rng(mix_seed(seed));
    features = uniform_tensor({h, w, c}, rng);
  }

  Tensor forward(const Tensor& feats) const {
    const auto h = feats.dim(0), w = feats.dim(1), c = feats.dim(2);
    CeaContext ctx;
    ctx.cfg = &cfg;
    ctx.factors = generate_factors(feats, module, cfg);
    return transformer_block_forward(reshape(feats, {h * w, c}), block, &ctx);
  }
};

void backward_determinism(Ctx& cx) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    std::vector<std::vector<double>> grads[2];
    for (int run = 0; run < 2; ++run) {
      BlockFixture fx(cx.opts.seed + s, 4, 4, 8);
      backward(mean(abs(fx.forward(fx.features))));
      for (const auto& [n, t] : fx.store.all()) grads[run].push_back(t.grad());
    }
    const bool same = grads[0] == grads[1];
    cx.check(same, 0.0, [&] { return "seed " + std::to_string(s) + ": gradients differ between runs"; });
  }
}

// ---------------------------------------------------------------- assembly

void tokenwise_matrix_equivalence(Ctx& cx) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto rng = cx.rng(0x300 + s);
    const auto n = draw(rng, 1, 64), din = draw(rng, 1, 32), dout = draw(rng, 1, 32),
               r = draw(rng, 1, 16);
    CeaConfig cfg;
    cfg.rank = r;
    Tensor x = uniform_tensor({n, din}, rng);
    const auto fp = rank_norm(random_pair(rng, din, r, dout), cfg.epsilon);
    const double d =
        max_abs_diff(assemble_residual_matrix(x, fp, cfg), assemble_residual_tokenwise(x, fp, cfg));
    cx.check(d < 1e-10, d, [&] {
      return "seed " + std::to_string(s) + " N=" + std::to_string(n) + " d_in=" +
             std::to_string(din) + " d_out=" + std::to_string(dout) + " r=" + std::to_string(r) +
             ": diff " + fmt(d);
    });
  }
}

void dense_linearity(Ctx& cx) {
  bool topk_counterexample = false;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto rng = cx.rng(0x400 + s);
    CeaConfig cfg;
    cfg.rank = 6;
    const auto fp = rank_norm(random_pair(rng, 10, 6, 7), cfg.epsilon);
    Tensor x1 = uniform_tensor({9, 10}, rng), x2 = uniform_tensor({9, 10}, rng);
    const double d = max_abs_diff(assemble_residual_matrix(add(x1, x2), fp, cfg),
                                  add(assemble_residual_matrix(x1, fp, cfg),
                                      assemble_residual_matrix(x2, fp, cfg)));
    cx.check(d < 1e-10, d, [&] { return "seed " + std::to_string(s) + ": dense additivity error " + fmt(d); });
    CeaConfig tk = cfg;
    tk.routing = RoutingRule::TopKSoftmax;
    const double dt = max_abs_diff(assemble_residual_topk(add(x1, x2), fp, tk),
                                   add(assemble_residual_topk(x1, fp, tk),
                                       assemble_residual_topk(x2, fp, tk)));
    topk_counterexample = topk_counterexample || dt > 1e-6;
  }
  cx.check(topk_counterexample, 0.0, [] { return "top-k routing never violated additivity"; });
}

void ranknorm_unit_norm(Ctx& cx) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto rng = cx.rng(0x500 + s);
    // Raw columns scaled up so the epsilon floor is below the 1e-6 band.
    FactorPair fp = random_pair(rng, 12, 5, 9);
    fp.a = scale(fp.a, 10.0);
    fp.b = scale(fp.b, 10.0);
    const auto out = rank_norm(fp, 1e-6);
    Tensor na = l2_norm(out.a, 0), nb = l2_norm(out.b, 1);
    double worst = 0.0;
    for (double v : na.data()) worst = std::max(worst, std::abs(v - 1.0));
    for (double v : nb.data()) worst = std::max(worst, std::abs(v - 1.0));
    cx.check(worst <= 1e-6, worst, [&] { return "seed " + std::to_string(s) + ": norm deviation " + fmt(worst); });
  }
  FactorPair z;
  z.a = Tensor::zeros({4, 2});
  z.b = Tensor::zeros({2, 3});
  const auto out = rank_norm(z, 1e-6);
  const bool zero = max_abs_diff(out.a, z.a) == 0.0 && max_abs_diff(out.b, z.b) == 0.0;
  cx.check(zero, 0.0, [] { return "zero factors did not stay zero"; });
}

void ranknorm_scale_invariance(Ctx& cx) {
  // Epsilon well below the norms so that the floor does not bias the ratio.
  constexpr double kEps = 1e-12;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto rng = cx.rng(0x600 + s);
    const std::size_t n = 16, din = 12, dout = 10, r = 6;
    CeaConfig cfg;
    cfg.rank = r;
    cfg.epsilon = kEps;
    Tensor x = uniform_tensor({n, din}, rng);
    const auto raw = random_pair(rng, din, r, dout);
    std::vector<double> c(r), inv(r);
    for (std::size_t k = 0; k < r; ++k) {
      c[k] = signed_scale(rng);
      inv[k] = 1.0 / c[k];
    }
    const auto base = assemble_residual_matrix(x, normalize_for_props(raw, kEps, cx.opts.fault), cfg);
    // Same scalar on column k of A and row k of B.
    FactorPair same{scale_columns(raw.a, c), scale_rows(raw.b, c), raw.target, false};
    const double d1 =
        max_abs_diff(assemble_residual_matrix(x, normalize_for_props(same, kEps, cx.opts.fault), cfg), base);
    cx.check(d1 < 1e-9, d1, [&] { return "seed " + std::to_string(s) + " (c, c): diff " + fmt(d1); });
    // The product-preserving ambiguity (A diag(c), diag(1/c) B).
    FactorPair amb{scale_columns(raw.a, c), scale_rows(raw.b, inv), raw.target, false};
    const double d2 =
        max_abs_diff(assemble_residual_matrix(x, normalize_for_props(amb, kEps, cx.opts.fault), cfg), base);
    cx.check(d2 < 1e-9, d2, [&] { return "seed " + std::to_string(s) + " (c, 1/c): diff " + fmt(d2); });
  }
}

void alpha_bounded(Ctx& cx) {
  std::vector<double> means;
  const std::vector<std::size_t> ranks = {1, 2, 4, 8, 16, 32};
  for (auto r : ranks) {
    double acc = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      auto rng = cx.rng(0x700 + 97 * r + s);
      CeaConfig cfg;
      cfg.rank = r;
      Tensor x = uniform_tensor({32, 16}, rng);
      const auto fp = rank_norm(random_pair(rng, 16, r, 16), cfg.epsilon);
      acc += l2_norm(reshape(assemble_residual_matrix(x, fp, cfg), {32 * 16}), 0).item();
    }
    means.push_back(acc / 10.0);
  }
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const double ratio = means[i] / means[0];
    cx.check(ratio <= 1.5, ratio, [&] {
      return "r=" + std::to_string(ranks[i]) + ": E|dY| grew to " + fmt(ratio) + "x the r=1 value";
    });
  }
}

void assembly_mac_count(Ctx& cx) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto rng = cx.rng(0x800 + s);
    const auto n = draw(rng, 1, 64), din = draw(rng, 1, 32), dout = draw(rng, 1, 32),
               r = draw(rng, 1, 16);
    CeaConfig cfg;
    cfg.rank = r;
    Tensor x = uniform_tensor({n, din}, rng);
    const auto fp = rank_norm(random_pair(rng, din, r, dout), cfg.epsilon);
    std::uint64_t counted = 0;
    {
      MacScope scope;
      assemble_residual_matrix(x, fp, cfg);
      counted = scope.count();
    }
    const auto expected = lowrank_assembly_macs(n, din, dout, r);
    cx.check(counted == expected, 0.0, [&] {
      return "N=" + std::to_string(n) + " d_in=" + std::to_string(din) + " d_out=" +
             std::to_string(dout) + " r=" + std::to_string(r) + ": counted " +
             std::to_string(counted) + " expected " + std::to_string(expected);
    });
  }
}

// ---------------------------------------------------------------- hyper-adapter

void probe_attention_normalized(Ctx& cx) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    BlockFixture fx(cx.opts.seed + 0x900 + s, 6, 5, 8);
    const auto cond = condense(fx.features, fx.module.adapter, 2);
    for (const auto* q : {&fx.module.adapter.queries_a, &fx.module.adapter.queries_b}) {
      const auto pr = probe(*q, cond, fx.module.adapter);
      double worst = 0.0;
      for (const auto& att : pr.attention) {
        const auto rows = att.dim(0), cols = att.dim(1);
        for (std::size_t i = 0; i < rows; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < cols; ++j) acc += att.data()[i * cols + j];
          worst = std::max(worst, std::abs(acc - 1.0));
        }
      }
      cx.check(worst <= 1e-12, worst, [&] { return "seed " + std::to_string(s) + ": row-sum error " + fmt(worst); });
    }
  }
}

Tensor permute_positions(const Tensor& f, std::mt19937_64& rng) {
  const auto h = f.dim(0), w = f.dim(1), c = f.dim(2);
  std::vector<std::size_t> perm(h * w);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> out(f.numel());
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) out[p * c + ch] = f.data()[perm[p] * c + ch];
  return Tensor::from(f.shape(), std::move(out));
}

double factor_map_diff(const FactorMap& a, const FactorMap& b) {
  double d = 0.0;
  for (const auto& [t, fp] : a) {
    d = std::max(d, max_abs_diff(fp.a, b.at(t).a));
    d = std::max(d, max_abs_diff(fp.b, b.at(t).b));
  }
  return d;
}

void gap_permutation_invariance(Ctx& cx) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto rng = cx.rng(0xa00 + s);
    BlockFixture gap(cx.opts.seed + 0xa00 + s, 6, 6, 8, FactorSource::Dynamic, Generator::GapMlp);
    const Tensor permuted = permute_positions(gap.features, rng);
    const double dg = factor_map_diff(generate_gap_mlp(gap.features, gap.module.gap, gap.cfg),
                                      generate_gap_mlp(permuted, gap.module.gap, gap.cfg));
    cx.check(dg == 0.0, dg, [&] { return "seed " + std::to_string(s) + ": GAP output changed by " + fmt(dg); });
    BlockFixture dyn(cx.opts.seed + 0xa00 + s, 6, 6, 8);
    const double dd = factor_map_diff(generate_dynamic(dyn.features, dyn.module.adapter, dyn.cfg),
                                      generate_dynamic(permuted, dyn.module.adapter, dyn.cfg));
    cx.check(dd > 1e-9, dd, [&] { return "seed " + std::to_string(s) + ": query-probe output unchanged under permutation"; });
  }
}

void dynamic_spatial_sensitivity(Ctx& cx) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    BlockFixture fx(cx.opts.seed + 0xb00 + s, 8, 8, 8);
    // Perturb one 2x2 region only.
    Tensor other = Tensor::from(fx.features.shape(), fx.features.to_vector());
    auto d = other.mutable_data();
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t c = 0; c < 8; ++c) d[(y * 8 + x) * 8 + c] += 1.0;
    const double diff = factor_map_diff(generate_dynamic(fx.features, fx.module.adapter, fx.cfg),
                                        generate_dynamic(other, fx.module.adapter, fx.cfg));
    cx.check(diff >= 1e-3, diff, [&] { return "seed " + std::to_string(s) + ": local edit moved factors by " + fmt(diff); });
  }
}

void adapter_gradients_nonzero(Ctx& cx) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    BlockFixture fx(cx.opts.seed + 0xc00 + s, 4, 4, 8);
    std::mt19937_64 rng(mix_seed(s));
    Tensor target = uniform_tensor({16, 8}, rng);
    backward(mean(abs(sub(fx.forward(fx.features), target))));
    std::vector<std::string> dead;
    for (const auto& [name, t] : fx.store.all()) {
      if (name.rfind("blk.cea", 0) != 0) continue;
      const auto g = t.grad();
      if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) dead.push_back(name);
    }
    cx.check(dead.empty(), static_cast<double>(dead.size()), [&] {
      std::string msg = "seed " + std::to_string(s) + ": zero gradient for";
      for (const auto& n : dead) msg += " " + n;
      return msg;
    });
  }
}

// ---------------------------------------------------------------- backbone

BackboneConfig small_backbone() {
  BackboneConfig cfg;
  cfg.embed_dim = 8;
  cfg.heads = {1, 2, 2, 4};
  cfg.cea.adapter_heads = 2;
  return cfg;
}

void cea_placement_counts(Ctx& cx) {
  for (const auto& dec : std::vector<std::vector<std::size_t>>{{2, 2, 2}, {2, 4, 4}, {1, 3, 5}, {4, 4, 4}}) {
    BackboneConfig cfg;
    cfg.decoder_blocks = dec;
    const auto slots = cea_placement(cfg, 3);
    std::vector<std::size_t> per(3, 0);
    for (const auto& sl : slots) ++per[sl.stage];
    for (std::size_t i = 0; i < 3; ++i) {
      const auto expected = (dec[i] + 1) / 2;
      cx.check(per[i] == expected, 0.0, [&] {
        return "decoder " + std::to_string(dec[0]) + "," + std::to_string(dec[1]) + "," +
               std::to_string(dec[2]) + " stage " + std::to_string(i) + ": " +
               std::to_string(per[i]) + " CEA blocks, expected " + std::to_string(expected);
      });
    }
  }
}

void zero_cea_heads(RestorerState& st) {
  for (const auto& [name, t] : st.params.all()) {
    const bool head = name.find(".cea.head_") != std::string::npos ||
                      name.find(".cea.static_") != std::string::npos;
    if (!head) continue;
    auto d = Tensor(t).mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data(), y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
}

void zeroed_factors_bitwise(Ctx& cx) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    for (auto src : {FactorSource::Dynamic, FactorSource::Static}) {
      auto cfg = small_backbone();
      cfg.cea.source = src;
      auto plain_cfg = cfg;
      plain_cfg.cea_enabled = false;
      const auto seed = cx.opts.seed + 0xd00 + s;
      auto with = make_restorer(cfg, 16, 16, seed);
      const auto without = make_restorer(plain_cfg, 16, 16, seed);
      zero_cea_heads(with);
      // Non-zero output head so the comparison covers the whole network.
      std::mt19937_64 rng(mix_seed(seed));
      const Tensor head = uniform_tensor(with.head.shape(), rng);
      std::copy(head.data().begin(), head.data().end(), Tensor(with.head).mutable_data().begin());
      std::copy(head.data().begin(), head.data().end(), Tensor(without.head).mutable_data().begin());
      NoGradGuard ng;
      const Tensor img = uniform_tensor({16, 16, 3}, rng, 0.0, 1.0);
      const Tensor a = restore(img, with), b = restore(img, without);
      cx.check(bitwise_equal(a, b), max_abs_diff(a, b), [&] {
        return "seed " + std::to_string(s) + " source " + to_string(src) + ": max diff " +
               fmt(max_abs_diff(a, b));
      });
    }
  }
}

void flop_counter_crosscheck(Ctx& cx) {
  struct Case {
    std::size_t size;
    FactorSource src;
    Generator gen;
    std::vector<Target> targets;
  };
  const std::vector<Case> cases = {
      {16, FactorSource::Dynamic, Generator::QueryProbe, {Target::Q, Target::K}},
      {32, FactorSource::Dynamic, Generator::QueryProbe, {Target::Q, Target::K}},
      {16, FactorSource::Dynamic, Generator::GapMlp, {Target::V, Target::FfnIn}},
      {16, FactorSource::Static, Generator::QueryProbe, {Target::Q, Target::K, Target::V}},
  };
  for (const auto& cs : cases) {
    auto cfg = small_backbone();
    cfg.cea.source = cs.src;
    cfg.cea.generator = cs.gen;
    cfg.cea.targets = cs.targets;
    const auto st = make_restorer(cfg, cs.size, cs.size, cx.opts.seed);
    std::mt19937_64 rng(mix_seed(cx.opts.seed + cs.size));
    NoGradGuard ng;
    std::uint64_t counted = 0;
    {
      MacScope scope;
      restore(uniform_tensor({cs.size, cs.size, 3}, rng, 0, 1), st);
      counted = scope.count();
    }
    const auto analytic = flop_report(cfg, cs.size, cs.size).total;
    cx.check(counted == analytic, 0.0, [&] {
      return std::to_string(cs.size) + "px " + to_string(cs.src) + "/" + to_string(cs.gen) +
             ": counted " + std::to_string(counted) + " analytic " + std::to_string(analytic);
    });
  }
}

void constant_image_consistency(Ctx& cx) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto st = make_restorer(small_backbone(), 16, 16, cx.opts.seed + 0xe00 + s);
    NoGradGuard ng;
    const Tensor img = Tensor::full({16, 16, 3}, 0.3 + 0.1 * static_cast<double>(s));
    const Tensor out = restore(img, st);
    cx.check(bitwise_equal(out, img), max_abs_diff(out, img), [&] { return "seed " + std::to_string(s) + ": identity-at-init violated"; });
  }
}

void checkpoint_roundtrip(Ctx& cx) {
  const auto st = make_restorer(small_backbone(), 16, 16, cx.opts.seed);
  std::stringstream buf;
  bool ok = true;
  for (const auto& [name, t] : st.params.all()) {
    std::stringstream ss;
    write_tensor(ss, t);
    const Tensor back = read_tensor(ss);
    if (!bitwise_equal(back, t)) ok = false;
  }
  cx.check(ok, 0.0, [] { return "tensor blob round-trip changed a parameter"; });
}

// ---------------------------------------------------------------- metrics, degradations

void psnr_monotone(Ctx& cx) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto rng = cx.rng(0xf00 + s);
    const Tensor y = uniform_tensor({8, 8, 3}, rng, 0, 1);
    const Tensor n = uniform_tensor({8, 8, 3}, rng, -1, 1);
    double prev = std::numeric_limits<double>::infinity();
    for (double amp : {0.001, 0.01, 0.05, 0.1, 0.3}) {
      const double p = psnr(add(y, scale(n, amp)), y);
      cx.check(p < prev, p, [&] { return "seed " + std::to_string(s) + ": PSNR not decreasing at amplitude " + fmt(amp); });
      prev = p;
    }
  }
}

void bootstrap_determinism(Ctx& cx) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto rng = cx.rng(0x1000 + s);
    std::normal_distribution<double> nd(0.3, 1.0);
    std::vector<double> d(200);
    for (auto& v : d) v = nd(rng);
    const auto a = paired_bootstrap(d, 2000, 0.95, s), b = paired_bootstrap(d, 2000, 0.95, s);
    const bool same = a.lo == b.lo && a.hi == b.hi && a.p_boot == b.p_boot && a.mean == b.mean;
    cx.check(same, 0.0, [&] { return "seed " + std::to_string(s) + ": bootstrap not reproducible"; });
    const bool ordered = a.lo <= a.mean + 1e-12 && a.mean <= a.hi + 1e-12;
    cx.check(ordered, 0.0, [&] { return "seed " + std::to_string(s) + ": CI does not bracket the mean"; });
  }
  const auto c = paired_bootstrap(std::vector<double>(50, 1.0), 1000, 0.95, 1);
  cx.check(c.lo == 1.0 && c.hi == 1.0 && c.p_boot == 0.0 && c.p_below_resolution, 0.0,
           [] { return "constant differences did not give a point CI"; });
}

void degradation_identity_range(Ctx& cx) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto rng = cx.rng(0x1100 + s);
    const Tensor y = uniform_tensor({16, 16, 3}, rng, 0, 1);
    const std::vector<std::pair<std::string, Tensor>> identity = {
        {"noise", apply_noise(y, 0.0, s)},
        {"haze", apply_haze(y, 1.0, 0.7, s)},
        {"lowlight", apply_lowlight(y, 1.0, 1.0)},
        {"rain", apply_rain(y, 0.0, 0.3, 0.8, s)},
        {"blur", apply_blur(y, 0.0)},
        {"snow", apply_snow(y, 0.0, 1.5, s)},
    };
    for (const auto& [name, x] : identity)
      cx.check(bitwise_equal(x, y), max_abs_diff(x, y), [&] { return name + " not identity at identity parameters"; });
    const std::vector<std::pair<std::string, Tensor>> strong = {
        {"noise", apply_noise(y, 255.0, s)},
        {"haze", apply_haze(y, 0.2, 1.0, s)},
        {"lowlight", apply_lowlight(y, 3.0, 0.2)},
        {"rain", apply_rain(y, 0.05, -0.4, 1.0, s)},
        {"blur", apply_blur(y, 2.0)},
        {"snow", apply_snow(y, 0.05, 2.0, s)},
    };
    for (const auto& [name, x] : strong) {
      const auto v = x.data();
      const bool in_range = x.shape() == y.shape() &&
                            std::all_of(v.begin(), v.end(), [](double t) { return t >= 0.0 && t <= 1.0; });
      cx.check(in_range, 0.0, [&] { return name + " left [0, 1] or changed shape"; });
    }
  }
}

void noise_psnr_monotone(Ctx& cx) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto rng = cx.rng(0x1200 + s);
    const Tensor y = uniform_tensor({32, 32, 3}, rng, 0.2, 0.8);
    double prev = std::numeric_limits<double>::infinity();
    for (double sigma : {5.0, 15.0, 25.0, 50.0, 75.0}) {
      const double p = psnr(apply_noise(y, sigma, 100 + s), y);
      cx.check(std::isfinite(p) && p < prev, p, [&] { return "seed " + std::to_string(s) + ": PSNR not decreasing at sigma " + fmt(sigma); });
      prev = p;
    }
  }
}

using Suite = void (*)(Ctx&);

const std::vector<std::pair<std::string, Suite>>& registry() {
  static const std::vector<std::pair<std::string, Suite>> r = {
      {"matmul_associativity", matmul_associativity},
      {"primitive_grad_check", primitive_grad_check},
      {"backward_determinism", backward_determinism},
      {"tokenwise_matrix_equivalence", tokenwise_matrix_equivalence},
      {"dense_linearity", dense_linearity},
      {"ranknorm_unit_norm", ranknorm_unit_norm},
      {"ranknorm_scale_invariance", ranknorm_scale_invariance},
      {"alpha_bounded", alpha_bounded},
      {"assembly_mac_count", assembly_mac_count},
      {"probe_attention_normalized", probe_attention_normalized},
      {"gap_permutation_invariance", gap_permutation_invariance},
      {"dynamic_spatial_sensitivity", dynamic_spatial_sensitivity},
      {"adapter_gradients_nonzero", adapter_gradients_nonzero},
      {"cea_placement_counts", cea_placement_counts},
      {"zeroed_factors_bitwise", zeroed_factors_bitwise},
      {"flop_counter_crosscheck", flop_counter_crosscheck},
      {"constant_image_consistency", constant_image_consistency},
      {"checkpoint_roundtrip", checkpoint_roundtrip},
      {"psnr_monotone", psnr_monotone},
      {"bootstrap_determinism", bootstrap_determinism},
      {"degradation_identity_range", degradation_identity_range},
      {"noise_psnr_monotone", noise_psnr_monotone},
  };
  return r;
}

}  // namespace

const std::vector<std::string>& prop_suite_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, f] : registry()) n.push_back(k);
    return n;
  }();
  return names;
}

PropResult run_prop_suite(const std::string& name, const PropOptions& opts) {
  if (!opts.fault.empty() && opts.fault != "skip-ranknorm")
    throw ConfigError("unknown fault '" + opts.fault + "'");
  for (const auto& [k, f] : registry()) {
    if (k != name) continue;
    Ctx cx{PropResult{}, opts};
    cx.res.suite = name;
    try {
      f(cx);
    } catch (const std::exception& e) {
      ++cx.res.failures;
      cx.res.counterexamples.push_back(std::string("exception: ") + e.what());
    }
    return cx.res;
  }
  throw ConfigError("unknown property suite '" + name + "'");
}

std::vector<PropResult> run_all_props(const PropOptions& opts) {
  std::vector<PropResult> out;
  for (const auto& n : prop_suite_names()) out.push_back(run_prop_suite(n, opts));
  return out;
}

json props_to_json(const std::vector<PropResult>& results) {
  json suites = json::array();
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed();
    suites.push_back({{"suite", r.suite},
                      {"passed", r.passed()},
                      {"cases", r.cases},
                      {"failures", r.failures},
                      {"worst", r.worst},
                      {"counterexamples", r.counterexamples}});
  }
  return {{"passed", all}, {"suites", suites}};
}

std::string props_table(const std::vector<PropResult>& results) {
  std::ostringstream os;
  os << std::left << std::setw(32) << "suite" << std::setw(8) << "cases" << std::setw(10)
     << "failures" << "result\n";
  for (const auto& r : results) {
    os << std::left << std::setw(32) << r.suite << std::setw(8) << r.cases << std::setw(10)
       << r.failures << (r.passed() ? "PASS" : "FAIL") << '\n';
    for (const auto& c : r.counterexamples) os << "    " << c << '\n';
  }
  return os.str();
}

}  // namespace cea
