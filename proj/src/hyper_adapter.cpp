#include "cea/hyper_adapter.hpp"

#include <cmath>

#include "cea/ops.hpp"

namespace cea {

TargetDims block_target_dims(std::size_t channels, std::size_t ffn_ratio) {
  return {{Target::Q, {channels, channels}},
          {Target::K, {channels, channels}},
          {Target::V, {channels, channels}},
          {Target::FfnIn, {channels, channels * ffn_ratio}}};
}

namespace {

const std::pair<std::size_t, std::size_t>& dims_for(const TargetDims& dims, Target t) {
  auto it = dims.find(t);
  if (it == dims.end()) throw ConfigError("no projection dims for target " + to_string(t));
  return it->second;
}

constexpr double kResidualHeadGain = 0.1;

}  // namespace

AdapterWeights init_adapter(ParamStore& store, const std::string& prefix, std::size_t channels,
                            const CeaConfig& cfg, const TargetDims& dims, std::uint64_t seed) {
  cfg.validate();
  if (channels % cfg.adapter_heads != 0)
    throw ConfigError("adapter width " + std::to_string(channels) + " not divisible by " +
                      std::to_string(cfg.adapter_heads) + " heads");
  const auto c = channels, r = cfg.rank;
  AdapterWeights w;
  w.heads = cfg.adapter_heads;
  w.dw = store.create(prefix + ".condense.dw", {3, 3, c}, Init::Uniform, seed, 9);
  w.pw = store.create(prefix + ".condense.pw", {c, c}, Init::Uniform, seed, c);
  w.queries_a = store.create(prefix + ".queries_a", {r, c}, Init::Uniform, seed, c);
  w.queries_b = store.create(prefix + ".queries_b", {r, c}, Init::Uniform, seed, c);
  w.wq = store.create(prefix + ".xattn.wq", {c, c}, Init::Uniform, seed, c);
  w.wk = store.create(prefix + ".xattn.wk", {c, c}, Init::Uniform, seed, c);
  w.wv = store.create(prefix + ".xattn.wv", {c, c}, Init::Uniform, seed, c);
  w.wo = store.create(prefix + ".xattn.wo", {c, c}, Init::Uniform, seed, c);
  for (auto t : cfg.targets) {
    const auto [din, dout] = dims_for(dims, t);
    const auto tag = to_string(t);
    w.head_a[t] = store.create(prefix + ".head_a." + tag, {c, din}, Init::Uniform, seed, c);
    w.head_b[t] = store.create(prefix + ".head_b." + tag, {c, dout}, Init::Uniform, seed, c,
                               kResidualHeadGain);
  }
  return w;
}

GapMlpWeights init_gap_mlp(ParamStore& store, const std::string& prefix, std::size_t channels,
                           const CeaConfig& cfg, const TargetDims& dims, std::uint64_t seed) {
  cfg.validate();
  const auto c = channels, hidden = 2 * channels, r = cfg.rank;
  GapMlpWeights w;
  w.w1 = store.create(prefix + ".mlp.w1", {c, hidden}, Init::Uniform, seed, c);
  for (auto t : cfg.targets) {
    const auto [din, dout] = dims_for(dims, t);
    const auto tag = to_string(t);
    w.head_a[t] =
        store.create(prefix + ".mlp.head_a." + tag, {hidden, din * r}, Init::Uniform, seed, hidden);
    w.head_b[t] = store.create(prefix + ".mlp.head_b." + tag, {hidden, r * dout}, Init::Uniform,
                               seed, hidden, kResidualHeadGain);
  }
  return w;
}

StaticFactors init_static(ParamStore& store, const std::string& prefix, const CeaConfig& cfg,
                          const TargetDims& dims, std::uint64_t seed) {
  cfg.validate();
  const auto r = cfg.rank;
  StaticFactors w;
  for (auto t : cfg.targets) {
    const auto [din, dout] = dims_for(dims, t);
    const auto tag = to_string(t);
    w.a[t] = store.create(prefix + ".static_a." + tag, {din, r}, Init::Uniform, seed, din);
    w.b[t] = store.create(prefix + ".static_b." + tag, {r, dout}, Init::Uniform, seed, r,
                          kResidualHeadGain);
  }
  return w;
}

CondensedFeatures condense(const Tensor& features, const AdapterWeights& w, std::size_t stride) {
  if (stride < 1) throw ConfigError("condensation stride must be >= 1");
  if (features.rank() != 3) throw DimensionError("condense expects [H x W x C] features");
  Tensor reduced = pointwise_conv2d(depthwise_conv2d(features, w.dw, stride, 1), w.pw);
  CondensedFeatures out;
  out.height = reduced.dim(0);
  out.width = reduced.dim(1);
  out.tokens = reshape(reduced, {out.height * out.width, reduced.dim(2)});
  return out;
}

ProbeResult probe(const Tensor& queries, const CondensedFeatures& condensed,
                  const AdapterWeights& w) {
  const auto c = queries.dim(1);
  if (condensed.tokens.dim(1) != c)
    throw DimensionError("probe: query width " + std::to_string(c) + " != feature width " +
                         std::to_string(condensed.tokens.dim(1)));
  if (c % w.heads != 0) throw ConfigError("probe: width not divisible by heads");
  const auto dh = c / w.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = matmul(queries, w.wq);
  Tensor k = matmul(condensed.tokens, w.wk);
  Tensor v = matmul(condensed.tokens, w.wv);
  ProbeResult res;
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < w.heads; ++h) {
    Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    Tensor attn = softmax(scale(matmul(qh, kh, false, true), inv_sqrt), 1);
    outs.push_back(matmul(attn, vh));
    res.attention.push_back(attn);
  }
  Tensor mixed = w.heads == 1 ? outs.front() : concat(outs, 1);
  res.t = add(queries, matmul(mixed, w.wo));
  return res;
}

FactorPair decode_factors(const Tensor& t_a, const Tensor& t_b, const AdapterWeights& w,
                          Target target) {
  auto ia = w.head_a.find(target);
  auto ib = w.head_b.find(target);
  if (ia == w.head_a.end() || ib == w.head_b.end())
    throw ConfigError("no decoding head for target " + to_string(target));
  FactorPair fp;
  fp.target = target;
  fp.a = transpose(matmul(t_a, ia->second));
  fp.b = matmul(t_b, ib->second);
  fp.normalized = false;
  return fp;
}

FactorMap generate_dynamic(const Tensor& features, const AdapterWeights& w, const CeaConfig& cfg) {
  if (cfg.source != FactorSource::Dynamic)
    throw ConfigError("generate_dynamic requires a dynamic factor source");
  auto condensed = condense(features, w, cfg.condense_stride);
  Tensor t_a = probe(w.queries_a, condensed, w).t;
  Tensor t_b = probe(w.queries_b, condensed, w).t;
  FactorMap out;
  for (auto t : cfg.targets) out.emplace(t, rank_norm(decode_factors(t_a, t_b, w, t), cfg.epsilon));
  return out;
}

std::vector<FactorMap> generate_dynamic(const std::vector<Tensor>& batch, const AdapterWeights& w,
                                        const CeaConfig& cfg) {
  std::vector<FactorMap> out;
  out.reserve(batch.size());
  for (const auto& f : batch) out.push_back(generate_dynamic(f, w, cfg));
  return out;
}

FactorMap generate_gap_mlp(const Tensor& features, const GapMlpWeights& w, const CeaConfig& cfg) {
  if (features.rank() != 3) throw DimensionError("generate_gap_mlp expects [H x W x C] features");
  const auto c = features.dim(2), r = cfg.rank;
  Tensor pooled = pool_mean(reshape(features, {features.dim(0) * features.dim(1), c}));
  Tensor hidden = gelu(matmul(pooled, w.w1));
  FactorMap out;
  for (auto t : cfg.targets) {
    auto ia = w.head_a.find(t);
    auto ib = w.head_b.find(t);
    if (ia == w.head_a.end() || ib == w.head_b.end())
      throw ConfigError("no GAP-MLP head for target " + to_string(t));
    const auto din = ia->second.dim(1) / r;
    const auto dout = ib->second.dim(1) / r;
    FactorPair fp;
    fp.target = t;
    fp.a = reshape(matmul(hidden, ia->second), {din, r});
    fp.b = reshape(matmul(hidden, ib->second), {r, dout});
    out.emplace(t, rank_norm(fp, cfg.epsilon));
  }
  return out;
}

FactorMap static_factor_map(const StaticFactors& w, const CeaConfig& cfg) {
  FactorMap out;
  for (auto t : cfg.targets) {
    auto ia = w.a.find(t);
    auto ib = w.b.find(t);
    if (ia == w.a.end() || ib == w.b.end())
      throw ConfigError("no static factors for target " + to_string(t));
    FactorPair fp;
    fp.target = t;
    fp.a = ia->second;
    fp.b = ib->second;
    out.emplace(t, rank_norm(fp, cfg.epsilon));
  }
  return out;
}

}  // namespace cea
