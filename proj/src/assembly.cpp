#include "cea/assembly.hpp"

#include <algorithm>
#include <numeric>

#include "cea/ops.hpp"

namespace cea {

std::string to_string(Target t) {
  switch (t) {
    case Target::Q: return "Q";
    case Target::K: return "K";
    case Target::V: return "V";
    case Target::FfnIn: return "FFN_in";
  }
  return "?";
}

std::string to_string(RoutingRule r) {
  return r == RoutingRule::DenseSigned ? "dense_signed" : "topk_softmax";
}

std::string to_string(FactorSource s) { return s == FactorSource::Dynamic ? "dynamic" : "static"; }

std::string to_string(Generator g) { return g == Generator::QueryProbe ? "query_probe" : "gap_mlp"; }

Target target_from_string(const std::string& s) {
  if (s == "Q" || s == "q") return Target::Q;
  if (s == "K" || s == "k") return Target::K;
  if (s == "V" || s == "v") return Target::V;
  if (s == "FFN_in" || s == "ffn_in" || s == "W1") return Target::FfnIn;
  throw ConfigError("unknown injection target '" + s + "'");
}

RoutingRule routing_from_string(const std::string& s) {
  if (s == "dense_signed") return RoutingRule::DenseSigned;
  if (s == "topk_softmax") return RoutingRule::TopKSoftmax;
  throw ConfigError("unknown routing rule '" + s + "'");
}

FactorSource source_from_string(const std::string& s) {
  if (s == "dynamic") return FactorSource::Dynamic;
  if (s == "static") return FactorSource::Static;
  throw ConfigError("unknown factor source '" + s + "'");
}

Generator generator_from_string(const std::string& s) {
  if (s == "query_probe") return Generator::QueryProbe;
  if (s == "gap_mlp") return Generator::GapMlp;
  throw ConfigError("unknown generator '" + s + "'");
}

bool CeaConfig::injects(Target t) const {
  return std::find(targets.begin(), targets.end(), t) != targets.end();
}

void CeaConfig::validate() const {
  if (rank < 1) throw ConfigError("cea.rank must be >= 1");
  if (alpha && !(*alpha > 0.0)) throw ConfigError("cea.alpha must be > 0");
  if (!(epsilon > 0.0)) throw ConfigError("cea.epsilon must be > 0");
  if (routing == RoutingRule::TopKSoftmax && (top_k < 1 || top_k > rank))
    throw ConfigError("cea.top_k must satisfy 1 <= k <= rank (k=" + std::to_string(top_k) +
                      ", rank=" + std::to_string(rank) + ")");
  if (condense_stride < 1) throw ConfigError("cea.condense_stride must be >= 1");
  if (adapter_heads < 1) throw ConfigError("cea.adapter_heads must be >= 1");
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t j = i + 1; j < targets.size(); ++j)
      if (targets[i] == targets[j]) throw ConfigError("duplicate injection target");
}

void FactorPair::check_shapes() const {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("factor pair must hold matrices, got A " + shape_str(a.shape()) +
                         ", B " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw DimensionError("factor rank mismatch: A " + shape_str(a.shape()) + ", B " +
                         shape_str(b.shape()));
  if (a.dim(1) < 1 || a.dim(0) < 1 || b.dim(1) < 1) throw DimensionError("empty factor pair");
}

FactorPair rank_norm(const FactorPair& fp, double epsilon) {
  if (fp.normalized) throw ConfigError("rank_norm: factor pair already normalized");
  if (!(epsilon > 0.0)) throw ConfigError("rank_norm: epsilon must be > 0");
  fp.check_shapes();
  FactorPair out;
  out.target = fp.target;
  out.a = mul_rows(fp.a, reciprocal(add_scalar(l2_norm(fp.a, 0), epsilon)));
  out.b = mul_cols(fp.b, reciprocal(add_scalar(l2_norm(fp.b, 1), epsilon)));
  out.normalized = true;
  return out;
}

namespace {

void check_assembly_inputs(const Tensor& x, const FactorPair& fp, const CeaConfig& cfg) {
  fp.check_shapes();
  if (x.rank() != 2 || x.dim(1) != fp.d_in())
    throw DimensionError("tokens " + shape_str(x.shape()) + " incompatible with A " +
                         shape_str(fp.a.shape()));
  if (fp.rank() != cfg.rank)
    throw DimensionError("factor rank " + std::to_string(fp.rank()) + " != configured rank " +
                         std::to_string(cfg.rank));
}

}  // namespace

Tensor assemble_residual_tokenwise(const Tensor& x, const FactorPair& fp, const CeaConfig& cfg) {
  check_assembly_inputs(x, fp, cfg);
  const auto n = x.dim(0), din = fp.d_in(), dout = fp.d_out(), r = fp.rank();
  const double alpha = cfg.effective_alpha();
  auto xd = x.data(), ad = fp.a.data(), bd = fp.b.data();
  std::vector<double> out(n * dout, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < r; ++k) {
      double affinity = 0.0;
      for (std::size_t i = 0; i < din; ++i) affinity += xd[t * din + i] * ad[i * r + k];
      for (std::size_t j = 0; j < dout; ++j) out[t * dout + j] += affinity * bd[k * dout + j];
    }
    for (std::size_t j = 0; j < dout; ++j) out[t * dout + j] *= alpha;
  }
  return Tensor::from({n, dout}, std::move(out));
}

Tensor assemble_residual_matrix(const Tensor& x, const FactorPair& fp, const CeaConfig& cfg) {
  check_assembly_inputs(x, fp, cfg);
  if (cfg.routing != RoutingRule::DenseSigned)
    throw ConfigError("assemble_residual_matrix requires dense_signed routing");
  // alpha on the N x r affinities, not the N x d_out output.
  Tensor affinities = scale(matmul(x, fp.a), cfg.effective_alpha());
  return matmul(affinities, fp.b);
}

Tensor assemble_residual_topk(const Tensor& x, const FactorPair& fp, const CeaConfig& cfg) {
  check_assembly_inputs(x, fp, cfg);
  const auto r = fp.rank();
  const auto k = cfg.top_k;
  if (k < 1 || k > r)
    throw ConfigError("top-k routing requires 1 <= k <= r (k=" + std::to_string(k) +
                      ", r=" + std::to_string(r) + ")");
  const auto n = x.dim(0);
  Tensor probs = softmax(matmul(x, fp.a), 1);
  std::vector<double> mask(n * r, 0.0);
  std::vector<std::size_t> order(r);
  auto pd = probs.data();
  for (std::size_t t = 0; t < n; ++t) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      return pd[t * r + i] > pd[t * r + j];
    });
    for (std::size_t s = 0; s < k; ++s) mask[t * r + order[s]] = 1.0;
  }
  Tensor kept = mul(probs, Tensor::from({n, r}, std::move(mask)));
  Tensor weights = mul_cols(kept, reciprocal(sum_axis(kept, 1)));
  return matmul(weights, fp.b);
}

Tensor assemble_residual(const Tensor& x, const FactorPair& fp, const CeaConfig& cfg) {
  return cfg.routing == RoutingRule::DenseSigned ? assemble_residual_matrix(x, fp, cfg)
                                                 : assemble_residual_topk(x, fp, cfg);
}

Tensor inject(const Tensor& base_out, const Tensor& delta) {
  if (base_out.shape() != delta.shape())
    throw DimensionError("inject: base " + shape_str(base_out.shape()) + " vs residual " +
                         shape_str(delta.shape()));
  return add(base_out, delta);
}

std::uint64_t lowrank_assembly_macs(std::uint64_t n, std::uint64_t d_in, std::uint64_t d_out,
                                    std::uint64_t r) {
  return n * d_in * r + n * r * d_out;
}

std::uint64_t dense_projection_macs(std::uint64_t n, std::uint64_t d_in, std::uint64_t d_out) {
  return n * d_in * d_out;
}

Tensor top_k_gates(const Tensor& x, const Tensor& w_gate, std::size_t k) {
  const auto e = w_gate.dim(1);
  if (k < 1 || k > e) throw ConfigError("top_k_gates: k must be in [1, E]");
  const auto n = x.dim(0);
  Tensor probs = softmax(matmul(x, w_gate), 1);
  auto pd = probs.data();
  std::vector<double> mask(n * e, 0.0);
  std::vector<std::size_t> order(e);
  for (std::size_t t = 0; t < n; ++t) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      return pd[t * e + i] > pd[t * e + j];
    });
    for (std::size_t s = 0; s < k; ++s) mask[t * e + order[s]] = 1.0;
  }
  Tensor kept = mul(probs, Tensor::from({n, e}, std::move(mask)));
  return mul_cols(kept, reciprocal(sum_axis(kept, 1)));
}

Tensor moe_baseline_forward(const Tensor& x, const Tensor& w, const std::vector<Expert>& experts,
                            const Tensor& gates) {
  const auto n = x.dim(0);
  if (gates.rank() != 2 || gates.dim(0) != n || gates.dim(1) != experts.size())
    throw DimensionError("moe: gates " + shape_str(gates.shape()) + " do not match " +
                         std::to_string(n) + " tokens x " + std::to_string(experts.size()) +
                         " experts");
  Tensor y = matmul(x, w);
  for (std::size_t i = 0; i < experts.size(); ++i) {
    Tensor hidden = matmul(x, experts[i].w1);
    if (experts[i].gelu_hidden) hidden = gelu(hidden);
    Tensor out = matmul(hidden, experts[i].w2);
    if (out.shape() != y.shape())
      throw DimensionError("moe: expert " + std::to_string(i) + " output " +
                           shape_str(out.shape()) + " != " + shape_str(y.shape()));
    Tensor g = reshape(slice(gates, 1, i, i + 1), {n});
    y = add(y, mul_cols(out, g));
  }
  return y;
}

}  // namespace cea
