#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cea/tensor.hpp"

namespace cea {

/// Projection that receives a generated residual.
enum class Target { Q, K, V, FfnIn };

/// How a token's affinities to the r rank components become mixing weights.
enum class RoutingRule {
  DenseSigned,  ///< raw inner products, scaled by alpha
  TopKSoftmax,  ///< softmax over all r, keep the k largest, renormalize
};

/// Where the factors come from.
enum class FactorSource {
  Dynamic,  ///< generated per instance from the block's features
  Static,   ///< learnable per-block matrices, shared by all inputs
};

/// Generator used when the factor source is dynamic.
enum class Generator {
  QueryProbe,  ///< condensation + learnable-query cross-attention
  GapMlp,      ///< global average pool + two-layer MLP
};

std::string to_string(Target t);
std::string to_string(RoutingRule r);
std::string to_string(FactorSource s);
std::string to_string(Generator g);
Target target_from_string(const std::string& s);
RoutingRule routing_from_string(const std::string& s);
FactorSource source_from_string(const std::string& s);
Generator generator_from_string(const std::string& s);

struct CeaConfig {
  std::size_t rank = 8;
  /// Residual scale for DenseSigned; unset means 1/rank.
  std::optional<double> alpha;
  double epsilon = 1e-6;
  RoutingRule routing = RoutingRule::DenseSigned;
  std::size_t top_k = 2;
  FactorSource source = FactorSource::Dynamic;
  Generator generator = Generator::QueryProbe;
  std::vector<Target> targets{Target::Q, Target::K};
  /// Condensation stride of the query-probe generator.
  std::size_t condense_stride = 2;
  std::size_t adapter_heads = 4;

  double effective_alpha() const { return alpha.value_or(1.0 / static_cast<double>(rank)); }
  bool injects(Target t) const;
  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

/// Routing bases A [d_in x r] (columns) and residual directions B [r x d_out] (rows).
struct FactorPair {
  Tensor a;
  Tensor b;
  Target target = Target::Q;
  bool normalized = false;

  std::size_t rank() const { return a.dim(1); }
  std::size_t d_in() const { return a.dim(0); }
  std::size_t d_out() const { return b.dim(1); }
  /// Throws DimensionError unless A and B agree on the rank.
  void check_shapes() const;
};

/// Divides every column of A and every row of B by (its L2 norm + epsilon).
/// Differentiable. Throws ConfigError if `fp` is already normalized.
FactorPair rank_norm(const FactorPair& fp, double epsilon);

/// Brute-force reference: explicit per-token, per-rank sums of
/// alpha * <X_n, a_k> b_k. Returns a constant (no graph).
Tensor assemble_residual_tokenwise(const Tensor& x, const FactorPair& fp, const CeaConfig& cfg);

/// alpha * (X A) B as two low-rank products; never forms A B.
Tensor assemble_residual_matrix(const Tensor& x, const FactorPair& fp, const CeaConfig& cfg);

/// Top-k softmax routing over rank components, no alpha.
/// Ties between equal probabilities keep the lower rank index.
Tensor assemble_residual_topk(const Tensor& x, const FactorPair& fp, const CeaConfig& cfg);

/// Dispatches on cfg.routing.
Tensor assemble_residual(const Tensor& x, const FactorPair& fp, const CeaConfig& cfg);

/// Q = X W_Q + delta, and likewise for other targets.
Tensor inject(const Tensor& base_out, const Tensor& delta);

/// Analytic MACs of the two-product assembly and of a dense dynamic projection.
std::uint64_t lowrank_assembly_macs(std::uint64_t n, std::uint64_t d_in, std::uint64_t d_out,
                                    std::uint64_t r);
std::uint64_t dense_projection_macs(std::uint64_t n, std::uint64_t d_in, std::uint64_t d_out);

// ---------------------------------------------------------------------------
// Sparse mixture-of-experts reference layer, used as a conceptual baseline.

struct Expert {
  Tensor w1;  ///< [d_in x hidden]
  Tensor w2;  ///< [hidden x d_out]
  bool gelu_hidden = true;
};

/// Top-k softmax gates [N x E] from router logits X W_gate; unselected gates are 0.
Tensor top_k_gates(const Tensor& x, const Tensor& w_gate, std::size_t k);

/// Y_n = X_n W + sum_i g_i(X_n) E_i(X_n) with explicit gates [N x E].
Tensor moe_baseline_forward(const Tensor& x, const Tensor& w, const std::vector<Expert>& experts,
                            const Tensor& gates);

}  // namespace cea
