#pragma once

#include <map>
#include <string>
#include <vector>

#include "cea/assembly.hpp"
#include "cea/params.hpp"

namespace cea {

/// Input/output widths of each injection target's projection.
using TargetDims = std::map<Target, std::pair<std::size_t, std::size_t>>;

/// Dims for a block of width `channels` with FFN expansion `ffn_ratio`.
TargetDims block_target_dims(std::size_t channels, std::size_t ffn_ratio);

/// Query-probe generator: condensation, learnable-query cross-attention,
/// target-specific FC heads. Widths follow the block's channel count.
struct AdapterWeights {
  Tensor dw;         ///< [3 x 3 x C] depthwise condensation kernel
  Tensor pw;         ///< [C x C] pointwise condensation
  Tensor queries_a;  ///< [r x C]
  Tensor queries_b;  ///< [r x C]
  Tensor wq, wk, wv, wo;  ///< [C x C] cross-attention projections, shared by A and B probes
  std::map<Target, Tensor> head_a;  ///< [C x d_in]
  std::map<Target, Tensor> head_b;  ///< [C x d_out]
  std::size_t heads = 4;
};

/// Global-average-pool + MLP baseline generator.
struct GapMlpWeights {
  Tensor w1;  ///< [C x 2C]
  std::map<Target, Tensor> head_a;  ///< [2C x d_in*r]
  std::map<Target, Tensor> head_b;  ///< [2C x r*d_out]
};

/// Learnable factors shared across inputs (still RankNorm'd before use).
struct StaticFactors {
  std::map<Target, Tensor> a;  ///< [d_in x r]
  std::map<Target, Tensor> b;  ///< [r x d_out]
};

AdapterWeights init_adapter(ParamStore& store, const std::string& prefix, std::size_t channels,
                            const CeaConfig& cfg, const TargetDims& dims, std::uint64_t seed);
GapMlpWeights init_gap_mlp(ParamStore& store, const std::string& prefix, std::size_t channels,
                           const CeaConfig& cfg, const TargetDims& dims, std::uint64_t seed);
StaticFactors init_static(ParamStore& store, const std::string& prefix, const CeaConfig& cfg,
                          const TargetDims& dims, std::uint64_t seed);

struct CondensedFeatures {
  Tensor tokens;  ///< [ceil(H/s) * ceil(W/s) x C]
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Strided depthwise 3x3 (padding 1) followed by pointwise 1x1, flattened to tokens.
CondensedFeatures condense(const Tensor& features, const AdapterWeights& w, std::size_t stride);

struct ProbeResult {
  Tensor t;                        ///< [r x C] contextualized queries
  std::vector<Tensor> attention;   ///< per head, [r x M] softmax weights
};

/// T = R + CrossAttn(R, X, X) with multi-head scaled dot-product attention.
ProbeResult probe(const Tensor& queries, const CondensedFeatures& condensed,
                  const AdapterWeights& w);

/// Raw (unnormalized) factors for one target from the shared probe outputs.
FactorPair decode_factors(const Tensor& t_a, const Tensor& t_b, const AdapterWeights& w,
                          Target target);

using FactorMap = std::map<Target, FactorPair>;

/// condense -> probe(A), probe(B) -> per-target decode -> rank_norm.
FactorMap generate_dynamic(const Tensor& features, const AdapterWeights& w, const CeaConfig& cfg);

/// Batch form; each sample is generated and normalized independently.
std::vector<FactorMap> generate_dynamic(const std::vector<Tensor>& batch, const AdapterWeights& w,
                                        const CeaConfig& cfg);

/// GAP over positions -> two-layer MLP -> reshape per target -> rank_norm.
FactorMap generate_gap_mlp(const Tensor& features, const GapMlpWeights& w, const CeaConfig& cfg);

/// RankNorm'd static factors.
FactorMap static_factor_map(const StaticFactors& w, const CeaConfig& cfg);

}  // namespace cea
