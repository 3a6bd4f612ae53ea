#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cea/hyper_adapter.hpp"
#include "cea/params.hpp"

namespace cea {

/// Asymmetric U-shaped restorer geometry. Channel width doubles per level.
struct BackboneConfig {
  std::size_t embed_dim = 16;
  std::vector<std::size_t> encoder_blocks{1, 1, 1};
  std::size_t latent_blocks = 1;
  /// Ordered from low to high resolution.
  std::vector<std::size_t> decoder_blocks{2, 2, 2};
  std::size_t refinement_blocks = 1;
  /// Attention heads per resolution level, level 0 = full resolution.
  std::vector<std::size_t> heads{1, 2, 2, 4};
  std::size_t ffn_ratio = 2;
  /// Number of downsamplings. Unset: 3, or 2 for inputs smaller than 32 px.
  std::optional<std::size_t> levels;
  bool cea_enabled = true;
  CeaConfig cea;

  std::size_t levels_for(std::size_t height, std::size_t width) const;
  std::size_t channels(std::size_t level) const { return embed_dim << level; }
  /// Throws ConfigError when the geometry is inconsistent for `levels`.
  void validate(std::size_t levels) const;
};

/// Decoder blocks that carry CEA: alternating, starting at each stage's first block.
struct CeaSlot {
  std::size_t stage;  ///< decoder stage index, 0 = lowest resolution
  std::size_t block;
};
std::vector<CeaSlot> cea_placement(const BackboneConfig& cfg, std::size_t levels);

struct BlockWeights {
  Tensor norm1, wq, wk, wv, wo, norm2, w1, w2;
  std::size_t heads = 1;
};

/// Factor generator attached to one CEA-equipped block.
struct CeaModule {
  FactorSource source = FactorSource::Dynamic;
  Generator generator = Generator::QueryProbe;
  AdapterWeights adapter;
  GapMlpWeights gap;
  StaticFactors fixed;
};

struct CeaContext {
  FactorMap factors;
  const CeaConfig* cfg = nullptr;
};

BlockWeights init_block(ParamStore& store, const std::string& prefix, std::size_t channels,
                        std::size_t heads, std::size_t ffn_ratio, std::uint64_t seed);

/// Pre-norm multi-head spatial self-attention + GELU FFN, residual around both,
/// no biases. With a context, generated residuals are added to the configured
/// projections (Q/K/V, or the first FFN projection).
Tensor transformer_block_forward(const Tensor& x, const BlockWeights& w,
                                 const CeaContext* ctx = nullptr);

/// Factors for one block from its input features [H x W x C].
FactorMap generate_factors(const Tensor& features, const CeaModule& module, const CeaConfig& cfg);

struct Stage {
  std::vector<BlockWeights> blocks;
  std::vector<std::optional<CeaModule>> cea;  ///< parallel to blocks
};

/// Every learnable tensor plus structured views into them.
struct RestorerState {
  BackboneConfig config;
  std::size_t levels = 0;
  std::uint64_t seed = 0;
  ParamStore params;

  Tensor embed_pw, embed_dw;
  std::vector<Stage> encoder;  ///< index = level
  std::vector<Tensor> down;    ///< level -> level+1
  Stage latent;
  std::vector<Stage> decoder;  ///< index = decoder stage (0 = lowest resolution)
  std::vector<Tensor> up;      ///< per decoder stage
  std::vector<Tensor> fuse;    ///< per decoder stage
  Stage refinement;
  Tensor head;  ///< zero-initialized output projection [C x 3]
};

/// Builds a restorer for inputs of the given size (which fixes the level count).
RestorerState make_restorer(const BackboneConfig& cfg, std::size_t height, std::size_t width,
                            std::uint64_t seed);

/// Blind restoration: image [H x W x 3] -> residual-corrected image, same shape.
Tensor restore(const Tensor& image, const RestorerState& state);

struct CostRow {
  std::string name;
  std::uint64_t macs = 0;
};

struct AssemblyCost {
  std::uint64_t lowrank = 0;
  std::uint64_t dense = 0;
  double ratio = 0.0;  ///< dense / lowrank
};

AssemblyCost assembly_cost(std::uint64_t n, std::uint64_t d_in, std::uint64_t d_out,
                           std::uint64_t r);

struct FlopReport {
  std::size_t height = 0, width = 0, levels = 0;
  std::vector<CostRow> rows;
  std::uint64_t total = 0;
  std::uint64_t cea_generator = 0;
  AssemblyCost cea_assembly;  ///< summed over all CEA blocks and targets
};

/// Analytic forward MAC count, mirroring every MAC-bearing primitive in `restore`.
FlopReport flop_report(const BackboneConfig& cfg, std::size_t height, std::size_t width);

}  // namespace cea
