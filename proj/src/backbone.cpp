#include "cea/backbone.hpp"

#include <cmath>

#include "cea/ops.hpp"

namespace cea {

std::size_t BackboneConfig::levels_for(std::size_t height, std::size_t width) const {
  if (levels) return *levels;
  return (height < 32 || width < 32) ? 2 : 3;
}

void BackboneConfig::validate(std::size_t lv) const {
  if (embed_dim < 1) throw ConfigError("backbone.embed_dim must be >= 1");
  if (lv < 1) throw ConfigError("backbone needs at least one downsampling level");
  if (encoder_blocks.size() < lv || decoder_blocks.size() < lv)
    throw ConfigError("backbone: " + std::to_string(lv) +
                      " levels need that many encoder and decoder stages");
  if (heads.size() < lv + 1)
    throw ConfigError("backbone.heads needs an entry per level including the latent level");
  if (ffn_ratio < 1) throw ConfigError("backbone.ffn_ratio must be >= 1");
  for (std::size_t l = 0; l <= lv; ++l) {
    if (heads[l] < 1 || channels(l) % heads[l] != 0)
      throw ConfigError("backbone: heads[" + std::to_string(l) + "]=" + std::to_string(heads[l]) +
                        " does not divide " + std::to_string(channels(l)) + " channels");
  }
  if (cea_enabled) {
    cea.validate();
    if (cea.source == FactorSource::Dynamic && cea.generator == Generator::QueryProbe)
      for (std::size_t l = 0; l < lv; ++l)
        if (channels(l) % cea.adapter_heads != 0)
          throw ConfigError("adapter heads must divide decoder widths");
  }
}

std::vector<CeaSlot> cea_placement(const BackboneConfig& cfg, std::size_t levels) {
  std::vector<CeaSlot> slots;
  if (!cfg.cea_enabled) return slots;
  const auto first = cfg.decoder_blocks.size() - levels;
  for (std::size_t s = 0; s < levels; ++s)
    for (std::size_t b = 0; b < cfg.decoder_blocks[first + s]; b += 2) slots.push_back({s, b});
  return slots;
}

BlockWeights init_block(ParamStore& store, const std::string& prefix, std::size_t channels,
                        std::size_t heads, std::size_t ffn_ratio, std::uint64_t seed) {
  const auto c = channels, hidden = channels * ffn_ratio;
  BlockWeights w;
  w.heads = heads;
  w.norm1 = store.create(prefix + ".norm1", {c}, Init::Ones, seed);
  w.wq = store.create(prefix + ".attn.wq", {c, c}, Init::Uniform, seed, c);
  w.wk = store.create(prefix + ".attn.wk", {c, c}, Init::Uniform, seed, c);
  w.wv = store.create(prefix + ".attn.wv", {c, c}, Init::Uniform, seed, c);
  w.wo = store.create(prefix + ".attn.wo", {c, c}, Init::Uniform, seed, c);
  w.norm2 = store.create(prefix + ".norm2", {c}, Init::Ones, seed);
  w.w1 = store.create(prefix + ".ffn.w1", {c, hidden}, Init::Uniform, seed, c);
  w.w2 = store.create(prefix + ".ffn.w2", {hidden, c}, Init::Uniform, seed, hidden);
  return w;
}

namespace {

Tensor project(const Tensor& h, const Tensor& weight, Target target, const CeaContext* ctx) {
  Tensor base = matmul(h, weight);
  if (!ctx || !ctx->cfg->injects(target)) return base;
  return inject(base, assemble_residual(h, ctx->factors.at(target), *ctx->cfg));
}

void check_context(const CeaContext& ctx) {
  if (!ctx.cfg) throw ConfigError("CEA context without configuration");
  bool match = ctx.factors.size() == ctx.cfg->targets.size();
  for (auto t : ctx.cfg->targets) match = match && ctx.factors.count(t) != 0;
  if (!match) throw ConfigError("factor targets do not match configured injection targets");
}

}  // namespace

Tensor transformer_block_forward(const Tensor& x, const BlockWeights& w, const CeaContext* ctx) {
  if (x.rank() != 2 || x.dim(1) != w.wq.dim(0))
    throw DimensionError("block input " + shape_str(x.shape()) + " does not match width " +
                         std::to_string(w.wq.dim(0)));
  if (ctx) check_context(*ctx);
  const auto c = x.dim(1);
  const auto dh = c / w.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor h = layer_norm(x, w.norm1);
  Tensor q = project(h, w.wq, Target::Q, ctx);
  Tensor k = project(h, w.wk, Target::K, ctx);
  Tensor v = project(h, w.wv, Target::V, ctx);
  Tensor mixed;
  if (w.heads == 1) {
    mixed = matmul(softmax(scale(matmul(q, k, false, true), inv_sqrt), 1), v);
  } else {
    std::vector<Tensor> outs;
    for (std::size_t i = 0; i < w.heads; ++i) {
      Tensor qh = slice(q, 1, i * dh, (i + 1) * dh);
      Tensor kh = slice(k, 1, i * dh, (i + 1) * dh);
      Tensor vh = slice(v, 1, i * dh, (i + 1) * dh);
      outs.push_back(matmul(softmax(scale(matmul(qh, kh, false, true), inv_sqrt), 1), vh));
    }
    mixed = concat(outs, 1);
  }
  Tensor x1 = add(x, matmul(mixed, w.wo));

  Tensor h2 = layer_norm(x1, w.norm2);
  Tensor f = gelu(project(h2, w.w1, Target::FfnIn, ctx));
  return add(x1, matmul(f, w.w2));
}

FactorMap generate_factors(const Tensor& features, const CeaModule& module, const CeaConfig& cfg) {
  if (module.source == FactorSource::Static) return static_factor_map(module.fixed, cfg);
  if (module.generator == Generator::GapMlp) return generate_gap_mlp(features, module.gap, cfg);
  return generate_dynamic(features, module.adapter, cfg);
}

namespace {

Stage init_stage(ParamStore& store, const std::string& prefix, std::size_t count,
                 std::size_t channels, std::size_t heads, std::size_t ffn_ratio,
                 std::uint64_t seed) {
  Stage s;
  for (std::size_t b = 0; b < count; ++b) {
    s.blocks.push_back(init_block(store, prefix + "." + std::to_string(b), channels, heads,
                                  ffn_ratio, seed));
    s.cea.emplace_back();
  }
  return s;
}

CeaModule init_cea_module(ParamStore& store, const std::string& prefix, std::size_t channels,
                          const BackboneConfig& cfg, std::uint64_t seed) {
  const auto dims = block_target_dims(channels, cfg.ffn_ratio);
  CeaModule m;
  m.source = cfg.cea.source;
  m.generator = cfg.cea.generator;
  if (m.source == FactorSource::Static) {
    m.fixed = init_static(store, prefix, cfg.cea, dims, seed);
  } else if (m.generator == Generator::GapMlp) {
    m.gap = init_gap_mlp(store, prefix, channels, cfg.cea, dims, seed);
  } else {
    m.adapter = init_adapter(store, prefix, channels, cfg.cea, dims, seed);
  }
  return m;
}

Tensor run_stage(Tensor feat, const Stage& stage, const CeaConfig& cea) {
  const auto h = feat.dim(0), w = feat.dim(1), c = feat.dim(2);
  Tensor tokens = reshape(feat, {h * w, c});
  for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
    if (stage.cea[b]) {
      CeaContext ctx;
      ctx.cfg = &cea;
      ctx.factors = generate_factors(reshape(tokens, {h, w, c}), *stage.cea[b], cea);
      tokens = transformer_block_forward(tokens, stage.blocks[b], &ctx);
    } else {
      tokens = transformer_block_forward(tokens, stage.blocks[b]);
    }
  }
  return reshape(tokens, {h, w, c});
}

}  // namespace

RestorerState make_restorer(const BackboneConfig& cfg, std::size_t height, std::size_t width,
                            std::uint64_t seed) {
  const auto lv = cfg.levels_for(height, width);
  cfg.validate(lv);
  RestorerState st;
  st.config = cfg;
  st.levels = lv;
  st.seed = seed;
  auto& ps = st.params;
  const auto c0 = cfg.channels(0);
  st.embed_pw = ps.create("embed.pw", {3, c0}, Init::Uniform, seed, 3);
  st.embed_dw = ps.create("embed.dw", {3, 3, c0}, Init::Uniform, seed, 9);
  for (std::size_t l = 0; l < lv; ++l) {
    st.encoder.push_back(init_stage(ps, "enc" + std::to_string(l), cfg.encoder_blocks[l],
                                    cfg.channels(l), cfg.heads[l], cfg.ffn_ratio, seed));
    st.down.push_back(ps.create("down" + std::to_string(l), {cfg.channels(l), cfg.channels(l + 1)},
                                Init::Uniform, seed, cfg.channels(l)));
  }
  st.latent = init_stage(ps, "latent", cfg.latent_blocks, cfg.channels(lv), cfg.heads[lv],
                         cfg.ffn_ratio, seed);
  const auto first = cfg.decoder_blocks.size() - lv;
  for (std::size_t s = 0; s < lv; ++s) {
    const auto level = lv - 1 - s;
    const auto c = cfg.channels(level);
    const auto tag = std::to_string(s);
    st.up.push_back(
        ps.create("up" + tag, {cfg.channels(level + 1), c}, Init::Uniform, seed, 2 * c));
    st.fuse.push_back(ps.create("fuse" + tag, {2 * c, c}, Init::Uniform, seed, 2 * c));
    st.decoder.push_back(init_stage(ps, "dec" + tag, cfg.decoder_blocks[first + s], c,
                                    cfg.heads[level], cfg.ffn_ratio, seed));
  }
  for (const auto& slot : cea_placement(cfg, lv)) {
    const auto c = cfg.channels(lv - 1 - slot.stage);
    st.decoder[slot.stage].cea[slot.block] = init_cea_module(
        ps, "dec" + std::to_string(slot.stage) + "." + std::to_string(slot.block) + ".cea", c, cfg,
        seed);
  }
  st.refinement =
      init_stage(ps, "refine", cfg.refinement_blocks, c0, cfg.heads[0], cfg.ffn_ratio, seed);
  st.head = ps.create("head.pw", {c0, 3}, Init::Zeros, seed);
  return st;
}

Tensor restore(const Tensor& image, const RestorerState& st) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw DimensionError("restore expects an [H x W x 3] image, got " + shape_str(image.shape()));
  const auto h = image.dim(0), w = image.dim(1);
  const std::size_t div = std::size_t{1} << st.levels;
  if (h % div != 0 || w % div != 0)
    throw DimensionError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by " + std::to_string(div));
  const auto& cea = st.config.cea;
  Tensor feat = depthwise_conv2d(pointwise_conv2d(image, st.embed_pw), st.embed_dw, 1, 1);
  std::vector<Tensor> skips;
  for (std::size_t l = 0; l < st.levels; ++l) {
    feat = run_stage(feat, st.encoder[l], cea);
    skips.push_back(feat);
    feat = pointwise_conv2d(feat, st.down[l], 2);
  }
  feat = run_stage(feat, st.latent, cea);
  for (std::size_t s = 0; s < st.levels; ++s) {
    const auto level = st.levels - 1 - s;
    Tensor up = pointwise_conv2d(upsample_nearest(feat, 2), st.up[s]);
    feat = pointwise_conv2d(concat({up, skips[level]}, 2), st.fuse[s]);
    feat = run_stage(feat, st.decoder[s], cea);
  }
  feat = run_stage(feat, st.refinement, cea);
  return add(image, pointwise_conv2d(feat, st.head));
}

AssemblyCost assembly_cost(std::uint64_t n, std::uint64_t d_in, std::uint64_t d_out,
                           std::uint64_t r) {
  AssemblyCost c;
  c.lowrank = lowrank_assembly_macs(n, d_in, d_out, r);
  c.dense = dense_projection_macs(n, d_in, d_out);
  c.ratio = c.lowrank ? static_cast<double>(c.dense) / static_cast<double>(c.lowrank) : 0.0;
  return c;
}

namespace {

std::uint64_t block_macs(std::uint64_t n, std::uint64_t c, std::uint64_t ffn_ratio) {
  const auto hidden = c * ffn_ratio;
  return 3 * n * c * c   // q, k, v
         + n * n * c     // scores, summed over heads
         + n * n * c     // attention-weighted values
         + n * c * c     // output projection
         + n * c * hidden + n * hidden * c;
}

std::uint64_t probe_macs(std::uint64_t r, std::uint64_t m, std::uint64_t c) {
  return r * c * c + 2 * m * c * c + 2 * r * m * c + r * c * c;
}

}  // namespace

FlopReport flop_report(const BackboneConfig& cfg, std::size_t height, std::size_t width) {
  FlopReport rep;
  rep.height = height;
  rep.width = width;
  rep.levels = cfg.levels_for(height, width);
  const auto lv = rep.levels;
  cfg.validate(lv);
  auto row = [&](std::string name, std::uint64_t macs) {
    rep.rows.push_back({std::move(name), macs});
    rep.total += macs;
  };
  auto tokens = [&](std::size_t level) {
    return static_cast<std::uint64_t>(height >> level) * (width >> level);
  };
  const std::uint64_t c0 = cfg.channels(0);
  const std::uint64_t r = cfg.cea.rank;
  row("embed", tokens(0) * 3 * c0 + tokens(0) * c0 * 9);
  for (std::size_t l = 0; l < lv; ++l) {
    for (std::size_t b = 0; b < cfg.encoder_blocks[l]; ++b)
      row("enc" + std::to_string(l) + "." + std::to_string(b),
          block_macs(tokens(l), cfg.channels(l), cfg.ffn_ratio));
    row("down" + std::to_string(l), tokens(l + 1) * cfg.channels(l) * cfg.channels(l + 1));
  }
  for (std::size_t b = 0; b < cfg.latent_blocks; ++b)
    row("latent." + std::to_string(b), block_macs(tokens(lv), cfg.channels(lv), cfg.ffn_ratio));

  const auto slots = cea_placement(cfg, lv);
  const auto first = cfg.decoder_blocks.size() - lv;
  for (std::size_t s = 0; s < lv; ++s) {
    const auto level = lv - 1 - s;
    const std::uint64_t c = cfg.channels(level);
    const auto n = tokens(level);
    const auto tag = std::to_string(s);
    row("up" + tag, n * cfg.channels(level + 1) * c);
    row("fuse" + tag, n * 2 * c * c);
    for (std::size_t b = 0; b < cfg.decoder_blocks[first + s]; ++b) {
      const auto name = "dec" + tag + "." + std::to_string(b);
      row(name, block_macs(n, c, cfg.ffn_ratio));
      bool equipped = false;
      for (const auto& sl : slots) equipped = equipped || (sl.stage == s && sl.block == b);
      if (!equipped) continue;
      const auto dims = block_target_dims(c, cfg.ffn_ratio);
      std::uint64_t gen = 0;
      if (cfg.cea.source == FactorSource::Dynamic && cfg.cea.generator == Generator::QueryProbe) {
        const std::uint64_t s_c = cfg.cea.condense_stride;
        const std::uint64_t hc = ((height >> level) - 1) / s_c + 1;
        const std::uint64_t wc = ((width >> level) - 1) / s_c + 1;
        const std::uint64_t m = hc * wc;
        gen += m * c * 9 + m * c * c;  // condensation
        gen += 2 * probe_macs(r, m, c);
        for (auto t : cfg.cea.targets) gen += r * c * dims.at(t).first + r * c * dims.at(t).second;
      } else if (cfg.cea.source == FactorSource::Dynamic) {
        gen += c * 2 * c;
        for (auto t : cfg.cea.targets)
          gen += 2 * c * dims.at(t).first * r + 2 * c * r * dims.at(t).second;
      }
      if (gen) row(name + ".cea_generator", gen);
      rep.cea_generator += gen;
      for (auto t : cfg.cea.targets) {
        const auto cost = assembly_cost(n, dims.at(t).first, dims.at(t).second, r);
        row(name + ".cea_assembly." + to_string(t), cost.lowrank);
        rep.cea_assembly.lowrank += cost.lowrank;
        rep.cea_assembly.dense += cost.dense;
      }
    }
  }
  for (std::size_t b = 0; b < cfg.refinement_blocks; ++b)
    row("refine." + std::to_string(b), block_macs(tokens(0), c0, cfg.ffn_ratio));
  row("head", tokens(0) * c0 * 3);
  if (rep.cea_assembly.lowrank)
    rep.cea_assembly.ratio = static_cast<double>(rep.cea_assembly.dense) /
                             static_cast<double>(rep.cea_assembly.lowrank);
  return rep;
}

}  // namespace cea
