#include "dip/ste.hpp"

#include "dip/layers.hpp"

namespace dip::ste {

Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "max") return Pooling::kMax;
  throw ShapeError("pooling must be mean or max; got '" + s + "'");
}

std::string to_string(Pooling p) { return p == Pooling::kMean ? "mean" : "max"; }

void STEConfig::validate() const {
  if (units < 1) throw ShapeError("units must be >= 1");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ShapeError("heads must divide the embedding width E");
  }
  if (frames < 1) throw ShapeError("T must be >= 1");
  if (patch_size == 0 || frame_size % patch_size != 0 || frame_size == 0) {
    throw ShapeError("frame_size (M) must be divisible by patch_size (P)");
  }
}

std::string spatial_prefix(std::size_t unit, std::size_t layer) {
  return "ste.unit" + std::to_string(unit) + ".spatial" + std::to_string(layer);
}

std::string temporal_prefix(const STEConfig& cfg, std::size_t unit, std::size_t layer) {
  std::string p = "ste.unit" + std::to_string(unit) + ".temporal";
  if (cfg.temporal_layers_per_unit > 1) p += std::to_string(layer);
  return p;
}

void init_params(ParamStore& store, const STEConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t e = cfg.embed_dim;
  const std::size_t patch_dim = 3 * cfg.patch_size * cfg.patch_size;
  layers::init_linear(store, "embed.patch", patch_dim, e, rng);
  std::normal_distribution<double> small(0.0, 0.02);
  auto randn = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = small(rng);
    return t;
  };
  store.add("embed.cls", randn({1, e}));
  store.add("embed.spatial", randn({cfg.tokens_per_frame(), e}));
  store.add("embed.temporal", randn({cfg.frames, e}));
  for (std::size_t u = 0; u < cfg.units; ++u) {
    for (std::size_t l = 0; l < cfg.spatial_layers_per_unit; ++l) {
      layers::init_self_attention_block(store, spatial_prefix(u, l), e, cfg.mlp_ratio * e, rng);
    }
    for (std::size_t l = 0; l < cfg.temporal_layers_per_unit; ++l) {
      layers::init_self_attention_block(store, temporal_prefix(cfg, u, l), e, cfg.mlp_ratio * e, rng);
    }
  }
}

TokenTensor tokenize(Graph& g, const Tensor& frames, const STEConfig& cfg, const ParamStore& store) {
  if (frames.rank() != 4 || frames.dim(3) != 3 || frames.dim(1) != frames.dim(2)) {
    throw ShapeError("tokenize: expected (T, M, M, 3) frames, got " + shape_string(frames.shape()));
  }
  const std::size_t t_count = frames.dim(0);
  const std::size_t m = frames.dim(1);
  const std::size_t p = cfg.patch_size;
  if (p == 0 || m % p != 0) throw ShapeError("tokenize: frame size not divisible by patch size");
  if (m != cfg.frame_size || t_count != cfg.frames) {
    throw ShapeError("tokenize: clip shape does not match the encoder configuration");
  }
  const std::size_t l = m / p;
  const std::size_t patch_dim = 3 * p * p;

  Tensor patches({t_count * l * l, patch_dim});
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < l; ++j) {
        const std::size_t row = (t * l + i) * l + j;
        std::size_t col = 0;
        for (std::size_t pr = 0; pr < p; ++pr)
          for (std::size_t pc = 0; pc < p; ++pc)
            for (std::size_t ch = 0; ch < 3; ++ch)
              patches.at(row, col++) = 2.0 * frames[((t * m + i * p + pr) * m + j * p + pc) * 3 + ch] - 1.0;
      }

  const Var embedded = layers::linear(g, store, "embed.patch", g.constant(std::move(patches)));
  const Var stacked = ad::concat_rows({g.param(store, "embed.cls"), embedded});

  const std::size_t s_count = l * l + 1;
  std::vector<std::size_t> layout, spatial, temporal;
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t s = 0; s < s_count; ++s) {
      layout.push_back(s == 0 ? 0 : 1 + t * l * l + (s - 1));
      spatial.push_back(s);
      temporal.push_back(t);
    }
  Var tokens = ad::gather_rows(stacked, std::move(layout));
  tokens = ad::add(tokens, ad::gather_rows(g.param(store, "embed.spatial"), std::move(spatial)));
  tokens = ad::add(tokens, ad::gather_rows(g.param(store, "embed.temporal"), std::move(temporal)));
  return {tokens, t_count, l};
}

TokenTensor ste_forward(Graph& g, const TokenTensor& x, const STEConfig& cfg, const ParamStore& store) {
  if (x.grid != cfg.grid() || x.frames != cfg.frames ||
      x.tokens.value().cols() != cfg.embed_dim ||
      x.tokens.value().rows() != x.frames * x.tokens_per_frame()) {
    throw ShapeError("ste_forward: token tensor does not match the encoder configuration");
  }
  const std::size_t t_count = x.frames;
  const std::size_t s_count = x.tokens_per_frame();
  const std::size_t content = s_count - 1;

  std::vector<ad::AttentionGroup> per_frame(t_count);
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t s = 0; s < s_count; ++s) {
      per_frame[t].query_rows.push_back(x.row(t, s));
      per_frame[t].key_rows.push_back(x.row(t, s));
    }

  // Temporal layers run on the content rows only, gathered as t * L*L + p.
  std::vector<std::size_t> content_rows, class_rows, reassemble;
  for (std::size_t t = 0; t < t_count; ++t) {
    class_rows.push_back(x.row(t, 0));
    for (std::size_t s = 1; s < s_count; ++s) content_rows.push_back(x.row(t, s));
  }
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t s = 0; s < s_count; ++s)
      reassemble.push_back(s == 0 ? t : t_count + t * content + (s - 1));
  std::vector<ad::AttentionGroup> per_slot(content);
  for (std::size_t p = 0; p < content; ++p)
    for (std::size_t t = 0; t < t_count; ++t) {
      per_slot[p].query_rows.push_back(t * content + p);
      per_slot[p].key_rows.push_back(t * content + p);
    }

  Var z = x.tokens;
  for (std::size_t u = 0; u < cfg.units; ++u) {
    for (std::size_t l = 0; l < cfg.spatial_layers_per_unit; ++l) {
      z = layers::self_attention_block(g, store, spatial_prefix(u, l), z, cfg.heads, per_frame);
    }
    for (std::size_t l = 0; l < cfg.temporal_layers_per_unit; ++l) {
      const Var cls = ad::gather_rows(z, class_rows);
      Var body = ad::gather_rows(z, content_rows);
      body = layers::self_attention_block(g, store, temporal_prefix(cfg, u, l), body, cfg.heads, per_slot);
      z = ad::gather_rows(ad::concat_rows({cls, body}), reassemble);
    }
  }
  return {z, x.frames, x.grid};
}

std::pair<DirectionalSequence, DirectionalSequence> directional_pool(const TokenTensor& z,
                                                                     Pooling pooling) {
  const std::size_t t_count = z.frames;
  const std::size_t l = z.grid;
  const auto mode = pooling == Pooling::kMean ? ad::Reduce::kMean : ad::Reduce::kMax;

  auto pool = [&](bool horizontal) {
    // Stage 1 (spatial): T class rows, then T*L line pools indexed t*L + line.
    std::vector<std::vector<std::size_t>> spatial;
    for (std::size_t t = 0; t < t_count; ++t) spatial.push_back({z.row(t, 0)});
    for (std::size_t t = 0; t < t_count; ++t)
      for (std::size_t line = 0; line < l; ++line) {
        std::vector<std::size_t> rows;
        for (std::size_t k = 0; k < l; ++k) {
          const std::size_t i = horizontal ? line : k;
          const std::size_t j = horizontal ? k : line;
          rows.push_back(z.row(t, 1 + i * l + j));
        }
        spatial.push_back(std::move(rows));
      }
    // Stage 2 (temporal).
    std::vector<std::vector<std::size_t>> temporal(l + 1);
    for (std::size_t t = 0; t < t_count; ++t) {
      temporal[0].push_back(t);
      for (std::size_t line = 0; line < l; ++line) temporal[1 + line].push_back(t_count + t * l + line);
    }
    const Var stage1 = ad::group_reduce(z.tokens, spatial, mode);
    return ad::group_reduce(stage1, temporal, mode);
  };

  return {DirectionalSequence{pool(true), Direction::kHorizontal},
          DirectionalSequence{pool(false), Direction::kVertical}};
}

}  // namespace dip::ste
