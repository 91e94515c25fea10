#include <doctest.h>

#include <cmath>

#include "dip/gradcheck.hpp"
#include "dip/layers.hpp"
#include "dip/rng.hpp"
#include "dip/ste.hpp"
#include "test_support.hpp"

using namespace dip;
using namespace dip::ste;
using dip::test::random_tensor;

namespace {

STEConfig desk() { return STEConfig{}; }

ParamStore make_params(const STEConfig& cfg, std::uint64_t seed = 1) {
  ParamStore store;
  Rng rng = make_rng(seed, {});
  init_params(store, cfg, rng);
  return store;
}

void zero_all_outputs(ParamStore& store, const STEConfig& cfg) {
  for (std::size_t u = 0; u < cfg.units; ++u) {
    for (std::size_t l = 0; l < cfg.spatial_layers_per_unit; ++l)
      layers::zero_output_projections(store, spatial_prefix(u, l));
    for (std::size_t l = 0; l < cfg.temporal_layers_per_unit; ++l)
      layers::zero_output_projections(store, temporal_prefix(cfg, u, l));
  }
}

Tensor random_clip(std::size_t t, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor({t, m, m, 3}, rng, 0.0, 1.0);
}

TokenTensor tokens_from(Graph& g, const Tensor& rows, std::size_t frames, std::size_t grid) {
  return TokenTensor{g.constant(rows), frames, grid};
}

}  // namespace

TEST_CASE("tokenize layout") {
  STEConfig cfg = desk();
  CHECK(cfg.grid() == 4);
  CHECK(cfg.tokens_per_frame() == 17);
  STEConfig vit = cfg;
  vit.frame_size = 224;
  vit.patch_size = 16;
  CHECK(vit.grid() == 14);
  CHECK(vit.tokens_per_frame() == 197);
  STEConfig bad = cfg;
  bad.patch_size = 5;
  CHECK_THROWS_AS(bad.validate(), ShapeError);

  ParamStore store = make_params(cfg);
  Graph g(false);
  const TokenTensor x = tokenize(g, random_clip(4, 32, 2), cfg, store);
  CHECK(x.tokens.value().shape() == Shape{4 * 17, 32});
  CHECK(x.grid == 4);
  CHECK(x.frames == 4);
  CHECK_THROWS_AS(tokenize(g, Tensor({4, 32, 30, 3}), cfg, store), ShapeError);
}

TEST_CASE("zero clip with zero embedding gives positional terms") {
  const STEConfig cfg = desk();
  ParamStore store = make_params(cfg);
  store.value("embed.patch.weight").fill(0.0);
  store.value("embed.patch.bias").fill(0.0);
  store.value("embed.cls").fill(0.0);
  Graph g(false);
  const TokenTensor x = tokenize(g, Tensor({4, 32, 32, 3}, 0.0), cfg, store);
  const Tensor& es = store.value("embed.spatial");
  const Tensor& et = store.value("embed.temporal");
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t s = 0; s < 17; ++s)
      for (std::size_t c = 0; c < 32; ++c) REQUIRE(x.tokens.value().at(x.row(t, s), c) == es.at(s, c) + et.at(t, c));
}

TEST_CASE("patch order follows row-major grid") {
  STEConfig cfg = desk();
  ParamStore store = make_params(cfg);
  store.value("embed.spatial").fill(0.0);
  store.value("embed.temporal").fill(0.0);
  store.value("embed.patch.bias").fill(0.0);
  // Lit pixel inside patch (i=1, j=2) of frame 3.
  Tensor frames({4, 32, 32, 3}, 0.5);
  frames[((3 * 32 + 9) * 32 + 20) * 3] = 1.0;
  Graph g(false);
  const TokenTensor x = tokenize(g, frames, cfg, store);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t s = 1; s < 17; ++s) {
      double norm = 0.0;
      for (std::size_t c = 0; c < 32; ++c) norm += std::abs(x.tokens.value().at(x.row(t, s), c));
      if (t == 3 && s == 1 + 1 * 4 + 2) {
        CHECK(norm > 0.0);
      } else {
        CHECK(norm == 0.0);
      }
    }
}

TEST_CASE("encoder residual identity") {
  const STEConfig cfg = desk();
  ParamStore store = make_params(cfg, 3);
  zero_all_outputs(store, cfg);
  Graph g(false);
  const TokenTensor x = tokenize(g, random_clip(4, 32, 4), cfg, store);
  const TokenTensor z = ste_forward(g, x, cfg, store);
  CHECK(z.tokens.value().shape() == x.tokens.value().shape());
  CHECK(max_abs_diff(z.tokens.value(), x.tokens.value()) <= 1e-12);
}

TEST_CASE("single frame temporal attention returns its value path") {
  STEConfig cfg = desk();
  cfg.frames = 1;
  cfg.spatial_layers_per_unit = 0;
  cfg.units = 1;
  ParamStore store = make_params(cfg, 5);
  // Drop the MLP so the layer is x + out(v(ln1(x))).
  store.value(temporal_prefix(cfg, 0, 0) + ".mlp.fc2.weight").fill(0.0);
  store.value(temporal_prefix(cfg, 0, 0) + ".mlp.fc2.bias").fill(0.0);
  Graph g(false);
  const TokenTensor x = tokenize(g, random_clip(1, 32, 6), cfg, store);
  const TokenTensor z = ste_forward(g, x, cfg, store);
  const std::string p = temporal_prefix(cfg, 0, 0);
  const Var h = layers::layer_norm(g, store, p + ".ln1", x.tokens);
  const Var expect = ad::add(x.tokens, layers::linear(g, store, p + ".out", layers::linear(g, store, p + ".v", h)));
  for (std::size_t s = 1; s < 17; ++s)
    for (std::size_t c = 0; c < 32; ++c)
      CHECK(std::abs(z.tokens.value().at(s, c) - expect.value().at(s, c)) <= 1e-12);
  for (std::size_t c = 0; c < 32; ++c) CHECK(z.tokens.value().at(0, c) == x.tokens.value().at(0, c));
}

TEST_CASE("class tokens bypass temporal layers") {
  STEConfig cfg = desk();
  cfg.spatial_layers_per_unit = 0;
  cfg.units = 2;
  ParamStore store = make_params(cfg, 7);
  Graph g(false);
  const TokenTensor x = tokenize(g, random_clip(4, 32, 8), cfg, store);
  const TokenTensor z = ste_forward(g, x, cfg, store);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 32; ++c) CHECK(z.tokens.value().at(z.row(t, 0), c) == x.tokens.value().at(x.row(t, 0), c));
  // Content tokens do change.
  CHECK(max_abs_diff(z.tokens.value(), x.tokens.value()) > 1e-3);
}

TEST_CASE("frame permutation equivariance without temporal embedding") {
  const STEConfig cfg = desk();
  ParamStore store = make_params(cfg, 9);
  store.value("embed.temporal").fill(0.0);
  const Tensor clip = random_clip(4, 32, 10);
  Tensor swapped = clip;
  const std::size_t frame = 32 * 32 * 3;
  for (std::size_t k = 0; k < frame; ++k) std::swap(swapped[0 * frame + k], swapped[2 * frame + k]);

  Graph g(false);
  const Tensor a = ste_forward(g, tokenize(g, clip, cfg, store), cfg, store).tokens.value();
  const Tensor b = ste_forward(g, tokenize(g, swapped, cfg, store), cfg, store).tokens.value();
  const std::size_t perm[4] = {2, 1, 0, 3};
  double worst = 0.0;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t s = 0; s < 17; ++s)
      for (std::size_t c = 0; c < 32; ++c)
        worst = std::max(worst, std::abs(b.at(perm[t] * 17 + s, c) - a.at(t * 17 + s, c)));
  CHECK(worst <= 1e-12);
}

TEST_CASE("directional pooling") {
  const std::size_t tf = 3, l = 4, e = 5, per = l * l + 1;
  Graph g(false);

  SUBCASE("constant field") {
    std::mt19937_64 rng(1);
    const Tensor v = random_tensor({1, e}, rng);
    Tensor rows({tf * per, e});
    for (std::size_t r = 0; r < tf * per; ++r)
      for (std::size_t c = 0; c < e; ++c) rows.at(r, c) = v.at(0, c);
    for (Pooling p : {Pooling::kMean, Pooling::kMax}) {
      const auto [zh, zv] = directional_pool(tokens_from(g, rows, tf, l), p);
      CHECK(zh.tokens.value().shape() == Shape{l + 1, e});
      CHECK(zh.direction == Direction::kHorizontal);
      CHECK(zv.direction == Direction::kVertical);
      for (std::size_t s = 0; s <= l; ++s)
        for (std::size_t c = 0; c < e; ++c) {
          CHECK(std::abs(zh.tokens.value().at(s, c) - v.at(0, c)) <= 1e-15);
          CHECK(std::abs(zv.tokens.value().at(s, c) - v.at(0, c)) <= 1e-15);
        }
    }
  }
  SUBCASE("row index field") {
    Tensor rows({tf * per, e}, 0.0);
    for (std::size_t t = 0; t < tf; ++t)
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < l; ++j)
          for (std::size_t c = 0; c < e; ++c) rows.at(t * per + 1 + i * l + j, c) = static_cast<double>(i + 1);
    const auto [zh, zv] = directional_pool(tokens_from(g, rows, tf, l), Pooling::kMean);
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t c = 0; c < e; ++c) {
        CHECK(zh.tokens.value().at(1 + i, c) == doctest::Approx(i + 1.0).epsilon(1e-14));
        CHECK(zv.tokens.value().at(1 + i, c) == doctest::Approx((l + 1) / 2.0).epsilon(1e-14));
      }
  }
  SUBCASE("max spike") {
    Tensor rows({tf * per, e}, 0.0);
    rows.at(1 * per + 1 + 2 * l + 1, 3) = 9.0;
    const auto [zh, zv] = directional_pool(tokens_from(g, rows, tf, l), Pooling::kMax);
    for (std::size_t s = 0; s <= l; ++s)
      for (std::size_t c = 0; c < e; ++c) {
        CHECK(zh.tokens.value().at(s, c) == (s == 3 && c == 3 ? 9.0 : 0.0));
        CHECK(zv.tokens.value().at(s, c) == (s == 2 && c == 3 ? 9.0 : 0.0));
      }
  }
  SUBCASE("class slot pools class tokens") {
    Tensor rows({tf * per, e}, 0.0);
    for (std::size_t t = 0; t < tf; ++t) rows.at(t * per, 0) = static_cast<double>(t);
    const auto [zh, zv] = directional_pool(tokens_from(g, rows, tf, l), Pooling::kMean);
    CHECK(zh.tokens.value().at(0, 0) == doctest::Approx(1.0));
    CHECK(zv.tokens.value().at(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("mean pooling is linear") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({tf * per, e}, rng), y = random_tensor({tf * per, e}, rng);
    Tensor mix = x;
    for (std::size_t k = 0; k < mix.size(); ++k) mix[k] = 2.5 * x[k] - 0.75 * y[k];
    const auto px = directional_pool(tokens_from(g, x, tf, l), Pooling::kMean);
    const auto py = directional_pool(tokens_from(g, y, tf, l), Pooling::kMean);
    const auto pm = directional_pool(tokens_from(g, mix, tf, l), Pooling::kMean);
    for (std::size_t k = 0; k < (l + 1) * e; ++k) {
      CHECK(std::abs(pm.first.tokens.value()[k] - (2.5 * px.first.tokens.value()[k] - 0.75 * py.first.tokens.value()[k])) <= 1e-12);
      CHECK(std::abs(pm.second.tokens.value()[k] - (2.5 * px.second.tokens.value()[k] - 0.75 * py.second.tokens.value()[k])) <= 1e-12);
    }
  }
}

TEST_CASE("encoder gradients match central differences") {
  STEConfig cfg;
  cfg.units = 1;
  cfg.spatial_layers_per_unit = 1;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.frames = 2;
  cfg.frame_size = 8;
  cfg.patch_size = 4;
  const ParamStore store = make_params(cfg, 11);
  const Tensor clip = random_clip(2, 8, 12);
  auto loss = [&](Graph& g, const ParamStore& p) {
    const TokenTensor z = ste_forward(g, tokenize(g, clip, cfg, p), cfg, p);
    const auto [zh, zv] = directional_pool(z, Pooling::kMean);
    return ad::add(test::weighted_sum(g, zh.tokens, 1), test::weighted_sum(g, zv.tokens, 2));
  };
  const auto report = finite_diff_check(loss, store, {.eps = 1e-5});
  CAPTURE(report.worst_param);
  CHECK(report.elements_checked == store.element_count());
  CHECK(report.max_rel_error <= 1e-4);
}
