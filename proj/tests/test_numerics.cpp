#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dip/checkpoint.hpp"
#include "dip/ops.hpp"
#include "dip/parallel.hpp"
#include "dip/rng.hpp"
#include "test_support.hpp"

using namespace dip;
using dip::test::op_gradcheck;
using dip::test::random_tensor;
using dip::test::weighted_sum;

TEST_CASE("tensor construction and contracts") {
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.at(1, 2) == 6.0);
  CHECK(Tensor::scalar(3.5).item() == 3.5);
  CHECK_THROWS(m.item());
  CHECK(m.reshaped({3, 2}).at(2, 1) == 6.0);
  CHECK_THROWS_AS(m.reshaped({4, 2}), ShapeError);
  Tensor bad = m;
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(require_finite(bad, "t"), NumericalError);
}

TEST_CASE("softmax rows") {
  const Tensor half = softmax_rows(Tensor::matrix(1, 2, {0, 0}));
  CHECK(half.at(0, 0) == 0.5);
  CHECK(half.at(0, 1) == 0.5);

  const Tensor big = softmax_rows(Tensor::matrix(1, 2, {1000, 0}));
  CHECK(big.all_finite());
  CHECK(big.at(0, 0) == 1.0);
  CHECK(big.at(0, 1) >= 0.0);
  CHECK(big.at(0, 1) < 1e-300);

  std::mt19937_64 rng(1);
  const Tensor r = softmax_rows(random_tensor({5, 5}, rng, -5, 5));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(r.at(i, j) >= 0.0);
      s += r.at(i, j);
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }

  CHECK_THROWS_AS(softmax_rows(Tensor({2, 2, 2})), ShapeError);
  Tensor nan = Tensor::matrix(1, 2, {0, 0});
  nan[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(softmax_rows(nan), NumericalError);
}

namespace {

// Three-loop single-head attention.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias) {
  const std::size_t n = q.rows(), e = q.cols();
  Tensor out({n, v.cols()}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < e; ++c) d += q.at(i, c) * k.at(j, c);
      s[j] = d / std::sqrt(static_cast<double>(e)) + bias.at(i, j);
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < v.cols(); ++c) out.at(i, c) += s[j] / z * v.at(j, c);
  }
  return out;
}

}  // namespace

TEST_CASE("biased attention") {
  SUBCASE("single token returns V") {
    const Tensor q = Tensor::matrix(1, 2, {1, 0});
    const Tensor v = Tensor::matrix(1, 2, {0.3, -0.7});
    const Tensor out = biased_attention(q, q, v, Tensor({1, 1}, 0.0));
    CHECK(out.at(0, 0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(out.at(0, 1) == doctest::Approx(-0.7).epsilon(1e-15));
  }
  SUBCASE("saturated bias selects a row of V") {
    std::mt19937_64 rng(2);
    const Tensor q = random_tensor({3, 4}, rng), k = random_tensor({3, 4}, rng), v = random_tensor({3, 4}, rng);
    Tensor bias({3, 3}, -1e6);
    bias.at(0, 2) = 1e6;
    const Tensor out = biased_attention(q, k, v, bias);
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(out.at(0, c) - v.at(2, c)) < 1e-12);
  }
  SUBCASE("matches the loop oracle") {
    std::mt19937_64 rng(3);
    const Tensor q = random_tensor({4, 8}, rng), k = random_tensor({4, 8}, rng), v = random_tensor({4, 8}, rng);
    const Tensor bias = random_tensor({4, 4}, rng);
    CHECK(max_abs_diff(biased_attention(q, k, v, bias), naive_attention(q, k, v, bias)) <= 1e-12);
  }
  SUBCASE("zero bias equals omitted bias bit for bit") {
    std::mt19937_64 rng(4);
    const Tensor q = random_tensor({5, 6}, rng), k = random_tensor({5, 6}, rng), v = random_tensor({5, 6}, rng);
    CHECK(biased_attention(q, k, v, Tensor({5, 5}, 0.0)) == biased_attention(q, k, v));
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(biased_attention(Tensor({2, 3}), Tensor({2, 4}), Tensor({2, 3})), ShapeError);
    CHECK_THROWS_AS(biased_attention(Tensor({2, 3}), Tensor({2, 3}), Tensor({2, 3}), Tensor({3, 3})),
                    ShapeError);
  }
}

TEST_CASE("reverse mode basics") {
  ParamStore store;
  store.add("p", Tensor::matrix(2, 3, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6}));
  SUBCASE("sum gives ones") {
    Graph g;
    g.backward(ad::sum(g.param(store, "p")));
    const Tensor gr = g.grad(g.param(store, "p"));
    for (double v : gr.values()) CHECK(v == 1.0);
  }
  SUBCASE("sum of softmax rows has zero gradient") {
    Graph g;
    g.backward(ad::sum(ad::softmax_rows(g.param(store, "p"))));
    const Tensor gr = g.grad(g.param(store, "p"));
    for (double v : gr.values()) CHECK(std::abs(v) < 1e-15);
  }
  SUBCASE("unreached parameters keep zero gradient") {
    store.add("q", Tensor::matrix(1, 2, {1, 2}));
    Graph g;
    g.param(store, "q");
    g.backward(ad::sum(g.param(store, "p")));
    store.zero_grad();
    g.accumulate_param_grads(store);
    for (double v : store.grad("q").values()) CHECK(v == 0.0);
  }
  SUBCASE("non-trainable leaves receive nothing") {
    Graph g;
    const Var c = g.param(store, "p", false);
    g.backward(ad::sum(ad::mul(c, c)));
    store.zero_grad();
    g.accumulate_param_grads(store);
    for (double v : store.grad("p").values()) CHECK(v == 0.0);
  }
  SUBCASE("errors") {
    Graph empty;
    CHECK_THROWS(empty.backward(Var{&empty, 0}));
    Graph g;
    const Var p = g.param(store, "p");
    CHECK_THROWS_AS(g.backward(p), ShapeError);
    const Var s = ad::sum(p);
    g.backward(s);
    CHECK_THROWS(g.backward(s));
  }
}

TEST_CASE("every op matches central differences") {
  std::mt19937_64 rng(11);
  const double tol = 1e-4;
  for (std::size_t trial = 0; trial < 3; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(3, 16);
    const std::size_t n = dim(rng), m = dim(rng);
    const Tensor x = random_tensor({n, m}, rng);
    const Tensor other = random_tensor({m, n}, rng);
    const Tensor same = random_tensor({n, m}, rng);
    const Tensor proj = random_tensor({m, 3}, rng);
    const Tensor gamma_v = random_tensor({m}, rng);
    const Tensor beta_v = random_tensor({m}, rng);
    CAPTURE(n);
    CAPTURE(m);

    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::matmul(a, g.constant(other))); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::matmul(a, ad::transpose(a))); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::reshape(a, {m, n})); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) {
            const Var w = g.constant(proj);
            const Var b = ad::slice(a, 0, 0, 1, 3);
            return weighted_sum(g, ad::linear(a, w, b));
          }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::add(a, ad::mul(a, a))); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::sub(g.constant(same), ad::scale(a, 3.0))); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::add_scalar(a, 2.0)); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::scale_by(a, ad::slice(a, 0, 0, 1, 1))); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::exp(a)); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::reciprocal(ad::add_scalar(ad::mul(a, a), 0.5))); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::gelu(a)); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::softmax_rows(ad::scale(a, 3.0))); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::log_softmax_rows(a)); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) {
            const Var gamma = g.constant(gamma_v);
            const Var beta = g.constant(beta_v);
            return weighted_sum(g, ad::layer_norm(a, gamma, beta));
          }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::row_normalize(a)); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return ad::mean(ad::mul(a, a)); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) {
            return weighted_sum(g, ad::div_rows(a, ad::add_scalar(ad::row_sum(ad::mul(a, a)), 0.1)));
          }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::gather_rows(a, {n - 1, 0, 0})); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::concat_rows({a, ad::scale(a, 2.0)})); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::concat_cols({a, ad::exp(a)})); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::embed(ad::slice(a, 1, 1, n - 1, m - 1), n + 1, m, 2, 1)); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) {
            return weighted_sum(g, ad::group_reduce(a, {{0, 1}, {n - 1}, {0, n - 1}}, ad::Reduce::kMean));
          }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) {
            return weighted_sum(g, ad::group_reduce(a, {{0, 1}, {1, n - 1}}, ad::Reduce::kMax));
          }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::pairwise_sqdist(a, std::nullopt)); }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) {
            const Var w = ad::exp(ad::slice(a, 0, 0, 1, m));
            return weighted_sum(g, ad::pairwise_sqdist(a, w));
          }) < tol);
    CHECK(op_gradcheck(x, [&](Graph& g, Var a) { return weighted_sum(g, ad::relu(ad::add_scalar(a, 0.05))); }) < tol);
  }
}

TEST_CASE("multi-head attention gradient and grouping") {
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({6, 8}, rng);
  const Tensor wq = random_tensor({8, 8}, rng), wk = random_tensor({8, 8}, rng), wv = random_tensor({8, 8}, rng);
  const Tensor bias = random_tensor({3, 3}, rng);
  std::vector<ad::AttentionGroup> groups{{{0, 1, 2}, {0, 1, 2}}, {{3, 4, 5}, {3, 4, 5}}};
  auto body = [&](Graph& g, Var a) {
    const Var q = ad::matmul(a, g.constant(wq));
    const Var k = ad::matmul(a, g.constant(wk));
    const Var v = ad::matmul(a, g.constant(wv));
    return weighted_sum(g, ad::attention(q, k, v, 2, groups, ad::scale(g.constant(bias), 1.0), 0.5));
  };
  CHECK(op_gradcheck(x, body) < 1e-4);

  SUBCASE("bias gradient") {
    auto on_bias = [&](Graph& g, Var b) {
      const Var xv = g.constant(x);
      return weighted_sum(g, ad::attention(xv, xv, xv, 4, groups, b, 0.3));
    };
    CHECK(op_gradcheck(bias, on_bias) < 1e-4);
  }
  SUBCASE("single head matches the oracle") {
    Graph g(false);
    const Tensor q = random_tensor({4, 8}, rng), k = random_tensor({4, 8}, rng), v = random_tensor({4, 8}, rng);
    const Tensor b = random_tensor({4, 4}, rng);
    ad::AttentionGroup all{{0, 1, 2, 3}, {0, 1, 2, 3}};
    const Var out = ad::attention(g.constant(q), g.constant(k), g.constant(v), 1, {all}, g.constant(b),
                                  1.0 / std::sqrt(8.0));
    CHECK(max_abs_diff(out.value(), naive_attention(q, k, v, b)) <= 1e-12);
  }
}

TEST_CASE("finite difference checker") {
  ParamStore store;
  std::mt19937_64 rng(5);
  store.add("a", random_tensor({3, 4}, rng));
  store.add("s", Tensor::scalar(0.7));
  auto quad = [](Graph& g, const ParamStore& p) {
    const Var a = g.param(p, "a");
    const Var s = g.param(p, "s");
    return ad::add(ad::scale(ad::sum(ad::mul(a, a)), 0.5), ad::scale(ad::sum(ad::mul(s, s)), 0.5));
  };
  const auto report = finite_diff_check(quad, store, {.eps = 1e-5});
  CHECK(report.max_rel_error <= 1e-9);
  CHECK(report.elements_checked == 13);
  CHECK(report.per_param.size() == 2);

  CHECK_THROWS_AS(finite_diff_check(quad, store, {.eps = 0.0}), ShapeError);
  CHECK_THROWS_AS(finite_diff_check(quad, store, {.eps = 1e-2}), ShapeError);

  const auto sampled = finite_diff_check(quad, store, {.eps = 1e-5, .max_elements_per_param = 2});
  CHECK(sampled.elements_checked == 3);

  int calls = 0;
  auto flaky = [&](Graph& g, const ParamStore& p) {
    ++calls;
    return ad::add_scalar(ad::sum(g.param(p, "a")), static_cast<double>(calls));
  };
  CHECK_THROWS_AS(finite_diff_check(flaky, store), NumericalError);

  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1.0, 1.0 + 1e-6) == doctest::Approx(1e-6 / (2.0 + 1e-6)));
}

TEST_CASE("param store") {
  ParamStore s;
  s.add("a", Tensor({2, 2}, 1.0));
  s.add("b", Tensor::scalar(2.0));
  CHECK_THROWS(s.add("a", Tensor::scalar(0.0)));
  CHECK(s.index_of("b") == 1);
  CHECK_THROWS(s.index_of("zzz"));
  CHECK(s.element_count() == 5);
  CHECK(s.grad("a").shape() == s.value("a").shape());
  ParamStore t = s;
  CHECK(t.same_layout(s));
  ParamStore u;
  u.add("b", Tensor::scalar(2.0));
  u.add("a", Tensor({2, 2}, 1.0));
  CHECK_FALSE(u.same_layout(s));
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto path = std::filesystem::temp_directory_path() / "dip_test_roundtrip.ckpt";
  ParamStore s;
  std::mt19937_64 rng(6);
  s.add("w", random_tensor({3, 5}, rng, -1e3, 1e3));
  s.add("mu", Tensor::scalar(0.05));
  s.add("cube", random_tensor({2, 2, 2}, rng));
  std::vector<NamedTensor> records;
  append_store(records, s, "student/");
  records.emplace_back("meta.step", Tensor::scalar(42));
  write_records(path, records);

  const auto back = read_records(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].first == records[i].first);
    CHECK(back[i].second == records[i].second);
  }
  ParamStore loaded;
  loaded.add("w", Tensor({3, 5}));
  loaded.add("mu", Tensor::scalar(0));
  loaded.add("cube", Tensor({2, 2, 2}));
  load_store(loaded, back, "student/");
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(loaded[i].value == s[i].value);

  ParamStore wrong;
  wrong.add("w", Tensor({5, 3}));
  CHECK_THROWS(load_store(wrong, back, "student/"));
  ParamStore missing;
  missing.add("nope", Tensor::scalar(0));
  CHECK_THROWS(load_store(missing, back, "student/"));

  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTCKPT\n";
  }
  CHECK_THROWS(read_records(path));
  std::filesystem::remove(path);
}

TEST_CASE("seed derivation and parallel_for") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));

  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
  CHECK(worker_count() >= 1);
}
