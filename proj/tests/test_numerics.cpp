#include <cmath>
#include <numbers>

#include "doctest.h"
#include "lthead/errors.hpp"
#include "lthead/numerics.hpp"
#include "oracles.hpp"

using namespace lthead;

TEST_SUITE("core-numerics") {

TEST_CASE("matrix construction validates data length") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  const Matrix m(2, 3, 7.0);
  CHECK(m.size() == 6);
  CHECK(m(1, 2) == 7.0);
}

TEST_CASE("matmul examples") {
  const Matrix a(2, 2, {1, 2, 3, 4});
  CHECK(matmul(Matrix::identity(2), a) == a);
  const Matrix sel(1, 2, {1, 0});
  const Matrix col(2, 1, {5, 7});
  CHECK(matmul(sel, col) == Matrix(1, 1, {5}));
  CHECK_THROWS_AS(matmul(a, Matrix(3, 1)), ShapeError);
  CHECK_THROWS_AS(matmul_bt(a, Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(matmul_at(a, Matrix(3, 2)), ShapeError);
}

TEST_CASE("matmul equals the naive triple loop exactly") {
  Rng rng(11);
  const Matrix a = oracle::random_matrix(4, 3, rng);
  const Matrix b = oracle::random_matrix(3, 2, rng);
  CHECK(matmul(a, b) == oracle::naive_matmul(a, b));

  // Shapes that exercise the tiled interior and both ragged edges.
  for (auto [n, k, m] : {std::tuple{9, 13, 19}, std::tuple{16, 64, 24}, std::tuple{1, 1, 1},
                         std::tuple{5, 0, 3}, std::tuple{37, 5, 8}}) {
    const Matrix x = oracle::random_matrix(n, k, rng);
    const Matrix y = oracle::random_matrix(k, m, rng);
    CHECK(matmul(x, y) == oracle::naive_matmul(x, y));
    CHECK(matmul_bt(x, transpose(y)) == oracle::naive_matmul(x, y));
    CHECK(matmul_at(transpose(x), y) == oracle::naive_matmul(x, y));
  }
}

TEST_CASE("matmul is associative within 1e-9") {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = oracle::random_matrix(3 + t % 4, 5, rng);
    const Matrix b = oracle::random_matrix(5, 4 + t % 3, rng);
    const Matrix c = oracle::random_matrix(b.cols(), 6, rng);
    CHECK(oracle::max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-9);
  }
}

TEST_CASE("log_sum_exp examples and errors") {
  CHECK(log_sum_exp(std::vector<double>{0, 0}) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(log_sum_exp(std::vector<double>{1000, 1000}) == 1000 + std::numbers::ln2);
  CHECK(log_sum_exp(std::vector<double>{-3.25}) == -3.25);
  CHECK(std::isfinite(log_sum_exp(std::vector<double>{1e8, -1e8, 1e8})));
  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{}), DomainError);
}

TEST_CASE("log_sum_exp shift property") {
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(1 + t % 9);
    for (double& x : v) x = 5 * rng.normal();
    const double c = 20 * rng.normal();
    std::vector<double> w = v;
    for (double& x : w) x += c;
    CHECK(std::abs(log_sum_exp(w) - (log_sum_exp(v) + c)) < 1e-12);
  }
}

TEST_CASE("softmax examples") {
  const Matrix u = softmax_rows(Matrix(1, 3, 0.0));
  for (double p : u.values()) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const Matrix two = softmax_rows(Matrix(1, 2, {std::numbers::ln2, 0.0}));
  CHECK(std::abs(two(0, 0) - 2.0 / 3) < 1e-15);
  CHECK(std::abs(two(0, 1) - 1.0 / 3) < 1e-15);
  const Matrix big = softmax_rows(Matrix(1, 2, {1000, 0}));
  CHECK(big.all_finite());
  CHECK(big(0, 0) == doctest::Approx(1.0));
  CHECK(big(0, 1) < 1e-300);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(14);
  const Matrix logits = oracle::random_matrix(1000, 7, rng, 10.0);
  const Matrix p = softmax_rows(logits);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double v : p.row(r)) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("layer norm examples") {
  const Matrix ones(1, 4, 1.0), zeros(1, 4, 0.0);
  const Matrix y = layer_norm(Matrix(1, 4, 3.5), ones, zeros, kLayerNormEps, nullptr);
  for (double v : y.values()) CHECK(v == 0.0);

  const Matrix g2(1, 2, 1.0), b2(1, 2, 0.0);
  const Matrix unit = layer_norm(Matrix(1, 2, {1, -1}), g2, b2, 1e-15, nullptr);
  CHECK(std::abs(unit(0, 0) - 1.0) < 1e-12);
  CHECK(std::abs(unit(0, 1) + 1.0) < 1e-12);

  CHECK_THROWS_AS(layer_norm(Matrix(1, 3), g2, b2, kLayerNormEps, nullptr), ShapeError);
}

TEST_CASE("layer norm backward matches finite differences") {
  Rng rng(15);
  Matrix x = oracle::random_matrix(3, 5, rng, 2.0);
  Matrix gamma = oracle::random_matrix(1, 5, rng);
  Matrix beta = oracle::random_matrix(1, 5, rng);
  const Matrix w = oracle::random_matrix(3, 5, rng);
  LayerNormCache cache;
  layer_norm(x, gamma, beta, kLayerNormEps, &cache);
  const LayerNormGrads g = layer_norm_backward(cache, gamma, w);

  const ParamRefs refs{{"x", &x}, {"gamma", &gamma}, {"beta", &beta}};
  std::vector<double> analytic;
  for (const Matrix* m : {&g.dx, &g.dgamma, &g.dbeta}) {
    analytic.insert(analytic.end(), m->values().begin(), m->values().end());
  }
  auto f = [&](std::span<const double> p) {
    assign_flat(refs, p);
    const Matrix y = layer_norm(x, gamma, beta, kLayerNormEps, nullptr);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * w.data()[i];
    return s;
  };
  const auto base = flatten(refs);
  GradCheckOptions opts;
  opts.tolerance = 1e-6;
  const GradCheckReport r = finite_diff_check(f, base, analytic, opts);
  CHECK(r.passed);
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gelu examples") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(10.0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(gelu(-10.0)) < 1e-12);
  for (double x = -6.0; x < 6.0; x += 0.01) CHECK(gelu(x + 0.01) >= gelu(x) - 0.2);
  // Monotone on the non-negative half-line and beyond the minimum near -0.75.
  for (double x = -0.7; x < 6.0; x += 0.01) CHECK(gelu(x + 0.01) > gelu(x));

  const double h = 1e-5, x = 0.5;
  const double numeric = (gelu(x + h) - gelu(x - h)) / (2 * h);
  CHECK(std::abs(numeric - gelu_derivative(x)) / std::abs(gelu_derivative(x)) < 1e-6);
  CHECK(gelu_derivative_from_tanh(x, gelu_tanh(x)) == gelu_derivative(x));
}

TEST_CASE("dropout mask") {
  Rng rng(16);
  const Matrix zero_rate = dropout_mask(3, 4, 0.0, rng, true);
  for (double v : zero_rate.values()) CHECK(v == 1.0);
  const Rng before = rng;
  const Matrix eval = dropout_mask(3, 4, 0.5, rng, false);
  for (double v : eval.values()) CHECK(v == 1.0);
  CHECK(rng == before);
  CHECK_THROWS_AS(dropout_mask(1, 1, 1.0, rng, true), DomainError);
  CHECK_THROWS_AS(dropout_mask(1, 1, -0.1, rng, true), DomainError);

  // 10^6 draws at rate 0.5: entries are 0 or 2, mean 1 with sd 1/sqrt(n).
  const Matrix m = dropout_mask(1000, 1000, 0.5, rng, true);
  double sum = 0.0;
  for (double v : m.values()) {
    CHECK((v == 0.0 || v == 2.0));
    sum += v;
  }
  const double n = static_cast<double>(m.size());
  CHECK(std::abs(sum / n - 1.0) < 3.0 / std::sqrt(n));

  Rng a(99), b(99);
  CHECK(dropout_mask(5, 5, 0.3, a, true) == dropout_mask(5, 5, 0.3, b, true));
}

TEST_CASE("rng determinism and substreams") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  const Rng s1 = a.substream(1), s1b = a.substream(1), s2 = a.substream(2);
  Rng t1 = s1, t1b = s1b, t2 = s2;
  CHECK(t1.next_u64() == t1b.next_u64());
  CHECK(t1.next_u64() != t2.next_u64());
  // Known first draw pins the generator across platforms.
  Rng fixed(0);
  const auto first = fixed.next_u64();
  Rng again(0);
  CHECK(first == again.next_u64());
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(a.below(7) < 7);
  }
  CHECK_THROWS(a.below(0));
}

TEST_CASE("finite difference checker") {
  const std::vector<double> x{3.0};
  const auto f = [](std::span<const double> p) { return p[0] * p[0]; };
  const GradCheckReport ok = finite_diff_check(f, x, std::vector<double>{6.0});
  CHECK(ok.passed);
  CHECK(ok.max_rel_err < 1e-8);

  const GradCheckReport wrong = finite_diff_check(f, x, std::vector<double>{12.0});
  CHECK_FALSE(wrong.passed);
  CHECK(wrong.worst_index == 0);

  const auto bad = [](std::span<const double> p) { return p[0] > 3.0 ? NAN : 0.0; };
  CHECK_THROWS_AS(finite_diff_check(bad, x, std::vector<double>{0.0}), EvaluationError);
  CHECK_THROWS_AS(finite_diff_check(f, x, std::vector<double>{}), ShapeError);

  // passed is exactly max_rel_err < tolerance.
  GradCheckOptions tight;
  tight.tolerance = ok.max_rel_err;
  CHECK_FALSE(finite_diff_check(f, x, std::vector<double>{6.0}, tight).passed);
}

TEST_CASE("cross-entropy gradient passes the checker") {
  const std::vector<double> z{0.3, -1.2, 2.0};
  const std::size_t y = 1;
  const auto f = [&](std::span<const double> p) {
    return oracle::naive_ce(std::vector<double>(p.begin(), p.end()), y);
  };
  const Matrix probs = softmax_rows(Matrix(1, 3, z));
  std::vector<double> g(probs.values().begin(), probs.values().end());
  g[y] -= 1.0;
  CHECK(finite_diff_check(f, z, g).passed);
}

TEST_CASE("flatten and assign round trip") {
  Matrix a(2, 2, {1, 2, 3, 4}), b(1, 3, {5, 6, 7});
  const ParamRefs refs{{"a", &a}, {"b", &b}};
  CHECK(total_size(refs) == 7);
  auto flat = flatten(refs);
  CHECK(flat == std::vector<double>{1, 2, 3, 4, 5, 6, 7});
  for (double& v : flat) v *= -1;
  assign_flat(refs, flat);
  CHECK(a(1, 1) == -4);
  CHECK(b(0, 2) == -7);
  CHECK_THROWS_AS(assign_flat(refs, std::vector<double>(3)), ShapeError);
}

}  // TEST_SUITE
