#include <cmath>

#include "doctest.h"
#include "lthead/decoder.hpp"
#include "lthead/errors.hpp"
#include "lthead/losses.hpp"
#include "oracles.hpp"

using namespace lthead;

namespace {

DecoderConfig small_config(std::size_t depth, std::size_t dim = 8, std::size_t k = 4) {
  DecoderConfig c;
  c.depth = depth;
  c.heads = 4;
  c.mlp_ratio = 2.0;
  c.dropout = 0.25;
  c.dim = dim;
  c.num_classes = k;
  return c;
}

// Zero every weight and bias of the blocks; layer-norm parameters stay.
void zero_block_branches(DecoderHead& head) {
  for (auto& b : head.blocks) {
    for (Matrix* m : {&b.qkv_weight, &b.qkv_bias, &b.proj_weight, &b.proj_bias, &b.fc1_weight,
                      &b.fc1_bias, &b.fc2_weight, &b.fc2_bias}) {
      m->fill(0.0);
    }
  }
}

}  // namespace

TEST_SUITE("decoder-head") {

TEST_CASE("config validation") {
  DecoderConfig c = small_config(2);
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(2);
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(0);
  c.heads = 3;  // heads are irrelevant without blocks
  CHECK_NOTHROW(c.validate());
  Rng rng(1);
  DecoderConfig bad = small_config(1);
  bad.heads = 3;
  CHECK_THROWS_AS(init_decoder(bad, rng), ConfigError);
}

TEST_CASE("init shapes and ranges") {
  DecoderConfig c = small_config(1);
  c.mlp_ratio = 4.0;
  Rng rng(2);
  const DecoderHead h = init_decoder(c, rng);
  REQUIRE(h.blocks.size() == 1);
  const BlockParams& b = h.blocks[0];
  CHECK(b.fc1_weight.rows() == 32);
  CHECK(b.fc1_weight.cols() == 8);
  CHECK(b.fc2_weight.rows() == 8);
  CHECK(b.fc2_weight.cols() == 32);
  CHECK(b.qkv_weight.rows() == 24);
  CHECK(b.qkv_bias.cols() == 24);
  CHECK(b.proj_weight.rows() == 8);
  for (double g : b.ln1_gamma.values()) CHECK(g == 1.0);
  for (double g : b.ln2_beta.values()) CHECK(g == 0.0);
  for (double v : h.classifier_bias.values()) CHECK(v == 0.0);
  const double bound = 1.0 / std::sqrt(8.0);
  for (double v : b.qkv_weight.values()) CHECK(std::abs(v) <= bound);
  const double bound2 = 1.0 / std::sqrt(32.0);
  for (double v : b.fc2_weight.values()) CHECK(std::abs(v) <= bound2);
  CHECK(h.classifier_weight.rows() == 4);
  CHECK(h.classifier_weight.cols() == 8);

  std::size_t n = 0;
  DecoderHead copy = h;
  for (const auto& p : copy.params()) n += p.value->size();
  CHECK(n == h.parameter_count());
}

TEST_CASE("init is deterministic given the seed") {
  Rng a(3), b(3), c(4);
  const DecoderHead ha = init_decoder(small_config(2), a);
  CHECK(ha == init_decoder(small_config(2), b));
  CHECK_FALSE(ha == init_decoder(small_config(2), c));
}

TEST_CASE("depth zero holds only the classifier") {
  Rng rng(5);
  DecoderHead h = init_decoder(small_config(0), rng);
  CHECK(h.blocks.empty());
  CHECK(h.params().size() == 2);
  CHECK(h.parameter_count() == 4 * 8 + 4);
}

TEST_CASE("zero block weights give the identity map") {
  Rng rng(6);
  DecoderHead h = init_decoder(small_config(2), rng);
  zero_block_branches(h);
  const Matrix x = oracle::random_matrix(6, 8, rng);
  Rng drop(7);
  for (const auto& b : h.blocks) {
    CHECK(block_forward(b, h.config, x, 3, drop, true, nullptr) == x);
  }
}

TEST_CASE("zero blocks with identity classifier return the shared token") {
  DecoderConfig c = small_config(2, 8, 8);
  Rng rng(8);
  DecoderHead h = init_decoder(c, rng);
  zero_block_branches(h);
  h.classifier_weight = Matrix::identity(8);
  Matrix tokens(3, 8);
  const Matrix x = oracle::random_matrix(1, 8, rng);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t d = 0; d < 8; ++d) tokens(t, d) = x(0, d);
  }
  const Matrix logits = forward(h, tokens, rng, false, nullptr);
  CHECK(oracle::max_abs_diff(logits, x) < 1e-15);
}

TEST_CASE("depth zero identity classifier returns the token") {
  DecoderConfig c = small_config(0, 5, 5);
  Rng rng(9);
  DecoderHead h = init_decoder(c, rng);
  h.classifier_weight = Matrix::identity(5);
  const Matrix x = oracle::random_matrix(1, 5, rng);
  CHECK(forward(h, x, rng, false, nullptr) == x);
}

TEST_CASE("depth zero is mean pooling then affine") {
  Rng rng(10);
  const DecoderHead h = init_decoder(small_config(0), rng);
  const Matrix tokens = oracle::random_matrix(2 * 3, 8, rng);
  const Matrix logits = forward(h, tokens, 3, rng, false, nullptr);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = h.classifier_bias(0, k);
      for (std::size_t d = 0; d < 8; ++d) {
        double mean = 0.0;
        for (std::size_t t = 0; t < 3; ++t) mean += tokens(s * 3 + t, d);
        expect += h.classifier_weight(k, d) * (mean / 3.0);
      }
      CHECK(std::abs(logits(s, k) - expect) < 1e-12);
    }
  }
}

TEST_CASE("single token attention reduces to the value projection") {
  DecoderConfig c = small_config(1);
  Rng rng(11);
  DecoderHead h = init_decoder(c, rng);
  BlockParams& b = h.blocks[0];
  // Silence the MLP so only the attention path remains.
  b.fc2_weight.fill(0.0);
  b.fc2_bias.fill(0.0);
  const Matrix x = oracle::random_matrix(1, 8, rng);
  const Matrix y = block_forward(b, c, x, 1, rng, false, nullptr);

  const Matrix ln = layer_norm(x, b.ln1_gamma, b.ln1_beta, kLayerNormEps, nullptr);
  Matrix v(1, 8);
  for (std::size_t d = 0; d < 8; ++d) {
    double s = b.qkv_bias(0, 16 + d);
    for (std::size_t e = 0; e < 8; ++e) s += b.qkv_weight(16 + d, e) * ln(0, e);
    v(0, d) = s;
  }
  for (std::size_t d = 0; d < 8; ++d) {
    double s = b.proj_bias(0, d);
    for (std::size_t e = 0; e < 8; ++e) s += b.proj_weight(d, e) * v(0, e);
    CHECK(std::abs(y(0, d) - (x(0, d) + s)) < 1e-12);
  }
}

TEST_CASE("eval forward is deterministic and ignores the rng") {
  Rng rng(12);
  const DecoderHead h = init_decoder(small_config(3), rng);
  const Matrix tokens = oracle::random_matrix(4 * 3, 8, rng);
  Rng r1(1), r2(2);
  CHECK(forward(h, tokens, 3, r1, false, nullptr) == forward(h, tokens, 3, r2, false, nullptr));
  CHECK(r1 == Rng(1));
  CHECK(pooled_features(h, tokens, 3).rows() == 4);
}

TEST_CASE("train forward is reproducible from the rng state") {
  Rng rng(13);
  const DecoderHead h = init_decoder(small_config(2), rng);
  const Matrix tokens = oracle::random_matrix(2 * 3, 8, rng);
  Rng a(77), b(77);
  CHECK(forward(h, tokens, 3, a, true, nullptr) == forward(h, tokens, 3, b, true, nullptr));
}

TEST_CASE("token permutation leaves logits unchanged") {
  Rng rng(14);
  const DecoderHead h = init_decoder(small_config(3), rng);
  const Matrix tokens = oracle::random_matrix(5, 8, rng);
  Matrix permuted(5, 8);
  const std::size_t order[] = {3, 0, 4, 2, 1};
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t d = 0; d < 8; ++d) permuted(t, d) = tokens(order[t], d);
  }
  const Matrix a = forward(h, tokens, rng, false, nullptr);
  const Matrix b = forward(h, permuted, rng, false, nullptr);
  CHECK(oracle::max_abs_diff(a, b) < 1e-9);
}

TEST_CASE("shape errors") {
  Rng rng(15);
  const DecoderHead h = init_decoder(small_config(1), rng);
  CHECK_THROWS_AS(forward(h, Matrix(3, 7), rng, false, nullptr), ShapeError);
  CHECK_THROWS_AS(forward(h, Matrix(5, 8), 2, rng, false, nullptr), ShapeError);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  Rng rng(16);
  const DecoderHead h = init_decoder(small_config(2), rng);
  const Matrix tokens = oracle::random_matrix(2 * 3, 8, rng);
  ForwardCache cache;
  forward(h, tokens, 3, rng, true, &cache);
  const HeadGradients g = backward(h, cache, Matrix(2, 4));
  DecoderHead copy = g.params;
  for (const auto& p : copy.params()) {
    for (double v : p.value->values()) CHECK(v == 0.0);
  }
  for (double v : g.dtokens.values()) CHECK(v == 0.0);
}

TEST_CASE("depth zero gradients are outer products") {
  Rng rng(17);
  const DecoderHead h = init_decoder(small_config(0), rng);
  const Matrix x = oracle::random_matrix(1, 8, rng);
  ForwardCache cache;
  forward(h, x, rng, true, &cache);
  const Matrix dl(1, 4, {0.5, -1.0, 0.25, 2.0});
  const HeadGradients g = backward(h, cache, dl);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(g.params.classifier_bias(0, k) == dl(0, k));
    for (std::size_t d = 0; d < 8; ++d) CHECK(g.params.classifier_weight(k, d) == dl(0, k) * x(0, d));
  }
}

TEST_CASE("stale cache is rejected") {
  Rng rng(18);
  const DecoderHead h = init_decoder(small_config(1), rng);
  const DecoderHead other = init_decoder(small_config(1), rng);
  const Matrix tokens = oracle::random_matrix(3, 8, rng);
  ForwardCache cache;
  forward(h, tokens, rng, true, &cache);
  CHECK_THROWS_AS(backward(other, cache, Matrix(1, 4)), StateError);
  CHECK_THROWS_AS(backward(h, cache, Matrix(2, 4)), StateError);
  CHECK_THROWS_AS(backward(h, ForwardCache{}, Matrix(1, 4)), StateError);
}

TEST_CASE("full head gradient matches finite differences") {
  Rng rng(19);
  DecoderHead h = init_decoder(small_config(2), rng);
  Matrix tokens = oracle::random_matrix(3 * 3, 8, rng);
  const std::vector<std::uint32_t> labels{0, 3, 1};
  const LossSpec spec = cross_entropy_spec(4);
  const Rng drop(23);

  auto loss_at = [&](Rng r) {
    return loss_eval(spec, forward(h, tokens, 3, r, true, nullptr), labels).value;
  };
  Rng r = drop;
  ForwardCache cache;
  const Matrix logits = forward(h, tokens, 3, r, true, &cache);
  const HeadGradients g = backward(h, cache, loss_eval(spec, logits, labels).dlogits);

  ParamRefs refs = h.params();
  refs.push_back({"tokens", &tokens});
  DecoderHead grads = g.params;
  ParamRefs grefs = grads.params();
  Matrix dtokens = g.dtokens;
  grefs.push_back({"tokens", &dtokens});
  const std::vector<double> analytic = flatten(grefs);
  const std::vector<double> base = flatten(refs);
  const auto f = [&](std::span<const double> p) {
    assign_flat(refs, p);
    return loss_at(drop);
  };
  const GradCheckReport rep = finite_diff_check(f, base, analytic);
  assign_flat(refs, base);
  CHECK(rep.passed);
  CHECK(rep.max_rel_err < 1e-5);
}

}  // TEST_SUITE
