#include <cmath>

#include "doctest.h"
#include "lthead/errors.hpp"
#include "lthead/evaluation.hpp"
#include "lthead/training.hpp"
#include "lthead/zero_shot.hpp"
#include "oracles.hpp"

using namespace lthead;

namespace {

void check_against_oracle(const EvalReport& r, const oracle::Metrics& m) {
  CHECK(r.overall_accuracy == m.overall);
  CHECK(r.macro_precision == m.precision);
  CHECK(r.macro_recall == m.recall);
  CHECK(r.macro_f1 == m.f1);
  for (std::size_t j = 0; j < m.per_class.size(); ++j) {
    if (std::isnan(m.per_class[j])) {
      CHECK_FALSE(r.per_class_accuracy[j].has_value());
    } else {
      REQUIRE(r.per_class_accuracy[j].has_value());
      CHECK(*r.per_class_accuracy[j] == m.per_class[j]);
    }
  }
}

// Direct softmax of cosine similarities, written independently of the library.
double direct_zero_shot(const Matrix& img, std::size_t i, const Matrix& cls, std::size_t j,
                        double temperature) {
  auto cosine = [&](std::size_t c) {
    double dot = 0, ni = 0, nc = 0;
    for (std::size_t d = 0; d < img.cols(); ++d) {
      dot += img(i, d) * cls(c, d);
      ni += img(i, d) * img(i, d);
      nc += cls(c, d) * cls(c, d);
    }
    return dot / std::sqrt(ni * nc);
  };
  double denom = 0.0;
  for (std::size_t c = 0; c < cls.rows(); ++c) denom += std::exp(cosine(c) / temperature);
  return std::exp(cosine(j) / temperature) / denom;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("perfect predictions") {
  const std::vector<std::uint32_t> y{0, 1, 2, 2, 1};
  const EvalReport r = compute_report(y, y, 3, nullptr);
  CHECK(r.overall_accuracy == 1.0);
  CHECK(r.macro_precision == 1.0);
  CHECK(r.macro_recall == 1.0);
  CHECK(r.macro_f1 == 1.0);
  CHECK_FALSE(r.few_shot.has_value());
}

TEST_CASE("constant predictor on a balanced binary set") {
  const std::vector<std::uint32_t> y{0, 1, 0, 1}, p{0, 0, 0, 0};
  const EvalReport r = compute_report(p, y, 2, nullptr);
  CHECK(r.overall_accuracy == 0.5);
  CHECK(std::abs(r.macro_f1 - 1.0 / 3.0) < 1e-15);
  CHECK(r.macro_recall == 0.5);
}

TEST_CASE("report equals the confusion-matrix oracle") {
  Rng rng(51);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 2 + rng.below(8);
    const std::size_t n = 1 + rng.below(60);
    const auto y = oracle::random_labels(n, k, rng);
    const auto p = oracle::random_labels(n, k, rng);
    check_against_oracle(compute_report(p, y, k, nullptr), oracle::confusion_metrics(p, y, k));
  }
}

TEST_CASE("macro recall equals accuracy on balanced test sets") {
  Rng rng(52);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + rng.below(10), per = 1 + rng.below(20);
    std::vector<std::uint32_t> y;
    for (std::uint32_t j = 0; j < k; ++j) y.insert(y.end(), per, j);
    const auto p = oracle::random_labels(y.size(), k, rng);
    const EvalReport r = compute_report(p, y, k, nullptr);
    CHECK(std::abs(r.macro_recall - r.overall_accuracy) < 1e-12);
  }
}

TEST_CASE("shot groups use the training counts") {
  const ClassStats s = class_stats_from_counts(std::vector<std::uint64_t>{200, 50, 5});
  const std::vector<std::uint32_t> y{0, 0, 1, 1, 2, 2}, p{0, 0, 1, 0, 1, 1};
  const EvalReport r = compute_report(p, y, 3, &s);
  CHECK(r.many_shot == 1.0);
  CHECK(r.medium_shot == 0.5);
  CHECK(r.few_shot == 0.0);
  const ClassStats wrong = class_stats_from_counts(std::vector<std::uint64_t>{1, 1});
  CHECK_THROWS_AS(compute_report(p, y, 3, &wrong), ShapeError);
}

TEST_CASE("classes without test samples are excluded with a warning") {
  const std::vector<std::uint32_t> y{0, 0, 1}, p{0, 2, 1};
  const EvalReport r = compute_report(p, y, 3, nullptr);
  CHECK(r.warnings.size() == 1);
  CHECK_FALSE(r.per_class_accuracy[2].has_value());
  CHECK(r.macro_recall == 0.75);
  check_against_oracle(r, oracle::confusion_metrics(p, y, 3));
}

TEST_CASE("argmax ties go to the lowest index") {
  const Matrix s(2, 3, {1, 3, 3, -1, -1, -1});
  CHECK(argmax_rows(s) == std::vector<std::uint32_t>{1, 0});
}

TEST_CASE("evaluation ignores monotone transforms of the logits") {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.head_count = 40;
  spec.imbalance_ratio = 4;
  spec.dim = 8;
  spec.test_per_class = 15;
  spec.seed = 2;
  const auto [train, test] = generate_synthetic_lt(spec);
  TrainConfig c;
  c.total_iters = 30;
  c.warmup_iters = 3;
  c.batch_size = 8;
  DecoderConfig dc;
  dc.depth = 1;
  dc.heads = 2;
  dc.mlp_ratio = 1;
  const Stage1Result s1 = train_stage1(train, c, dc, Rng(3));
  const Matrix logits = predict_logits(s1.head, nullptr, test);
  const auto base = argmax_rows(logits);
  Matrix t = logits;
  for (double& v : t.values()) v = std::exp(0.3 * v) * 5.0 - 2.0;
  CHECK(argmax_rows(t) == base);
  const EvalReport r = evaluate(s1.head, nullptr, test, s1.stats);
  const EvalReport direct = compute_report(argmax_rows(t), test.labels, 4, &s1.stats);
  CHECK(r.overall_accuracy == direct.overall_accuracy);
  CHECK(r.macro_f1 == direct.macro_f1);
  CHECK(r.few_shot == direct.few_shot);
}

TEST_CASE("json round trip") {
  EvalReport r;
  r.num_samples = 12;
  r.overall_accuracy = 0.1;
  r.many_shot = 1.0 / 3.0;
  r.few_shot = 0.0;
  r.macro_precision = 0.123456789012345678;
  r.macro_recall = 0.2;
  r.macro_f1 = 0.3;
  r.per_class_accuracy = {0.5, std::nullopt, 2.0 / 7.0};
  r.fingerprint = "00ff00ff00ff00ff";
  r.warnings = {"1 class(es) have no test samples"};
  std::string title;
  const EvalReport back = report_from_json(report_to_json(r, "bsm+marc"), &title);
  CHECK(back == r);
  CHECK(title == "bsm+marc");
  CHECK_FALSE(format_report_text(r, "x").empty());
  CHECK_THROWS(report_from_json("{not json"));
}

TEST_CASE("zero-shot examples") {
  const Matrix same(3, 4, 1.0);
  const auto classes = TextClassEmbeddings::from_raw(same);
  const ZeroShotResult u = zero_shot_classify(Matrix(2, 4, {1, 2, 3, 4, -1, 0, 0, 0}), classes);
  for (double p : u.probabilities.values()) CHECK(std::abs(p - 1.0 / 3.0) < 1e-12);

  const auto ortho = TextClassEmbeddings::from_raw(Matrix::identity(3));
  const ZeroShotResult r = zero_shot_classify(Matrix(1, 3, {1, 0, 0}), ortho);
  const double e = std::exp(1.0);
  CHECK(std::abs(r.probabilities(0, 0) - e / (e + 2)) < 1e-12);
  CHECK(std::abs(r.probabilities(0, 0) - 0.57611) < 1e-5);
  CHECK(r.predictions == std::vector<std::uint32_t>{0});
}

TEST_CASE("zero-shot matches the direct formula") {
  Rng rng(53);
  const Matrix raw = oracle::random_matrix(6, 5, rng);
  const auto classes = TextClassEmbeddings::from_raw(raw);
  for (std::size_t j = 0; j < 6; ++j) {
    double n = 0;
    for (double v : classes.matrix().row(j)) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-9);
  }
  const Matrix img = oracle::random_matrix(20, 5, rng);
  for (double tau : {1.0, 0.07}) {
    const ZeroShotResult r = zero_shot_classify(img, classes, tau);
    for (std::size_t i = 0; i < 20; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::abs(r.probabilities(i, j) - direct_zero_shot(img, i, raw, j, tau)) < 1e-12);
      }
    }
  }
}

TEST_CASE("zero-shot is invariant to image scale") {
  Rng rng(54);
  const auto classes = TextClassEmbeddings::from_raw(oracle::random_matrix(4, 6, rng));
  const Matrix img = oracle::random_matrix(10, 6, rng);
  Matrix scaled = img;
  for (double& v : scaled.values()) v *= 37.5;
  const ZeroShotResult a = zero_shot_classify(img, classes);
  const ZeroShotResult b = zero_shot_classify(scaled, classes);
  CHECK(a.predictions == b.predictions);
  CHECK(oracle::max_abs_diff(a.probabilities, b.probabilities) < 1e-12);
}

TEST_CASE("zero-shot errors") {
  const auto classes = TextClassEmbeddings::from_raw(Matrix::identity(3));
  CHECK_THROWS_AS(zero_shot_classify(Matrix(1, 3), classes), DataError);
  CHECK_THROWS_AS(zero_shot_classify(Matrix(1, 4, 1.0), classes), ShapeError);
  CHECK_THROWS_AS(zero_shot_classify(Matrix(1, 3, 1.0), classes, 0.0), DomainError);
  CHECK_THROWS_AS(TextClassEmbeddings::from_raw(Matrix(2, 3)), DataError);
}

}  // TEST_SUITE
