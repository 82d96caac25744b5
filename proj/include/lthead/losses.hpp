#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lthead/numerics.hpp"

namespace lthead {

enum class ShotGroup : std::uint8_t { Many, Medium, Few };

std::string_view to_string(ShotGroup group);

/// Group by training images per class: many > 100, medium 20..100, few < 20.
ShotGroup shot_group(std::uint64_t count) noexcept;

struct ClassStats {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;
  std::vector<double> priors;
  std::vector<ShotGroup> groups;

  std::uint64_t total() const noexcept;
  /// Throws DataError unless every class has at least one training sample.
  void require_nonempty_classes(std::string_view who) const;
};

ClassStats build_class_stats(std::span<const std::uint32_t> labels, std::size_t num_classes);
ClassStats class_stats_from_counts(std::span<const std::uint64_t> counts);

/// Inverse-frequency weights normalized to mean 1.
std::vector<double> cbw_weights(const ClassStats& stats);
/// Balanced Softmax logit biases log n_j.
std::vector<double> bsm_biases(const ClassStats& stats);
/// LDAM margins C / n_j^(1/4), scaled so the largest margin equals `max_margin`.
std::vector<double> ldam_margins(const ClassStats& stats, double max_margin);

enum class LossVariant : std::uint8_t { CE, CBW, Focal, LDAM, BalancedSoftmax, LADE };

std::string_view to_string(LossVariant variant);
/// Accepts the CLI spellings: ce, cbw, focal, ldam, bsm, lade.
LossVariant parse_loss_variant(std::string_view name);

/// Variant choice plus its hyperparameters; the part of a loss that does not
/// depend on the training data.
struct LossConfig {
  LossVariant variant = LossVariant::CE;
  double focal_gamma = 2.0;
  double ldam_max_margin = 0.5;
  double lade_lambda = 0.1;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// Class-specific loss: per-sample weight w_y, logit biases delta and a
/// true-class margin, with optional focal modulation and LADE regularizer.
struct LossSpec {
  LossConfig config;
  std::vector<double> weights;  // w, default 1
  std::vector<double> biases;   // delta, default 0
  std::vector<double> margins;  // subtracted from the true-class logit, default 0

  std::size_t num_classes() const noexcept { return weights.size(); }
};

LossSpec make_loss_spec(const LossConfig& config, const ClassStats& stats);
/// Plain cross-entropy over `num_classes` classes.
LossSpec cross_entropy_spec(std::size_t num_classes);

struct LossResult {
  double value = 0.0;
  Matrix dlogits;
};

/// Logits after adding biases and subtracting the true-class margin.
Matrix adjusted_logits(const LossSpec& spec, const Matrix& logits,
                       std::span<const std::uint32_t> labels);

/// Mean-reduced loss over the batch and its exact gradient w.r.t. the logits.
/// For LADE the Donsker-Varadhan regularizer is included.
LossResult loss_eval(const LossSpec& spec, const Matrix& logits,
                     std::span<const std::uint32_t> labels);

/// LADE regularizer on disentangled logits f_j = eta_j - log n_j. Classes
/// absent from the batch contribute nothing.
LossResult lade_dv_regularizer(const Matrix& logits, std::span<const std::uint32_t> labels,
                               std::span<const double> biases, double lambda);

}  // namespace lthead
