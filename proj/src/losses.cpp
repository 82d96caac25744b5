#include "lthead/losses.hpp"

#include <algorithm>
#include <cmath>

#include "lthead/errors.hpp"

namespace lthead {

std::string_view to_string(ShotGroup group) {
  switch (group) {
    case ShotGroup::Many: return "many";
    case ShotGroup::Medium: return "medium";
    case ShotGroup::Few: return "few";
  }
  return "?";
}

ShotGroup shot_group(std::uint64_t count) noexcept {
  if (count > 100) return ShotGroup::Many;
  if (count >= 20) return ShotGroup::Medium;
  return ShotGroup::Few;
}

std::uint64_t ClassStats::total() const noexcept {
  std::uint64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

void ClassStats::require_nonempty_classes(std::string_view who) const {
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0) {
      throw DataError(std::string(who) + ": class " + std::to_string(j) +
                      " has no training samples");
    }
  }
}

ClassStats class_stats_from_counts(std::span<const std::uint64_t> counts) {
  ClassStats stats;
  stats.num_classes = counts.size();
  stats.counts.assign(counts.begin(), counts.end());
  const double total = static_cast<double>(stats.total());
  stats.priors.resize(counts.size(), 0.0);
  stats.groups.resize(counts.size());
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (total > 0.0) stats.priors[j] = static_cast<double>(counts[j]) / total;
    stats.groups[j] = shot_group(counts[j]);
  }
  return stats;
}

ClassStats build_class_stats(std::span<const std::uint32_t> labels, std::size_t num_classes) {
  std::vector<std::uint64_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("build_class_stats: label " + std::to_string(labels[i]) + " at index " +
                      std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++counts[labels[i]];
  }
  return class_stats_from_counts(counts);
}

std::vector<double> cbw_weights(const ClassStats& stats) {
  stats.require_nonempty_classes("cbw_weights");
  std::vector<double> w(stats.num_classes);
  double mean_inv = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = 1.0 / static_cast<double>(stats.counts[j]);
    mean_inv += w[j];
  }
  mean_inv /= static_cast<double>(w.size());
  for (double& v : w) v /= mean_inv;
  return w;
}

std::vector<double> bsm_biases(const ClassStats& stats) {
  stats.require_nonempty_classes("bsm_biases");
  std::vector<double> d(stats.num_classes);
  for (std::size_t j = 0; j < d.size(); ++j) d[j] = std::log(static_cast<double>(stats.counts[j]));
  return d;
}

std::vector<double> ldam_margins(const ClassStats& stats, double max_margin) {
  if (!(max_margin >= 0.0)) throw DomainError("ldam_margins: max_margin must be >= 0");
  stats.require_nonempty_classes("ldam_margins");
  std::vector<double> m(stats.num_classes);
  double largest = 0.0;
  for (std::size_t j = 0; j < m.size(); ++j) {
    m[j] = std::pow(static_cast<double>(stats.counts[j]), -0.25);
    largest = std::max(largest, m[j]);
  }
  const double c = max_margin / largest;
  for (double& v : m) v *= c;
  return m;
}

// ---------------------------------------------------------------------------

std::string_view to_string(LossVariant variant) {
  switch (variant) {
    case LossVariant::CE: return "ce";
    case LossVariant::CBW: return "cbw";
    case LossVariant::Focal: return "focal";
    case LossVariant::LDAM: return "ldam";
    case LossVariant::BalancedSoftmax: return "bsm";
    case LossVariant::LADE: return "lade";
  }
  return "?";
}

LossVariant parse_loss_variant(std::string_view name) {
  for (auto v : {LossVariant::CE, LossVariant::CBW, LossVariant::Focal, LossVariant::LDAM,
                 LossVariant::BalancedSoftmax, LossVariant::LADE}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown loss variant '" + std::string(name) + "'");
}

LossSpec cross_entropy_spec(std::size_t num_classes) {
  return LossSpec{LossConfig{}, std::vector<double>(num_classes, 1.0),
                  std::vector<double>(num_classes, 0.0), std::vector<double>(num_classes, 0.0)};
}

LossSpec make_loss_spec(const LossConfig& config, const ClassStats& stats) {
  if (!(config.focal_gamma >= 0.0)) throw DomainError("focal_gamma must be >= 0");
  if (!(config.lade_lambda >= 0.0)) throw DomainError("lade_lambda must be >= 0");
  LossSpec spec = cross_entropy_spec(stats.num_classes);
  spec.config = config;
  switch (config.variant) {
    case LossVariant::CE:
    case LossVariant::Focal:
      break;
    case LossVariant::CBW:
      spec.weights = cbw_weights(stats);
      break;
    case LossVariant::LDAM:
      spec.margins = ldam_margins(stats, config.ldam_max_margin);
      break;
    case LossVariant::BalancedSoftmax:
    case LossVariant::LADE:
      spec.biases = bsm_biases(stats);
      break;
  }
  return spec;
}

namespace {

void check_batch(const LossSpec& spec, const Matrix& logits, std::span<const std::uint32_t> labels) {
  if (logits.cols() != spec.num_classes() || logits.rows() != labels.size()) {
    throw ShapeError("loss: logits " + std::to_string(logits.rows()) + "x" +
                     std::to_string(logits.cols()) + " vs " + std::to_string(labels.size()) +
                     " labels over " + std::to_string(spec.num_classes()) + " classes");
  }
  if (logits.rows() == 0) throw ShapeError("loss: empty batch");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= spec.num_classes()) {
      throw DataError("loss: label " + std::to_string(labels[i]) + " at batch index " +
                      std::to_string(i) + " out of range");
    }
  }
}

}  // namespace

Matrix adjusted_logits(const LossSpec& spec, const Matrix& logits,
                       std::span<const std::uint32_t> labels) {
  check_batch(spec, logits, labels);
  Matrix z = logits;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto zr = z.row(i);
    for (std::size_t k = 0; k < zr.size(); ++k) zr[k] += spec.biases[k];
    zr[labels[i]] -= spec.margins[labels[i]];
  }
  return z;
}

LossResult loss_eval(const LossSpec& spec, const Matrix& logits,
                     std::span<const std::uint32_t> labels) {
  const Matrix z = adjusted_logits(spec, logits, labels);
  const std::size_t batch = z.rows(), k = z.cols();
  const double gamma = spec.config.variant == LossVariant::Focal ? spec.config.focal_gamma : 0.0;
  const double inv_s = 1.0 / static_cast<double>(batch);

  LossResult out{0.0, Matrix(batch, k)};
  for (std::size_t i = 0; i < batch; ++i) {
    const auto zr = z.row(i);
    const std::uint32_t y = labels[i];
    const double w = spec.weights[y];
    const double lse = log_sum_exp(zr);
    const double log_pt = zr[y] - lse;
    double loss = 0.0;
    double scale = w;  // d loss / d z_k = scale * (p_k - [k == y])
    if (gamma == 0.0) {
      loss = -w * log_pt;
    } else {
      const double pt = std::exp(log_pt);
      const double rest = -std::expm1(log_pt);  // 1 - p_t without cancellation
      const double modulation = std::pow(rest, gamma);
      const double tail = rest > 0.0 ? gamma * pt * std::pow(rest, gamma - 1.0) * log_pt : 0.0;
      loss = -w * modulation * log_pt;
      scale = w * (modulation - tail);
    }
    out.value += loss;
    auto dr = out.dlogits.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(zr[c] - lse);
      dr[c] = scale * (p - (c == y ? 1.0 : 0.0)) * inv_s;
    }
  }
  out.value *= inv_s;

  if (spec.config.variant == LossVariant::LADE && spec.config.lade_lambda != 0.0) {
    LossResult reg = lade_dv_regularizer(logits, labels, spec.biases, spec.config.lade_lambda);
    out.value += reg.value;
    for (std::size_t i = 0; i < out.dlogits.size(); ++i) {
      out.dlogits.data()[i] += reg.dlogits.data()[i];
    }
  }
  return out;
}

LossResult lade_dv_regularizer(const Matrix& logits, std::span<const std::uint32_t> labels,
                               std::span<const double> biases, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("lade_dv_regularizer: lambda must be >= 0");
  const std::size_t batch = logits.rows(), k = logits.cols();
  if (biases.size() != k || labels.size() != batch) {
    throw ShapeError("lade_dv_regularizer: shape mismatch");
  }
  std::vector<std::size_t> present(k, 0);
  for (auto y : labels) {
    if (y >= k) throw DataError("lade_dv_regularizer: label out of range");
    ++present[y];
  }
  const std::size_t num_present =
      static_cast<std::size_t>(std::count_if(present.begin(), present.end(),
                                             [](std::size_t c) { return c > 0; }));
  LossResult out{0.0, Matrix(batch, k)};
  if (num_present == 0 || lambda == 0.0) return out;

  const double coeff = lambda / static_cast<double>(num_present);
  const double log_s = std::log(static_cast<double>(batch));
  std::vector<double> column(batch);
  for (std::size_t j = 0; j < k; ++j) {
    if (present[j] == 0) continue;
    const double inv_m = 1.0 / static_cast<double>(present[j]);
    double true_mean = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      column[i] = logits(i, j) - biases[j];
      if (labels[i] == j) true_mean += column[i];
    }
    true_mean *= inv_m;
    const double lse = log_sum_exp(column);
    out.value += coeff * (-true_mean + lse - log_s);
    for (std::size_t i = 0; i < batch; ++i) {
      const double softmax_i = std::exp(column[i] - lse);
      out.dlogits(i, j) = coeff * (softmax_i - (labels[i] == j ? inv_m : 0.0));
    }
  }
  return out;
}

}  // namespace lthead
