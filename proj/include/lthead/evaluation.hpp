#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lthead/calibrators.hpp"
#include "lthead/data.hpp"
#include "lthead/decoder.hpp"
#include "lthead/losses.hpp"

namespace lthead {

struct EvalReport {
  std::size_t num_samples = 0;
  double overall_accuracy = 0.0;
  /// Mean per-class accuracy over classes of each training-count group;
  /// empty when the group has no evaluated class or no training stats exist.
  std::optional<double> many_shot;
  std::optional<double> medium_shot;
  std::optional<double> few_shot;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  /// Empty for classes without test samples; those are left out of macro averages.
  std::vector<std::optional<double>> per_class_accuracy;
  std::string fingerprint;
  std::vector<std::string> warnings;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Metrics from predictions against ground truth. `train_stats` supplies the
/// many/medium/few tags; pass nullptr when no training distribution is known.
EvalReport compute_report(std::span<const std::uint32_t> predictions,
                          std::span<const std::uint32_t> labels, std::size_t num_classes,
                          const ClassStats* train_stats);

/// Row-wise argmax; ties go to the lowest class index.
std::vector<std::uint32_t> argmax_rows(const Matrix& scores);

/// Eval-mode logits of the head, adjusted by `calibrator` when present.
Matrix predict_logits(const DecoderHead& head, const Calibrator* calibrator,
                      const FeatureDataset& ds);

EvalReport evaluate(const DecoderHead& head, const Calibrator* calibrator,
                    const FeatureDataset& test, const ClassStats& train_stats);

/// Human-readable block, one metric per line.
std::string format_report_text(const EvalReport& report, const std::string& title);
/// Machine-readable JSON document (see README for the schema).
std::string report_to_json(const EvalReport& report, const std::string& title);
EvalReport report_from_json(const std::string& text, std::string* title = nullptr);

}  // namespace lthead
