#include "lthead/evaluation.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "lthead/errors.hpp"
#include "lthead/training.hpp"

namespace lthead {

EvalReport compute_report(std::span<const std::uint32_t> predictions,
                          std::span<const std::uint32_t> labels, std::size_t num_classes,
                          const ClassStats* train_stats) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("compute_report: prediction and label counts differ");
  }
  if (train_stats && train_stats->num_classes != num_classes) {
    throw ShapeError("compute_report: training stats cover a different number of classes");
  }
  std::vector<std::uint64_t> tp(num_classes, 0), predicted(num_classes, 0), support(num_classes, 0);
  std::uint64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes) {
      throw DataError("compute_report: class index out of range at sample " + std::to_string(i));
    }
    ++support[labels[i]];
    ++predicted[predictions[i]];
    if (predictions[i] == labels[i]) {
      ++tp[labels[i]];
      ++correct;
    }
  }

  EvalReport r;
  r.num_samples = labels.size();
  r.overall_accuracy =
      labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  r.per_class_accuracy.assign(num_classes, std::nullopt);

  double sum_p = 0.0, sum_r = 0.0, sum_f = 0.0;
  std::size_t evaluated = 0;
  double group_sum[3] = {0.0, 0.0, 0.0};
  std::size_t group_n[3] = {0, 0, 0};
  std::vector<std::size_t> missing;
  for (std::size_t j = 0; j < num_classes; ++j) {
    if (support[j] == 0) {
      missing.push_back(j);
      continue;
    }
    const double recall = static_cast<double>(tp[j]) / static_cast<double>(support[j]);
    const double precision =
        predicted[j] == 0 ? 0.0 : static_cast<double>(tp[j]) / static_cast<double>(predicted[j]);
    const double f1 =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    r.per_class_accuracy[j] = recall;
    sum_p += precision;
    sum_r += recall;
    sum_f += f1;
    ++evaluated;
    if (train_stats) {
      const auto g = static_cast<std::size_t>(train_stats->groups[j]);
      group_sum[g] += recall;
      ++group_n[g];
    }
  }
  if (evaluated > 0) {
    const double n = static_cast<double>(evaluated);
    r.macro_precision = sum_p / n;
    r.macro_recall = sum_r / n;
    r.macro_f1 = sum_f / n;
  }
  auto group_mean = [&](ShotGroup g) -> std::optional<double> {
    const auto i = static_cast<std::size_t>(g);
    if (group_n[i] == 0) return std::nullopt;
    return group_sum[i] / static_cast<double>(group_n[i]);
  };
  r.many_shot = group_mean(ShotGroup::Many);
  r.medium_shot = group_mean(ShotGroup::Medium);
  r.few_shot = group_mean(ShotGroup::Few);
  if (!missing.empty()) {
    r.warnings.push_back(std::to_string(missing.size()) +
                         " class(es) have no test samples and are excluded from macro averages");
  }
  return r;
}

std::vector<std::uint32_t> argmax_rows(const Matrix& scores) {
  std::vector<std::uint32_t> out(scores.rows(), 0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto row = scores.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

Matrix predict_logits(const DecoderHead& head, const Calibrator* calibrator,
                      const FeatureDataset& ds) {
  FrozenOutputs frozen = frozen_outputs(head, ds);
  if (!calibrator) return std::move(frozen.logits);
  const CalibContext ctx{std::move(frozen.pooled), std::move(frozen.logits),
                         classifier_row_norms(head.classifier_weight)};
  return apply(*calibrator, ctx, nullptr);
}

EvalReport evaluate(const DecoderHead& head, const Calibrator* calibrator,
                    const FeatureDataset& test, const ClassStats& train_stats) {
  test.validate();
  if (test.num_classes != head.config.num_classes) {
    throw ShapeError("evaluate: test set has " + std::to_string(test.num_classes) +
                     " classes, head has " + std::to_string(head.config.num_classes));
  }
  EvalReport report;
  if (test.num_samples == 0) {
    report = compute_report({}, {}, test.num_classes, &train_stats);
  } else {
    const auto predictions = argmax_rows(predict_logits(head, calibrator, test));
    report = compute_report(predictions, test.labels, test.num_classes, &train_stats);
  }
  if (!test.is_class_balanced()) {
    report.warnings.push_back("test set is not class-balanced; macro recall will differ from overall accuracy");
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

std::string percent(const std::optional<double>& v) { return v ? percent(*v) : "n/a"; }

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string format_report_text(const EvalReport& r, const std::string& title) {
  std::ostringstream os;
  os << "report: " << title << "\n"
     << "samples: " << r.num_samples << "\n"
     << "overall: " << percent(r.overall_accuracy) << "\n"
     << "many-shot: " << percent(r.many_shot) << "\n"
     << "medium-shot: " << percent(r.medium_shot) << "\n"
     << "few-shot: " << percent(r.few_shot) << "\n"
     << "precision: " << percent(r.macro_precision) << "\n"
     << "recall: " << percent(r.macro_recall) << "\n"
     << "f1: " << percent(r.macro_f1) << "\n"
     << "fingerprint: " << (r.fingerprint.empty() ? "-" : r.fingerprint) << "\n";
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  return os.str();
}

std::string report_to_json(const EvalReport& r, const std::string& title) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& a : r.per_class_accuracy) per_class.push_back(optional_json(a));
  nlohmann::json j = {
      {"title", title},
      {"num_samples", r.num_samples},
      {"overall_accuracy", r.overall_accuracy},
      {"many_shot", optional_json(r.many_shot)},
      {"medium_shot", optional_json(r.medium_shot)},
      {"few_shot", optional_json(r.few_shot)},
      {"macro_precision", r.macro_precision},
      {"macro_recall", r.macro_recall},
      {"macro_f1", r.macro_f1},
      {"per_class_accuracy", per_class},
      {"fingerprint", r.fingerprint},
      {"warnings", r.warnings},
  };
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text, std::string* title) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    EvalReport r;
    r.num_samples = j.at("num_samples").get<std::size_t>();
    r.overall_accuracy = j.at("overall_accuracy").get<double>();
    r.many_shot = optional_from(j.at("many_shot"));
    r.medium_shot = optional_from(j.at("medium_shot"));
    r.few_shot = optional_from(j.at("few_shot"));
    r.macro_precision = j.at("macro_precision").get<double>();
    r.macro_recall = j.at("macro_recall").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    for (const auto& a : j.at("per_class_accuracy")) r.per_class_accuracy.push_back(optional_from(a));
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (title) *title = j.at("title").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid report document: ") + e.what(), 0);
  }
}

}  // namespace lthead
