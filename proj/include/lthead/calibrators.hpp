#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "lthead/numerics.hpp"

namespace lthead {

enum class CalibratorKind : std::uint8_t { CRT = 1, LWS = 2, DisAlign = 3, MARC = 4 };

std::string_view to_string(CalibratorKind kind);
/// Accepts crt, lws, disalign, marc.
CalibratorKind parse_calibrator_kind(std::string_view name);

/// Stage-two logit adjuster. Only the fields of the active kind are populated:
///   CRT       fresh classifier weight (K x D) and bias (1 x K)
///   LWS       per-class scales (1 x K)
///   DisAlign  scale alpha, shift beta (1 x K), confidence weight (1 x D) and bias (1 x 1)
///   MARC      omega and beta (1 x K each), 2K parameters in total
struct Calibrator {
  CalibratorKind kind = CalibratorKind::LWS;
  std::size_t num_classes = 0;
  std::size_t dim = 0;

  Matrix weight;  // CRT
  Matrix bias;    // CRT
  Matrix scale;   // LWS s, DisAlign alpha, MARC omega
  Matrix shift;   // DisAlign beta, MARC beta
  Matrix conf_weight;  // DisAlign
  Matrix conf_bias;    // DisAlign

  /// Trainable tensors in serialization order.
  ParamRefs params();
  std::size_t parameter_count() const;
  /// Same kind and shapes, all entries zero.
  Calibrator zeros_like() const;

  friend bool operator==(const Calibrator&, const Calibrator&) = default;
};

/// Per-batch inputs: pooled features z, raw logits eta, and row norms of the
/// frozen classifier.
struct CalibContext {
  Matrix pooled;                      // B x D
  Matrix logits;                      // B x K
  std::vector<double> weight_norms;   // K
};

std::vector<double> classifier_row_norms(const Matrix& classifier_weight);

/// CRT draws a fresh fan-in initialized classifier from `rng`; the other kinds
/// start at their identity configuration and ignore `rng`.
Calibrator init_calibrator(CalibratorKind kind, std::size_t num_classes, std::size_t dim,
                           Rng& rng);

struct CalibCache {
  CalibratorKind kind = CalibratorKind::LWS;
  std::size_t batch = 0;
  Matrix pooled;
  Matrix logits;
  std::vector<double> weight_norms;
  std::vector<double> confidence;  // DisAlign sigma per sample
};

Matrix apply(const Calibrator& cal, const CalibContext& ctx, CalibCache* cache);

struct CalibGradients {
  Calibrator params;
  Matrix dlogits;  // zero for CRT, which ignores the raw logits
  Matrix dpooled;  // zero for LWS and MARC
};

CalibGradients calibrator_backward(const Calibrator& cal, const CalibCache& cache,
                                   const Matrix& dadjusted);

}  // namespace lthead
