#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "lthead/calibrators.hpp"
#include "lthead/data.hpp"
#include "lthead/decoder.hpp"
#include "lthead/losses.hpp"

namespace lthead {

struct TrainConfig {
  std::size_t total_iters = 8192;
  std::size_t batch_size = 256;
  double lr0 = 0.03;
  std::size_t warmup_iters = 512;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  LossConfig stage1_loss;
  std::optional<CalibratorKind> stage2;
  std::size_t stage2_iters = 2048;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Linear warmup to lr0, then half-cosine decay to zero at total_iters.
struct LrSchedule {
  double lr0 = 0.03;
  std::size_t warmup_iters = 512;
  std::size_t total_iters = 8192;
};

LrSchedule stage1_schedule(const TrainConfig& cfg);
/// Same shape as stage 1 with the warmup scaled to the stage-two length.
LrSchedule stage2_schedule(const TrainConfig& cfg);

double lr_at(const LrSchedule& schedule, std::size_t iter);
double lr_at(const TrainConfig& cfg, std::size_t iter);

struct MomentumState {
  std::vector<Matrix> velocity;

  static MomentumState zeros_like(const ParamRefs& params);
};

struct SgdOptions {
  double lr = 0.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// Classic SGD with L2 folded into the gradient:
///   g = grad + wd * p;  v = momentum * v + g;  p -= lr * v
void sgd_step(const ParamRefs& params, const ParamRefs& grads, MomentumState& state,
              const SgdOptions& options);

struct IterRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};
using TrainingLog = std::vector<IterRecord>;

struct Stage1Result {
  DecoderHead head;
  ClassStats stats;
  TrainingLog log;
};

/// Trains decoder + classifier on frozen features with instance-balanced
/// sampling and the configured loss. `decoder` supplies depth/heads/mlp/dropout;
/// dim and num_classes are taken from the dataset.
Stage1Result train_stage1(const FeatureDataset& ds, const TrainConfig& cfg,
                          const DecoderConfig& decoder, const Rng& rng);

/// Eval-mode pooled features and logits of a frozen head over a whole dataset.
struct FrozenOutputs {
  Matrix pooled;  // N x D
  Matrix logits;  // N x K
};
FrozenOutputs frozen_outputs(const DecoderHead& head, const FeatureDataset& ds);

SamplerStrategy stage2_sampler(CalibratorKind kind);
/// CE for CRT/LWS, class-balanced re-weighting for DisAlign, Balanced Softmax for MARC.
LossSpec stage2_loss(CalibratorKind kind, const ClassStats& stats);

struct Stage2Result {
  Calibrator calibrator;
  TrainingLog log;
};

/// Fits the adjuster on top of a frozen head; only the calibrator is updated.
Stage2Result train_stage2(const DecoderHead& head, const FeatureDataset& ds,
                          const TrainConfig& cfg, CalibratorKind kind, const Rng& rng);

}  // namespace lthead
