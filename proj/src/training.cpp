#include "lthead/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lthead/errors.hpp"

namespace lthead {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (total_iters > 0 && warmup_iters >= total_iters) {
    throw ConfigError("warmup_iters must be smaller than total_iters");
  }
  if (!(momentum >= 0.0) || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

LrSchedule stage1_schedule(const TrainConfig& cfg) {
  return {cfg.lr0, cfg.warmup_iters, cfg.total_iters};
}

LrSchedule stage2_schedule(const TrainConfig& cfg) {
  std::size_t warmup = 0;
  if (cfg.total_iters > 0) warmup = cfg.warmup_iters * cfg.stage2_iters / cfg.total_iters;
  return {cfg.lr0, warmup, cfg.stage2_iters};
}

double lr_at(const LrSchedule& s, std::size_t iter) {
  if (iter >= s.total_iters) {
    throw DomainError("lr_at: iteration " + std::to_string(iter) + " outside [0, " +
                      std::to_string(s.total_iters) + ")");
  }
  if (iter < s.warmup_iters) {
    return s.lr0 * static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
  }
  const double progress = static_cast<double>(iter - s.warmup_iters) /
                          static_cast<double>(s.total_iters - s.warmup_iters);
  return s.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double lr_at(const TrainConfig& cfg, std::size_t iter) { return lr_at(stage1_schedule(cfg), iter); }

MomentumState MomentumState::zeros_like(const ParamRefs& params) {
  MomentumState s;
  s.velocity.reserve(params.size());
  for (const auto& p : params) s.velocity.emplace_back(p.value->rows(), p.value->cols());
  return s;
}

void sgd_step(const ParamRefs& params, const ParamRefs& grads, MomentumState& state,
              const SgdOptions& o) {
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity lists differ in length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i].value;
    const Matrix& g = *grads[i].value;
    Matrix& v = state.velocity[i];
    if (!p.same_shape(g) || !p.same_shape(v)) {
      throw ShapeError("sgd_step: shape mismatch for " + params[i].name);
    }
    double* pd = p.data();
    const double* gd = g.data();
    double* vd = v.data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double step = gd[k] + o.weight_decay * pd[k];
      vd[k] = o.momentum * vd[k] + step;
      pd[k] -= o.lr * vd[k];
    }
  }
}

namespace {

void require_finite(const ParamRefs& params, const char* stage, std::size_t iter) {
  for (const auto& p : params) {
    if (!p.value->all_finite()) throw DivergenceError(stage, static_cast<long>(iter));
  }
}

}  // namespace

Stage1Result train_stage1(const FeatureDataset& ds, const TrainConfig& cfg,
                          const DecoderConfig& decoder, const Rng& rng) {
  cfg.validate();
  ds.validate();
  DecoderConfig dc = decoder;
  dc.dim = ds.dim;
  dc.num_classes = ds.num_classes;
  dc.validate();

  Stage1Result result;
  result.stats = ds.class_stats();
  const LossSpec spec = make_loss_spec(cfg.stage1_loss, result.stats);

  Rng init_rng = rng.substream(1);
  Rng sample_rng = rng.substream(2);
  Rng dropout_rng = rng.substream(3);
  result.head = init_decoder(dc, init_rng);
  if (cfg.total_iters == 0) return result;

  const BatchSampler sampler(ds, SamplerStrategy::InstanceBalanced);
  const LrSchedule schedule = stage1_schedule(cfg);
  MomentumState momentum = MomentumState::zeros_like(result.head.params());
  result.log.reserve(cfg.total_iters);

  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    const auto idx = sampler.sample(cfg.batch_size, sample_rng);
    const Matrix tokens = ds.gather(idx);
    const auto labels = ds.gather_labels(idx);

    ForwardCache cache;
    const Matrix logits = forward(result.head, tokens, ds.tokens, dropout_rng, true, &cache);
    const LossResult loss = loss_eval(spec, logits, labels);
    if (!std::isfinite(loss.value)) throw DivergenceError("stage 1", static_cast<long>(it));

    HeadGradients grads = backward(result.head, cache, loss.dlogits, false);
    const double lr = lr_at(schedule, it);
    const ParamRefs params = result.head.params();
    sgd_step(params, grads.params.params(), momentum, {lr, cfg.momentum, cfg.weight_decay});
    require_finite(params, "stage 1", it);
    result.log.push_back({it, lr, loss.value});
  }
  return result;
}

FrozenOutputs frozen_outputs(const DecoderHead& head, const FeatureDataset& ds) {
  if (ds.dim != head.config.dim) {
    throw ShapeError("frozen_outputs: dataset dim " + std::to_string(ds.dim) + " != head dim " +
                     std::to_string(head.config.dim));
  }
  FrozenOutputs out{Matrix(ds.num_samples, head.config.dim),
                    Matrix(ds.num_samples, head.config.num_classes)};
  constexpr std::size_t kChunk = 512;
  Rng unused(0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.num_samples; start += kChunk) {
    const std::size_t n = std::min(kChunk, ds.num_samples - start);
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
    ForwardCache cache;
    forward(head, ds.gather(idx), ds.tokens, unused, false, &cache);
    std::copy(cache.pooled.values().begin(), cache.pooled.values().end(),
              out.pooled.data() + start * head.config.dim);
    std::copy(cache.logits.values().begin(), cache.logits.values().end(),
              out.logits.data() + start * head.config.num_classes);
  }
  return out;
}

SamplerStrategy stage2_sampler(CalibratorKind kind) {
  return kind == CalibratorKind::CRT || kind == CalibratorKind::LWS
             ? SamplerStrategy::ClassBalanced
             : SamplerStrategy::InstanceBalanced;
}

LossSpec stage2_loss(CalibratorKind kind, const ClassStats& stats) {
  LossConfig lc;
  switch (kind) {
    case CalibratorKind::CRT:
    case CalibratorKind::LWS: lc.variant = LossVariant::CE; break;
    case CalibratorKind::DisAlign: lc.variant = LossVariant::CBW; break;
    case CalibratorKind::MARC: lc.variant = LossVariant::BalancedSoftmax; break;
  }
  return make_loss_spec(lc, stats);
}

namespace {

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto src = m.row(idx[b]);
    std::copy(src.begin(), src.end(), out.row(b).begin());
  }
  return out;
}

}  // namespace

Stage2Result train_stage2(const DecoderHead& head, const FeatureDataset& ds,
                          const TrainConfig& cfg, CalibratorKind kind, const Rng& rng) {
  cfg.validate();
  ds.validate();
  if (ds.num_classes != head.config.num_classes) {
    throw ShapeError("train_stage2: dataset has " + std::to_string(ds.num_classes) +
                     " classes, head has " + std::to_string(head.config.num_classes));
  }
  const ClassStats stats = ds.class_stats();
  Rng init_rng = rng.substream(1);
  Rng sample_rng = rng.substream(2);

  Stage2Result result{init_calibrator(kind, head.config.num_classes, head.config.dim, init_rng), {}};
  if (cfg.stage2_iters == 0) return result;

  const LossSpec spec = stage2_loss(kind, stats);
  const FrozenOutputs frozen = frozen_outputs(head, ds);
  const std::vector<double> norms = classifier_row_norms(head.classifier_weight);
  const BatchSampler sampler(ds, stage2_sampler(kind));
  const LrSchedule schedule = stage2_schedule(cfg);
  // Decay only applies to the fresh CRT classifier; pulling the identity-initialized
  // adjusters toward zero would bias them away from the stage-one logits.
  const double decay = kind == CalibratorKind::CRT ? cfg.weight_decay : 0.0;
  MomentumState momentum = MomentumState::zeros_like(result.calibrator.params());
  result.log.reserve(cfg.stage2_iters);

  for (std::size_t it = 0; it < cfg.stage2_iters; ++it) {
    const auto idx = sampler.sample(cfg.batch_size, sample_rng);
    const auto labels = ds.gather_labels(idx);
    const CalibContext ctx{gather_rows(frozen.pooled, idx), gather_rows(frozen.logits, idx), norms};
    CalibCache cache;
    const Matrix adjusted = apply(result.calibrator, ctx, &cache);
    const LossResult loss = loss_eval(spec, adjusted, labels);
    if (!std::isfinite(loss.value)) throw DivergenceError("stage 2", static_cast<long>(it));

    CalibGradients grads = calibrator_backward(result.calibrator, cache, loss.dlogits);
    const double lr = lr_at(schedule, it);
    const ParamRefs params = result.calibrator.params();
    sgd_step(params, grads.params.params(), momentum, {lr, cfg.momentum, decay});
    require_finite(params, "stage 2", it);
    result.log.push_back({it, lr, loss.value});
  }
  return result;
}

}  // namespace lthead
