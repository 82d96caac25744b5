#include "lthead/calibrators.hpp"

#include <cmath>
#include <string>

#include "lthead/errors.hpp"

namespace lthead {

std::string_view to_string(CalibratorKind kind) {
  switch (kind) {
    case CalibratorKind::CRT: return "crt";
    case CalibratorKind::LWS: return "lws";
    case CalibratorKind::DisAlign: return "disalign";
    case CalibratorKind::MARC: return "marc";
  }
  return "?";
}

CalibratorKind parse_calibrator_kind(std::string_view name) {
  for (auto k : {CalibratorKind::CRT, CalibratorKind::LWS, CalibratorKind::DisAlign,
                 CalibratorKind::MARC}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown calibrator '" + std::string(name) + "'");
}

ParamRefs Calibrator::params() {
  switch (kind) {
    case CalibratorKind::CRT: return {{"crt.weight", &weight}, {"crt.bias", &bias}};
    case CalibratorKind::LWS: return {{"lws.scale", &scale}};
    case CalibratorKind::DisAlign:
      return {{"disalign.alpha", &scale},
              {"disalign.beta", &shift},
              {"disalign.conf_weight", &conf_weight},
              {"disalign.conf_bias", &conf_bias}};
    case CalibratorKind::MARC: return {{"marc.omega", &scale}, {"marc.beta", &shift}};
  }
  return {};
}

std::size_t Calibrator::parameter_count() const {
  return weight.size() + bias.size() + scale.size() + shift.size() + conf_weight.size() +
         conf_bias.size();
}

Calibrator Calibrator::zeros_like() const {
  Calibrator z = *this;
  for (auto& p : z.params()) p.value->fill(0.0);
  return z;
}

std::vector<double> classifier_row_norms(const Matrix& w) {
  std::vector<double> norms(w.rows());
  for (std::size_t j = 0; j < w.rows(); ++j) {
    double s = 0.0;
    for (double v : w.row(j)) s += v * v;
    norms[j] = std::sqrt(s);
  }
  return norms;
}

Calibrator init_calibrator(CalibratorKind kind, std::size_t num_classes, std::size_t dim,
                           Rng& rng) {
  if (num_classes == 0 || dim == 0) throw ConfigError("init_calibrator: empty dimensions");
  Calibrator cal;
  cal.kind = kind;
  cal.num_classes = num_classes;
  cal.dim = dim;
  switch (kind) {
    case CalibratorKind::CRT: {
      cal.weight = Matrix(num_classes, dim);
      cal.bias = Matrix(1, num_classes);
      const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
      for (double& v : cal.weight.values()) v = rng.uniform(-bound, bound);
      break;
    }
    case CalibratorKind::LWS:
      cal.scale = Matrix(1, num_classes, 1.0);
      break;
    case CalibratorKind::DisAlign:
      cal.scale = Matrix(1, num_classes, 1.0);
      cal.shift = Matrix(1, num_classes);
      cal.conf_weight = Matrix(1, dim);
      cal.conf_bias = Matrix(1, 1);
      break;
    case CalibratorKind::MARC:
      cal.scale = Matrix(1, num_classes, 1.0);
      cal.shift = Matrix(1, num_classes);
      break;
  }
  return cal;
}

namespace {

double logistic(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_context(const Calibrator& cal, const CalibContext& ctx) {
  const std::size_t k = cal.num_classes, d = cal.dim;
  const bool needs_pooled = cal.kind == CalibratorKind::CRT || cal.kind == CalibratorKind::DisAlign;
  const bool needs_logits = cal.kind != CalibratorKind::CRT;
  if (needs_logits && ctx.logits.cols() != k) {
    throw ShapeError("calibrator: logits have " + std::to_string(ctx.logits.cols()) +
                     " classes, expected " + std::to_string(k));
  }
  if (needs_pooled && ctx.pooled.cols() != d) {
    throw ShapeError("calibrator: pooled features have dim " + std::to_string(ctx.pooled.cols()) +
                     ", expected " + std::to_string(d));
  }
  if (needs_pooled && needs_logits && ctx.pooled.rows() != ctx.logits.rows()) {
    throw ShapeError("calibrator: pooled and logit batch sizes differ");
  }
  if (cal.kind == CalibratorKind::MARC && ctx.weight_norms.size() != k) {
    throw ShapeError("calibrator: MARC needs one classifier norm per class");
  }
}

}  // namespace

Matrix apply(const Calibrator& cal, const CalibContext& ctx, CalibCache* cache) {
  check_context(cal, ctx);
  const std::size_t k = cal.num_classes;
  const std::size_t batch = cal.kind == CalibratorKind::CRT ? ctx.pooled.rows() : ctx.logits.rows();
  Matrix out(batch, k);
  std::vector<double> confidence;

  switch (cal.kind) {
    case CalibratorKind::CRT: {
      out = matmul_bt(ctx.pooled, cal.weight);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) out(b, j) += cal.bias.data()[j];
      }
      break;
    }
    case CalibratorKind::LWS:
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) out(b, j) = cal.scale.data()[j] * ctx.logits(b, j);
      }
      break;
    case CalibratorKind::DisAlign: {
      confidence.resize(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        double pre = cal.conf_bias.data()[0];
        const auto z = ctx.pooled.row(b);
        for (std::size_t i = 0; i < z.size(); ++i) pre += cal.conf_weight.data()[i] * z[i];
        const double sigma = logistic(pre);
        confidence[b] = sigma;
        for (std::size_t j = 0; j < k; ++j) {
          const double eta = ctx.logits(b, j);
          // sigma * (alpha * eta + beta) + (1 - sigma) * eta, arranged so the
          // identity parameters reproduce eta bit for bit.
          out(b, j) = eta + sigma * ((cal.scale.data()[j] - 1.0) * eta + cal.shift.data()[j]);
        }
      }
      break;
    }
    case CalibratorKind::MARC:
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          out(b, j) = cal.scale.data()[j] * ctx.logits(b, j) +
                      cal.shift.data()[j] * ctx.weight_norms[j];
        }
      }
      break;
  }

  if (cache) {
    cache->kind = cal.kind;
    cache->batch = batch;
    cache->pooled = ctx.pooled;
    cache->logits = ctx.logits;
    cache->weight_norms = ctx.weight_norms;
    cache->confidence = std::move(confidence);
  }
  return out;
}

CalibGradients calibrator_backward(const Calibrator& cal, const CalibCache& cache,
                                   const Matrix& dout) {
  const std::size_t k = cal.num_classes, d = cal.dim;
  if (cache.kind != cal.kind || dout.rows() != cache.batch || dout.cols() != k) {
    throw StateError("calibrator_backward: cache does not match this calibrator and gradient");
  }
  const std::size_t batch = cache.batch;
  CalibGradients g{cal.zeros_like(), Matrix(batch, k), Matrix(batch, d)};

  switch (cal.kind) {
    case CalibratorKind::CRT: {
      const Matrix dw = matmul_at(dout, cache.pooled);
      g.params.weight = dw;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) g.params.bias.data()[j] += dout(b, j);
      }
      g.dpooled = matmul(dout, cal.weight);
      break;
    }
    case CalibratorKind::LWS:
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          g.params.scale.data()[j] += cache.logits(b, j) * dout(b, j);
          g.dlogits(b, j) = cal.scale.data()[j] * dout(b, j);
        }
      }
      break;
    case CalibratorKind::DisAlign:
      for (std::size_t b = 0; b < batch; ++b) {
        const double sigma = cache.confidence[b];
        double dsigma = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const double eta = cache.logits(b, j);
          const double alpha = cal.scale.data()[j];
          const double go = dout(b, j);
          g.params.scale.data()[j] += sigma * eta * go;
          g.params.shift.data()[j] += sigma * go;
          dsigma += go * ((alpha - 1.0) * eta + cal.shift.data()[j]);
          g.dlogits(b, j) = go * (1.0 + sigma * (alpha - 1.0));
        }
        const double dpre = dsigma * sigma * (1.0 - sigma);
        g.params.conf_bias.data()[0] += dpre;
        const auto z = cache.pooled.row(b);
        auto dz = g.dpooled.row(b);
        for (std::size_t i = 0; i < d; ++i) {
          g.params.conf_weight.data()[i] += dpre * z[i];
          dz[i] = dpre * cal.conf_weight.data()[i];
        }
      }
      break;
    case CalibratorKind::MARC:
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          g.params.scale.data()[j] += cache.logits(b, j) * dout(b, j);
          g.params.shift.data()[j] += cache.weight_norms[j] * dout(b, j);
          g.dlogits(b, j) = cal.scale.data()[j] * dout(b, j);
        }
      }
      break;
  }
  return g;
}

}  // namespace lthead
