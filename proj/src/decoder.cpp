#include "lthead/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lthead/errors.hpp"

namespace lthead {

std::size_t DecoderConfig::mlp_hidden() const {
  return static_cast<std::size_t>(static_cast<double>(dim) * mlp_ratio);
}

void DecoderConfig::validate() const {
  if (dim == 0) throw ConfigError("decoder: dim must be positive");
  if (num_classes == 0) throw ConfigError("decoder: num_classes must be positive");
  if (!(dropout >= 0.0) || dropout >= 1.0) throw ConfigError("decoder: dropout must lie in [0, 1)");
  if (depth > 0) {
    if (heads == 0 || dim % heads != 0) {
      throw ConfigError("decoder: dim " + std::to_string(dim) + " is not divisible by heads " +
                        std::to_string(heads));
    }
    if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) {
      throw ConfigError("decoder: mlp_ratio must give a positive hidden width");
    }
  }
}

BlockParams BlockParams::zeros(std::size_t dim, std::size_t hidden) {
  return BlockParams{Matrix(1, dim),          Matrix(1, dim),     Matrix(3 * dim, dim),
                     Matrix(1, 3 * dim),      Matrix(dim, dim),   Matrix(1, dim),
                     Matrix(1, dim),          Matrix(1, dim),     Matrix(hidden, dim),
                     Matrix(1, hidden),       Matrix(dim, hidden), Matrix(1, dim)};
}

ParamRefs BlockParams::params(const std::string& prefix) {
  return {{prefix + "ln1_gamma", &ln1_gamma},     {prefix + "ln1_beta", &ln1_beta},
          {prefix + "qkv_weight", &qkv_weight},   {prefix + "qkv_bias", &qkv_bias},
          {prefix + "proj_weight", &proj_weight}, {prefix + "proj_bias", &proj_bias},
          {prefix + "ln2_gamma", &ln2_gamma},     {prefix + "ln2_beta", &ln2_beta},
          {prefix + "fc1_weight", &fc1_weight},   {prefix + "fc1_bias", &fc1_bias},
          {prefix + "fc2_weight", &fc2_weight},   {prefix + "fc2_bias", &fc2_bias}};
}

DecoderHead DecoderHead::zeros(const DecoderConfig& config) {
  config.validate();
  DecoderHead head;
  head.config = config;
  for (std::size_t i = 0; i < config.depth; ++i) {
    head.blocks.push_back(BlockParams::zeros(config.dim, config.mlp_hidden()));
  }
  head.classifier_weight = Matrix(config.num_classes, config.dim);
  head.classifier_bias = Matrix(1, config.num_classes);
  return head;
}

ParamRefs DecoderHead::params() {
  ParamRefs refs;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto block = blocks[i].params("blocks." + std::to_string(i) + ".");
    refs.insert(refs.end(), block.begin(), block.end());
  }
  refs.push_back({"classifier.weight", &classifier_weight});
  refs.push_back({"classifier.bias", &classifier_bias});
  return refs;
}

std::size_t DecoderHead::parameter_count() const {
  return total_size(const_cast<DecoderHead*>(this)->params());
}

namespace {

void fill_fan_in(Matrix& m, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
}

}  // namespace

DecoderHead init_decoder(const DecoderConfig& config, Rng& rng) {
  DecoderHead head = DecoderHead::zeros(config);
  const std::size_t d = config.dim, h = config.mlp_hidden();
  for (auto& b : head.blocks) {
    b.ln1_gamma.fill(1.0);
    fill_fan_in(b.qkv_weight, d, rng);
    fill_fan_in(b.qkv_bias, d, rng);
    fill_fan_in(b.proj_weight, d, rng);
    fill_fan_in(b.proj_bias, d, rng);
    b.ln2_gamma.fill(1.0);
    fill_fan_in(b.fc1_weight, d, rng);
    fill_fan_in(b.fc1_bias, d, rng);
    fill_fan_in(b.fc2_weight, h, rng);
    fill_fan_in(b.fc2_bias, h, rng);
  }
  fill_fan_in(head.classifier_weight, d, rng);
  return head;
}

// ---------------------------------------------------------------------------
// Linear layers. Weights are stored out x in; y = x W^T + b.

namespace {

Matrix weight_rows(const Matrix& w, std::size_t begin, std::size_t count) {
  Matrix out(count, w.cols());
  std::copy_n(w.data() + begin * w.cols(), count * w.cols(), out.data());
  return out;
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b, std::size_t row_begin,
              std::size_t row_count) {
  Matrix y = matmul_bt(x, row_begin == 0 && row_count == w.rows()
                               ? w
                               : weight_rows(w, row_begin, row_count));
  const double* bias = b.data() + row_begin;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto yr = y.row(r);
    for (std::size_t c = 0; c < row_count; ++c) yr[c] += bias[c];
  }
  return y;
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  return linear(x, w, b, 0, w.rows());
}

// Accumulates dW (rows row_begin..) and db, returns dx.
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db,
                       std::size_t row_begin) {
  const std::size_t out = dy.cols();
  const Matrix wsub = (row_begin == 0 && out == w.rows()) ? w : weight_rows(w, row_begin, out);
  const Matrix dwsub = matmul_at(dy, x);
  double* dwd = dw.data() + row_begin * w.cols();
  for (std::size_t i = 0; i < dwsub.size(); ++i) dwd[i] += dwsub.data()[i];
  double* dbd = db.data() + row_begin;
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const auto dyr = dy.row(r);
    for (std::size_t c = 0; c < out; ++c) dbd[c] += dyr[c];
  }
  return matmul(dy, wsub);
}

Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw,
                       Matrix& db) {
  return linear_backward(x, w, dy, dw, db, 0);
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

void check_tokens(const DecoderConfig& config, const Matrix& tokens, std::size_t per_sample) {
  if (tokens.cols() != config.dim) {
    throw ShapeError("decoder: token dim " + std::to_string(tokens.cols()) + " != " +
                     std::to_string(config.dim));
  }
  if (per_sample == 0 || tokens.rows() % per_sample != 0) {
    throw ShapeError("decoder: " + std::to_string(tokens.rows()) +
                     " token rows do not split into samples of " + std::to_string(per_sample));
  }
}

// Multi-head scaled dot-product self-attention within each sample.
Matrix attention_forward(const Matrix& qkv, std::size_t per_sample, std::size_t dim,
                         std::size_t heads, std::vector<double>& attn) {
  const std::size_t t = per_sample, hd = dim / heads, samples = qkv.rows() / t;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix out(qkv.rows(), dim);
  attn.assign(samples * heads * t * t, 0.0);
  std::vector<double> scores(t);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t r0 = s * t;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qo = h * hd, ko = dim + h * hd, vo = 2 * dim + h * hd;
      double* a = attn.data() + (s * heads + h) * t * t;
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dot += qkv(r0 + i, qo + c) * qkv(r0 + j, ko + c);
          scores[j] = dot * scale;
        }
        const double lse = log_sum_exp(scores);
        for (std::size_t j = 0; j < t; ++j) a[i * t + j] = std::exp(scores[j] - lse);
        for (std::size_t j = 0; j < t; ++j) {
          const double w = a[i * t + j];
          for (std::size_t c = 0; c < hd; ++c) out(r0 + i, qo + c) += w * qkv(r0 + j, vo + c);
        }
      }
    }
  }
  return out;
}

Matrix attention_backward(const Matrix& qkv, const std::vector<double>& attn, const Matrix& dout,
                          std::size_t per_sample, std::size_t dim, std::size_t heads) {
  const std::size_t t = per_sample, hd = dim / heads, samples = qkv.rows() / t;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix dqkv(qkv.rows(), 3 * dim);
  std::vector<double> da(t), ds(t);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t r0 = s * t;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qo = h * hd, ko = dim + h * hd, vo = 2 * dim + h * hd;
      const double* a = attn.data() + (s * heads + h) * t * t;
      for (std::size_t i = 0; i < t; ++i) {
        double weighted = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dot += dout(r0 + i, qo + c) * qkv(r0 + j, vo + c);
          da[j] = dot;
          weighted += a[i * t + j] * dot;
          for (std::size_t c = 0; c < hd; ++c) {
            dqkv(r0 + j, vo + c) += a[i * t + j] * dout(r0 + i, qo + c);
          }
        }
        for (std::size_t j = 0; j < t; ++j) ds[j] = a[i * t + j] * (da[j] - weighted) * scale;
        for (std::size_t j = 0; j < t; ++j) {
          for (std::size_t c = 0; c < hd; ++c) {
            dqkv(r0 + i, qo + c) += ds[j] * qkv(r0 + j, ko + c);
            dqkv(r0 + j, ko + c) += ds[j] * qkv(r0 + i, qo + c);
          }
        }
      }
    }
  }
  return dqkv;
}

}  // namespace

Matrix block_forward(const BlockParams& p, const DecoderConfig& config, const Matrix& tokens,
                     std::size_t tokens_per_sample, Rng& rng, bool train_mode, BlockCache* cache) {
  check_tokens(config, tokens, tokens_per_sample);
  const std::size_t d = config.dim;
  BlockCache local;
  BlockCache& c = cache ? *cache : local;
  c.tokens = tokens_per_sample;
  c.input = tokens;

  c.ln1_out = layer_norm(tokens, p.ln1_gamma, p.ln1_beta, kLayerNormEps, &c.ln1);
  if (tokens_per_sample == 1) {
    // A single key gets attention weight exactly 1, so the output is V itself
    // and the query/key projections cannot influence anything.
    c.qkv = Matrix();
    c.attn.clear();
    c.attn_out = linear(c.ln1_out, p.qkv_weight, p.qkv_bias, 2 * d, d);
  } else {
    c.qkv = linear(c.ln1_out, p.qkv_weight, p.qkv_bias);
    c.attn_out = attention_forward(c.qkv, tokens_per_sample, d, config.heads, c.attn);
  }
  c.after_attn = linear(c.attn_out, p.proj_weight, p.proj_bias);
  add_into(c.after_attn, tokens);

  c.ln2_out = layer_norm(c.after_attn, p.ln2_gamma, p.ln2_beta, kLayerNormEps, &c.ln2);
  c.fc1_pre = linear(c.ln2_out, p.fc1_weight, p.fc1_bias);
  c.fc1_act = Matrix(c.fc1_pre.rows(), c.fc1_pre.cols());
  c.fc1_tanh = Matrix(c.fc1_pre.rows(), c.fc1_pre.cols());
  for (std::size_t i = 0; i < c.fc1_pre.size(); ++i) {
    const double x = c.fc1_pre.data()[i];
    const double t = gelu_tanh(x);
    c.fc1_tanh.data()[i] = t;
    c.fc1_act.data()[i] = 0.5 * x * (1.0 + t);
  }
  Matrix out = linear(c.fc1_act, p.fc2_weight, p.fc2_bias);
  c.mask = dropout_mask(out.rows(), out.cols(), config.dropout, rng, train_mode);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = c.after_attn.data()[i] + c.mask.data()[i] * out.data()[i];
  }
  return out;
}

Matrix block_backward(const BlockParams& p, const DecoderConfig& config, const BlockCache& c,
                      const Matrix& dout, BlockParams& g) {
  const std::size_t d = config.dim;
  if (!dout.same_shape(c.input) || c.mask.size() != dout.size()) {
    throw StateError("block_backward: cache does not match the upstream gradient");
  }
  // MLP branch.
  Matrix dfc2(dout.rows(), dout.cols());
  for (std::size_t i = 0; i < dout.size(); ++i) dfc2.data()[i] = dout.data()[i] * c.mask.data()[i];
  Matrix dact = linear_backward(c.fc1_act, p.fc2_weight, dfc2, g.fc2_weight, g.fc2_bias);
  for (std::size_t i = 0; i < dact.size(); ++i) {
    dact.data()[i] *= gelu_derivative_from_tanh(c.fc1_pre.data()[i], c.fc1_tanh.data()[i]);
  }
  Matrix dln2 = linear_backward(c.ln2_out, p.fc1_weight, dact, g.fc1_weight, g.fc1_bias);
  LayerNormGrads ln2 = layer_norm_backward(c.ln2, p.ln2_gamma, dln2);
  add_into(g.ln2_gamma, ln2.dgamma);
  add_into(g.ln2_beta, ln2.dbeta);
  Matrix dmid = dout;
  add_into(dmid, ln2.dx);

  // Attention branch.
  Matrix dattn = linear_backward(c.attn_out, p.proj_weight, dmid, g.proj_weight, g.proj_bias);
  Matrix dln1;
  if (c.tokens == 1) {
    dln1 = linear_backward(c.ln1_out, p.qkv_weight, dattn, g.qkv_weight, g.qkv_bias, 2 * d);
  } else {
    Matrix dqkv = attention_backward(c.qkv, c.attn, dattn, c.tokens, d, config.heads);
    dln1 = linear_backward(c.ln1_out, p.qkv_weight, dqkv, g.qkv_weight, g.qkv_bias);
  }
  LayerNormGrads ln1 = layer_norm_backward(c.ln1, p.ln1_gamma, dln1);
  add_into(g.ln1_gamma, ln1.dgamma);
  add_into(g.ln1_beta, ln1.dbeta);
  add_into(dmid, ln1.dx);
  return dmid;
}

// ---------------------------------------------------------------------------

Matrix forward(const DecoderHead& head, const Matrix& tokens, std::size_t tokens_per_sample,
               Rng& rng, bool train_mode, ForwardCache* cache) {
  const DecoderConfig& cfg = head.config;
  check_tokens(cfg, tokens, tokens_per_sample);
  const std::size_t batch = tokens.rows() / tokens_per_sample;
  if (batch == 0) throw ShapeError("decoder: empty batch");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.owner = &head;
  c.batch = batch;
  c.tokens = tokens_per_sample;
  c.blocks.assign(head.blocks.size(), BlockCache{});

  Matrix x = tokens;
  for (std::size_t i = 0; i < head.blocks.size(); ++i) {
    x = block_forward(head.blocks[i], cfg, x, tokens_per_sample, rng, train_mode,
                      cache ? &c.blocks[i] : nullptr);
  }
  c.pooled = Matrix(batch, cfg.dim);
  const double inv_t = 1.0 / static_cast<double>(tokens_per_sample);
  for (std::size_t s = 0; s < batch; ++s) {
    auto pr = c.pooled.row(s);
    for (std::size_t t = 0; t < tokens_per_sample; ++t) {
      const auto xr = x.row(s * tokens_per_sample + t);
      for (std::size_t j = 0; j < cfg.dim; ++j) pr[j] += xr[j];
    }
    for (double& v : pr) v *= inv_t;
  }
  c.logits = linear(c.pooled, head.classifier_weight, head.classifier_bias);
  return c.logits;
}

Matrix forward(const DecoderHead& head, const Matrix& tokens, Rng& rng, bool train_mode,
               ForwardCache* cache) {
  return forward(head, tokens, tokens.rows(), rng, train_mode, cache);
}

Matrix pooled_features(const DecoderHead& head, const Matrix& tokens,
                       std::size_t tokens_per_sample) {
  Rng unused(0);
  ForwardCache cache;
  forward(head, tokens, tokens_per_sample, unused, false, &cache);
  return std::move(cache.pooled);
}

HeadGradients backward(const DecoderHead& head, const ForwardCache& cache, const Matrix& dlogits,
                       bool need_input_grad) {
  const DecoderConfig& cfg = head.config;
  if (cache.owner != &head) throw StateError("backward: cache was produced by a different head");
  if (cache.blocks.size() != head.blocks.size() || cache.pooled.rows() != cache.batch) {
    throw StateError("backward: cache does not hold activations for this head");
  }
  if (dlogits.rows() != cache.batch || dlogits.cols() != cfg.num_classes) {
    throw StateError("backward: upstream gradient shape does not match the cached batch");
  }
  HeadGradients grads{DecoderHead::zeros(cfg), Matrix()};
  DecoderHead& g = grads.params;

  Matrix dpooled = linear_backward(cache.pooled, head.classifier_weight, dlogits,
                                   g.classifier_weight, g.classifier_bias);
  if (head.blocks.empty() && !need_input_grad) return grads;

  const std::size_t t = cache.tokens;
  const double inv_t = 1.0 / static_cast<double>(t);
  Matrix dx(cache.batch * t, cfg.dim);
  for (std::size_t s = 0; s < cache.batch; ++s) {
    const auto dp = dpooled.row(s);
    for (std::size_t k = 0; k < t; ++k) {
      auto dr = dx.row(s * t + k);
      for (std::size_t j = 0; j < cfg.dim; ++j) dr[j] = dp[j] * inv_t;
    }
  }
  for (std::size_t i = head.blocks.size(); i-- > 0;) {
    dx = block_backward(head.blocks[i], cfg, cache.blocks[i], dx, g.blocks[i]);
  }
  if (need_input_grad) grads.dtokens = std::move(dx);
  return grads;
}

}  // namespace lthead
