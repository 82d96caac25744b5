#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lthead/numerics.hpp"

namespace lthead {

struct DecoderConfig {
  std::size_t depth = 3;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  double dropout = 0.5;
  std::size_t dim = 0;
  std::size_t num_classes = 0;

  std::size_t mlp_hidden() const;
  /// Throws ConfigError when the configuration cannot describe a head.
  void validate() const;

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

/// Pre-norm transformer block: x + Attn(LN1(x)), then x + Drop(MLP(LN2(x))).
struct BlockParams {
  Matrix ln1_gamma, ln1_beta;      // 1 x D
  Matrix qkv_weight, qkv_bias;     // 3D x D, 1 x 3D (rows: q, k, v)
  Matrix proj_weight, proj_bias;   // D x D, 1 x D
  Matrix ln2_gamma, ln2_beta;      // 1 x D
  Matrix fc1_weight, fc1_bias;     // H x D, 1 x H
  Matrix fc2_weight, fc2_bias;     // D x H, 1 x D

  static BlockParams zeros(std::size_t dim, std::size_t hidden);
  ParamRefs params(const std::string& prefix);

  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

/// Decoder blocks followed by mean pooling over tokens and a linear classifier.
/// depth == 0 is a linear probe on mean-pooled features.
struct DecoderHead {
  DecoderConfig config;
  std::vector<BlockParams> blocks;
  Matrix classifier_weight;  // K x D
  Matrix classifier_bias;    // 1 x K

  /// All-zero parameters of the right shapes; used as a gradient accumulator.
  static DecoderHead zeros(const DecoderConfig& config);
  /// Parameters in declaration (and checkpoint) order.
  ParamRefs params();
  std::size_t parameter_count() const;

  friend bool operator==(const DecoderHead&, const DecoderHead&) = default;
};

/// Scaled-uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
/// for weights and linear biases, LayerNorm gamma 1 / beta 0, classifier bias 0.
DecoderHead init_decoder(const DecoderConfig& config, Rng& rng);

struct BlockCache {
  std::size_t tokens = 0;  // tokens per sample
  Matrix input;
  LayerNormCache ln1;
  Matrix ln1_out;
  Matrix qkv;                  // R x 3D; empty when tokens == 1
  std::vector<double> attn;    // [sample][head][T][T]
  Matrix attn_out;             // concatenated heads, R x D
  Matrix after_attn;           // residual sum after attention
  LayerNormCache ln2;
  Matrix ln2_out;
  Matrix fc1_pre;
  Matrix fc1_act;
  Matrix fc1_tanh;             // tanh term of the GELU, reused by backward
  Matrix mask;                 // dropout mask on the MLP output
};

/// Runs one block over a stack of samples: rows [s*T, (s+1)*T) belong to sample s.
Matrix block_forward(const BlockParams& params, const DecoderConfig& config, const Matrix& tokens,
                     std::size_t tokens_per_sample, Rng& rng, bool train_mode, BlockCache* cache);

/// Returns d(input); accumulates parameter gradients into `grads`.
Matrix block_backward(const BlockParams& params, const DecoderConfig& config,
                      const BlockCache& cache, const Matrix& dout, BlockParams& grads);

struct ForwardCache {
  const DecoderHead* owner = nullptr;
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::vector<BlockCache> blocks;
  Matrix pooled;  // batch x D
  Matrix logits;  // batch x K
};

struct HeadGradients {
  DecoderHead params;
  Matrix dtokens;  // (batch*T) x D; empty when not requested
};

/// Batched forward. `tokens` stacks `batch` samples of `tokens_per_sample` rows each.
Matrix forward(const DecoderHead& head, const Matrix& tokens, std::size_t tokens_per_sample,
               Rng& rng, bool train_mode, ForwardCache* cache);

/// Single-sample convenience form: `tokens` is T x D; returns 1 x K logits.
Matrix forward(const DecoderHead& head, const Matrix& tokens, Rng& rng, bool train_mode,
               ForwardCache* cache);

/// Eval-mode pooled features (batch x D) without the classifier.
Matrix pooled_features(const DecoderHead& head, const Matrix& tokens,
                       std::size_t tokens_per_sample);

HeadGradients backward(const DecoderHead& head, const ForwardCache& cache, const Matrix& dlogits,
                       bool need_input_grad = true);

}  // namespace lthead
