#include "lthead/gradcheck_suite.hpp"

#include <functional>

#include "lthead/calibrators.hpp"
#include "lthead/decoder.hpp"
#include "lthead/errors.hpp"
#include "lthead/losses.hpp"

namespace lthead {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

std::vector<std::uint32_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::uint32_t> out(n);
  for (auto& y : out) y = static_cast<std::uint32_t>(rng.below(k));
  return out;
}

std::vector<double> to_vector(const Matrix& m) {
  return {m.values().begin(), m.values().end()};
}

double weighted_sum(const Matrix& out, const Matrix& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * weights.values()[i];
  return s;
}

/// Perturbs the tensors in `inputs` in place, evaluating `loss` at each probe,
/// and restores them afterwards.
GradCheckReport check(const ParamRefs& inputs, const std::function<double()>& loss,
                      const std::vector<double>& analytic, const GradCheckOptions& options) {
  const std::vector<double> base = flatten(inputs);
  auto f = [&](std::span<const double> x) {
    assign_flat(inputs, x);
    return loss();
  };
  GradCheckReport report = finite_diff_check(f, base, analytic, options);
  assign_flat(inputs, base);
  return report;
}

std::vector<double> concat(std::initializer_list<const Matrix*> parts) {
  std::vector<double> out;
  for (const Matrix* m : parts) out.insert(out.end(), m->values().begin(), m->values().end());
  return out;
}

void append(std::vector<double>& dst, const std::vector<double>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

// --------------------------------------------------------------------------

void loss_cases(std::vector<GradCheckCase>& out, const GradCheckOptions& options) {
  Rng rng(101);
  const std::vector<std::uint64_t> counts{40, 17, 9, 3, 1};
  const ClassStats stats = class_stats_from_counts(counts);
  struct Variant {
    std::string name;
    LossConfig config;
  };
  std::vector<Variant> variants{
      {"ce", {LossVariant::CE}},
      {"cbw", {LossVariant::CBW}},
      {"focal(gamma=2)", {LossVariant::Focal}},
      {"focal(gamma=0.5)", {LossVariant::Focal, 0.5}},
      {"ldam", {LossVariant::LDAM}},
      {"bsm", {LossVariant::BalancedSoftmax}},
      {"lade", {LossVariant::LADE}},
      {"lade(lambda=1)", {LossVariant::LADE, 2.0, 0.5, 1.0}},
  };
  for (const auto& v : variants) {
    const LossSpec spec = make_loss_spec(v.config, stats);
    Matrix logits = random_matrix(7, counts.size(), rng, 1.5);
    const auto labels = random_labels(7, counts.size(), rng);
    const LossResult r = loss_eval(spec, logits, labels);
    const ParamRefs inputs{{"logits", &logits}};
    out.push_back({"losses", v.name,
                   check(inputs, [&] { return loss_eval(spec, logits, labels).value; },
                         to_vector(r.dlogits), options)});
  }
}

// --------------------------------------------------------------------------

void decoder_cases(std::vector<GradCheckCase>& out, const GradCheckOptions& options) {
  Rng rng(202);

  {  // layer norm
    Matrix x = random_matrix(4, 6, rng, 2.0);
    Matrix gamma = random_matrix(1, 6, rng);
    Matrix beta = random_matrix(1, 6, rng);
    const Matrix w = random_matrix(4, 6, rng);
    LayerNormCache cache;
    layer_norm(x, gamma, beta, kLayerNormEps, &cache);
    const Matrix dy = w;
    const LayerNormGrads g = layer_norm_backward(cache, gamma, dy);
    const ParamRefs inputs{{"x", &x}, {"gamma", &gamma}, {"beta", &beta}};
    out.push_back({"decoder", "layer_norm",
                   check(inputs,
                         [&] { return weighted_sum(layer_norm(x, gamma, beta, kLayerNormEps, nullptr), w); },
                         concat({&g.dx, &g.dgamma, &g.dbeta}), options)});
  }

  {  // gelu
    Matrix x = random_matrix(1, 12, rng, 2.0);
    const Matrix w = random_matrix(1, 12, rng);
    std::vector<double> analytic(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      analytic[i] = w.values()[i] * gelu_derivative(x.values()[i]);
    }
    const ParamRefs inputs{{"x", &x}};
    out.push_back({"decoder", "gelu",
                   check(inputs,
                         [&] {
                           double s = 0.0;
                           for (std::size_t i = 0; i < x.size(); ++i) s += w.values()[i] * gelu(x.values()[i]);
                           return s;
                         },
                         analytic, options)});
  }

  DecoderConfig cfg;
  cfg.depth = 1;
  cfg.heads = 4;
  cfg.mlp_ratio = 2.0;
  cfg.dropout = 0.25;
  cfg.dim = 8;
  cfg.num_classes = 4;

  for (std::size_t T : {std::size_t{3}, std::size_t{1}}) {  // single block, train mode
    Rng init = rng.substream(T);
    DecoderHead host = init_decoder(cfg, init);
    BlockParams& block = host.blocks[0];
    const std::size_t batch = 2;
    Matrix tokens = random_matrix(batch * T, cfg.dim, rng);
    const Matrix w = random_matrix(batch * T, cfg.dim, rng);
    const Rng drop(303 + T);

    Rng r = drop;
    BlockCache cache;
    block_forward(block, cfg, tokens, T, r, true, &cache);
    BlockParams grads = BlockParams::zeros(cfg.dim, cfg.mlp_hidden());
    const Matrix dx = block_backward(block, cfg, cache, w, grads);

    ParamRefs inputs = block.params("block.");
    inputs.push_back({"tokens", &tokens});
    std::vector<double> analytic = flatten(grads.params("block."));
    append(analytic, to_vector(dx));
    out.push_back({"decoder", "block(T=" + std::to_string(T) + ")",
                   check(inputs,
                         [&] {
                           Rng rr = drop;
                           return weighted_sum(block_forward(block, cfg, tokens, T, rr, true, nullptr), w);
                         },
                         analytic, options)});
  }

  auto head_case = [&](std::size_t depth, std::size_t T, const std::string& name) {
    DecoderConfig hc = cfg;
    hc.depth = depth;
    Rng init = rng.substream(100 + depth);
    DecoderHead head = init_decoder(hc, init);
    // Nonzero classifier bias and LN parameters exercise every gradient path.
    for (double& v : head.classifier_bias.values()) v = 0.1 * rng.normal();
    for (auto& b : head.blocks) {
      for (double& v : b.ln1_gamma.values()) v += 0.1 * rng.normal();
      for (double& v : b.ln2_beta.values()) v += 0.1 * rng.normal();
    }
    const std::size_t batch = 3;
    Matrix tokens = random_matrix(batch * T, hc.dim, rng);
    const auto labels = random_labels(batch, hc.num_classes, rng);
    const LossSpec spec = cross_entropy_spec(hc.num_classes);
    const Rng drop(404 + depth);

    Rng r = drop;
    ForwardCache cache;
    const Matrix logits = forward(head, tokens, T, r, true, &cache);
    const LossResult loss = loss_eval(spec, logits, labels);
    HeadGradients g = backward(head, cache, loss.dlogits, true);

    ParamRefs inputs = head.params();
    inputs.push_back({"tokens", &tokens});
    std::vector<double> analytic = flatten(g.params.params());
    append(analytic, to_vector(g.dtokens));
    out.push_back({"decoder", name,
                   check(inputs,
                         [&] {
                           Rng rr = drop;
                           return loss_eval(spec, forward(head, tokens, T, rr, true, nullptr), labels).value;
                         },
                         analytic, options)});
  };
  head_case(2, 3, "head(depth=2,T=3)");
  head_case(0, 3, "head(depth=0,T=3)");
}

// --------------------------------------------------------------------------

void calibrator_cases(std::vector<GradCheckCase>& out, const GradCheckOptions& options) {
  Rng rng(505);
  const std::size_t K = 5, D = 6, B = 7;
  const ClassStats stats = class_stats_from_counts(std::vector<std::uint64_t>{40, 17, 9, 3, 1});
  const LossSpec spec = make_loss_spec({LossVariant::BalancedSoftmax}, stats);
  for (CalibratorKind kind : {CalibratorKind::CRT, CalibratorKind::LWS, CalibratorKind::DisAlign,
                              CalibratorKind::MARC}) {
    Rng init = rng.substream(static_cast<std::uint64_t>(kind));
    Calibrator cal = init_calibrator(kind, K, D, init);
    // Move away from the identity so every parameter has a generic gradient.
    for (auto& p : cal.params()) {
      for (double& v : p.value->values()) v += 0.3 * rng.normal();
    }
    Matrix pooled = random_matrix(B, D, rng);
    Matrix logits = random_matrix(B, K, rng, 1.5);
    std::vector<double> norms(K);
    for (double& n : norms) n = 0.5 + rng.uniform();
    const auto labels = random_labels(B, K, rng);

    auto eval = [&] {
      const CalibContext ctx{pooled, logits, norms};
      return loss_eval(spec, apply(cal, ctx, nullptr), labels).value;
    };
    CalibCache cache;
    const Matrix adjusted = apply(cal, CalibContext{pooled, logits, norms}, &cache);
    const LossResult loss = loss_eval(spec, adjusted, labels);
    CalibGradients g = calibrator_backward(cal, cache, loss.dlogits);

    ParamRefs inputs = cal.params();
    inputs.push_back({"logits", &logits});
    inputs.push_back({"pooled", &pooled});
    std::vector<double> analytic = flatten(g.params.params());
    append(analytic, to_vector(g.dlogits));
    append(analytic, to_vector(g.dpooled));
    out.push_back({"calibrators", std::string(to_string(kind)), check(inputs, eval, analytic, options)});
  }
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck(std::string_view module, const GradCheckOptions& options) {
  const bool all = module == "all";
  if (!all && module != "losses" && module != "decoder" && module != "calibrators") {
    throw ConfigError("unknown gradcheck module '" + std::string(module) +
                      "' (expected all, losses, decoder or calibrators)");
  }
  std::vector<GradCheckCase> out;
  if (all || module == "losses") loss_cases(out, options);
  if (all || module == "decoder") decoder_cases(out, options);
  if (all || module == "calibrators") calibrator_cases(out, options);
  return out;
}

}  // namespace lthead
