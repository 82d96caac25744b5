#include "lthead/cli.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "lthead/checkpoint.hpp"
#include "lthead/data.hpp"
#include "lthead/errors.hpp"
#include "lthead/evaluation.hpp"
#include "lthead/gradcheck_suite.hpp"
#include "lthead/run_config.hpp"
#include "lthead/training.hpp"
#include "lthead/zero_shot.hpp"

namespace lthead {

namespace {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return fs::path(p.string() + suffix);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

/// Numeric table, one row per line, comma separated; '#' lines and blanks skipped.
Matrix read_matrix_table(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0, line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest = trim(line);
    if (rest.empty() || rest.front() == '#') continue;
    std::size_t n = 0;
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view field = trim(rest.substr(0, comma));
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid number '" +
                        std::string(field) + "'");
      }
      values.push_back(v);
      ++n;
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (rows == 0) cols = n;
    if (n != cols) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(cols) + " columns, found " + std::to_string(n));
    }
    ++rows;
  }
  if (rows == 0) throw DataError(path.string() + ": no rows");
  return Matrix(rows, cols, std::move(values));
}

std::vector<std::uint32_t> read_labels(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<std::uint32_t> labels;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view field = trim(line);
    if (field.empty() || field.front() == '#') continue;
    std::uint32_t y = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), y);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid label '" +
                      std::string(field) + "'");
    }
    labels.push_back(y);
  }
  return labels;
}

bool starts_with_magic(const fs::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  std::string head(magic.size(), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  return in.gcount() == static_cast<std::streamsize>(magic.size()) && head == magic;
}

std::string format_log_csv(const TrainingLog& stage1, const TrainingLog& stage2) {
  std::ostringstream os;
  os << "stage,iter,lr,loss\n";
  char buf[96];
  auto emit = [&](int stage, const TrainingLog& log) {
    for (const auto& r : log) {
      std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g\n", stage, r.iter, r.lr, r.loss);
      os << buf;
    }
  };
  emit(1, stage1);
  emit(2, stage2);
  return os.str();
}

Rng stage_rng(std::uint64_t seed, int stage) { return Rng(seed).substream(static_cast<std::uint64_t>(stage)); }

// --------------------------------------------------------------------------

struct GenDataArgs {
  SyntheticSpec spec;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const auto [train, test] = generate_synthetic_lt(a.spec);
  save_features(train, with_suffix(a.out, ".train"));
  save_features(test, with_suffix(a.out, ".test"));
  out << "wrote " << train.num_samples << " training and " << test.num_samples
      << " test samples (K=" << train.num_classes << ", D=" << train.dim << ", T=" << train.tokens
      << ") to " << a.out << ".train/.test\n";
  return kExitOk;
}

struct TrainArgs {
  std::string features, config, loss, out;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.loss.empty()) rc.train.stage1_loss.variant = parse_loss_variant(a.loss);
  const FeatureDataset ds = read_features(a.features);
  rc.decoder.dim = ds.dim;
  rc.decoder.num_classes = ds.num_classes;

  Stage1Result s1 = train_stage1(ds, rc.train, rc.decoder, stage_rng(rc.train.seed, 1));
  Checkpoint ckpt{std::move(s1.head), s1.stats.counts, rc, std::nullopt};
  TrainingLog log2;
  if (rc.train.stage2) {
    Stage2Result s2 = train_stage2(ckpt.head, ds, rc.train, *rc.train.stage2, stage_rng(rc.train.seed, 2));
    ckpt.calibrator = std::move(s2.calibrator);
    log2 = std::move(s2.log);
  }
  save_checkpoint(ckpt, a.out);
  write_text(with_suffix(a.out, ".log.csv"), format_log_csv(s1.log, log2));
  out << "trained " << to_string(rc.train.stage1_loss.variant) << " head ("
      << ckpt.head.parameter_count() << " parameters, " << rc.train.total_iters
      << " iterations";
  if (!s1.log.empty()) out << ", final loss " << s1.log.back().loss;
  out << ") -> " << a.out << "\n";
  return kExitOk;
}

struct CalibrateArgs {
  std::string ckpt, features, method, out;
  long iters = -1;
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(a.ckpt);
  const FeatureDataset ds = read_features(a.features);
  const CalibratorKind kind = parse_calibrator_kind(a.method);
  ckpt.config.train.stage2 = kind;
  if (a.iters >= 0) ckpt.config.train.stage2_iters = static_cast<std::size_t>(a.iters);
  Stage2Result s2 = train_stage2(ckpt.head, ds, ckpt.config.train, kind, stage_rng(ckpt.config.train.seed, 2));
  ckpt.calibrator = std::move(s2.calibrator);
  save_checkpoint(ckpt, a.out);
  write_text(with_suffix(a.out, ".log.csv"), format_log_csv({}, s2.log));
  out << "calibrated with " << to_string(kind) << " (" << ckpt.calibrator->parameter_count()
      << " parameters, " << ckpt.config.train.stage2_iters << " iterations) -> " << a.out << "\n";
  return kExitOk;
}

std::string checkpoint_title(const Checkpoint& ckpt) {
  std::string t(to_string(ckpt.config.train.stage1_loss.variant));
  if (ckpt.calibrator) t += "+" + std::string(to_string(ckpt.calibrator->kind));
  return t;
}

EvalReport evaluate_checkpoint(const Checkpoint& ckpt, const FeatureDataset& test) {
  EvalReport r = evaluate(ckpt.head, ckpt.calibrator ? &*ckpt.calibrator : nullptr, test,
                          ckpt.train_stats());
  r.fingerprint = ckpt.fingerprint();
  return r;
}

struct EvalArgs {
  std::string ckpt, test, report;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  FeatureDataset test = read_features(a.test);
  const EvalReport r = evaluate_checkpoint(ckpt, test);
  const std::string title = checkpoint_title(ckpt);
  write_text(a.report, format_report_text(r, title));
  write_text(with_suffix(a.report, ".json"), report_to_json(r, title));
  out << format_report_text(r, title);
  for (const auto& w : r.warnings) err << "warning: " << w << "\n";
  return kExitOk;
}

struct ZeroShotArgs {
  std::string image_embs, class_embs, test_labels, report, train_features;
  double temperature = 1.0;
};

int cmd_zero_shot(const ZeroShotArgs& a, std::ostream& out, std::ostream& err) {
  Matrix images;
  std::vector<std::uint32_t> labels;
  if (starts_with_magic(a.image_embs, "IMBF")) {
    const FeatureDataset ds = load_features(a.image_embs);
    if (ds.tokens != 1) throw DataError("zero-shot image embeddings must have one token per sample");
    images = Matrix(ds.num_samples, ds.dim, ds.features);
    labels = ds.labels;
  } else {
    images = read_matrix_table(a.image_embs);
  }
  if (!a.test_labels.empty()) labels = read_labels(a.test_labels);
  if (labels.size() != images.rows()) {
    throw DataError("zero-shot: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(images.rows()) + " image embeddings");
  }
  const TextClassEmbeddings classes = TextClassEmbeddings::from_raw(read_matrix_table(a.class_embs));
  const ZeroShotResult zs = zero_shot_classify(images, classes, a.temperature);

  std::optional<ClassStats> train_stats;
  if (!a.train_features.empty()) {
    FeatureDataset train = read_features(a.train_features);
    if (train.num_classes != classes.num_classes()) {
      throw DataError("zero-shot: training features cover a different number of classes");
    }
    train_stats = train.class_stats();
  }
  EvalReport r = compute_report(zs.predictions, labels, classes.num_classes(),
                                train_stats ? &*train_stats : nullptr);
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx",
                static_cast<unsigned long long>(fnv1a64("zero-shot temperature=" + std::to_string(a.temperature))));
  r.fingerprint = fp;
  write_text(a.report, format_report_text(r, "zero-shot"));
  write_text(with_suffix(a.report, ".json"), report_to_json(r, "zero-shot"));
  out << format_report_text(r, "zero-shot");
  for (const auto& w : r.warnings) err << "warning: " << w << "\n";
  return kExitOk;
}

struct GradcheckArgs {
  std::string module = "all";
  double tol = 1e-5;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradCheckOptions opts;
  opts.tolerance = a.tol;
  const auto start = std::chrono::steady_clock::now();
  const auto cases = run_gradcheck(a.module, opts);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool ok = true;
  char buf[160];
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof buf, "%-4s %-12s %-20s params=%-5zu max_rel=%.3e max_abs=%.3e\n",
                  c.report.passed ? "ok" : "FAIL", c.module.c_str(), c.name.c_str(),
                  c.report.checked, c.report.max_rel_err, c.report.max_abs_err);
    out << buf;
    ok = ok && c.report.passed;
  }
  std::snprintf(buf, sizeof buf, "%zu cases, %s, %.2f s\n", cases.size(), ok ? "all passed" : "FAILED", secs);
  out << buf;
  return ok ? kExitOk : kExitGradcheckFailed;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string format = "table";
  std::string test;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  struct Row {
    std::string source, title;
    EvalReport report;
  };
  std::vector<Row> rows;
  std::optional<FeatureDataset> test;
  for (const auto& input : a.inputs) {
    Row row{input, {}, {}};
    if (starts_with_magic(input, "LTFH")) {
      if (a.test.empty()) throw DataError("report: checkpoint input '" + input + "' needs --test");
      if (!test) test = read_features(a.test);
      const Checkpoint ckpt = load_checkpoint(input);
      row.report = evaluate_checkpoint(ckpt, *test);
      row.title = checkpoint_title(ckpt);
    } else {
      row.report = report_from_json(read_text(input), &row.title);
    }
    rows.push_back(std::move(row));
  }

  if (a.format == "machine") {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json j = nlohmann::json::parse(report_to_json(r.report, r.title));
      j["source"] = r.source;
      doc.push_back(std::move(j));
    }
    out << doc.dump(2) << "\n";
    return kExitOk;
  }

  auto pct = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
    return std::string(buf);
  };
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %8s %8s %8s %8s %8s %8s %8s  %s\n", "method", "overall",
                "many", "medium", "few", "prec", "recall", "f1", "fingerprint");
  out << buf;
  for (const auto& r : rows) {
    const EvalReport& e = r.report;
    std::snprintf(buf, sizeof buf, "%-24s %8s %8s %8s %8s %8s %8s %8s  %s\n", r.title.c_str(),
                  pct(e.overall_accuracy).c_str(), pct(e.many_shot).c_str(),
                  pct(e.medium_shot).c_str(), pct(e.few_shot).c_str(),
                  pct(e.macro_precision).c_str(), pct(e.macro_recall).c_str(),
                  pct(e.macro_f1).c_str(), e.fingerprint.c_str());
    out << buf;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Long-tailed classification heads on frozen features", "lthead"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic long-tailed feature set");
  gen_cmd->add_option("--classes", gen.spec.num_classes, "Number of classes K")->capture_default_str();
  gen_cmd->add_option("--head-count", gen.spec.head_count, "Training samples of class 0")->capture_default_str();
  gen_cmd->add_option("--ratio", gen.spec.imbalance_ratio, "Imbalance ratio n_0 / n_{K-1}")->capture_default_str();
  gen_cmd->add_option("--dim", gen.spec.dim, "Feature dimension D")->capture_default_str();
  gen_cmd->add_option("--tokens", gen.spec.tokens, "Tokens per sample T")->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--separation", gen.spec.separation, "Norm of every class mean")->capture_default_str();
  gen_cmd->add_option("--noise", gen.spec.noise, "Per-coordinate noise standard deviation")->capture_default_str();
  gen_cmd->add_option("--test-per-class", gen.spec.test_per_class, "Balanced test samples per class")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output prefix; writes PREFIX.train and PREFIX.test")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Stage one: train decoder head and classifier");
  train_cmd->add_option("--features", train.features, "Training features (binary or CSV)")->required();
  train_cmd->add_option("--config", train.config, "Run config file (key=value)");
  train_cmd->add_option("--loss", train.loss, "Stage-one loss; overrides the config")
      ->check(CLI::IsMember({"ce", "cbw", "focal", "ldam", "bsm", "lade"}));
  train_cmd->add_option("--out", train.out, "Checkpoint path; the loss log goes to CKPT.log.csv")->required();

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Stage two: fit a calibrator on a frozen head");
  cal_cmd->add_option("--ckpt", cal.ckpt, "Stage-one checkpoint")->required();
  cal_cmd->add_option("--features", cal.features, "Training features")->required();
  cal_cmd->add_option("--method", cal.method, "Calibrator")
      ->required()
      ->check(CLI::IsMember({"crt", "lws", "disalign", "marc"}));
  cal_cmd->add_option("--iters", cal.iters, "Stage-two iterations; defaults to the checkpoint config")
      ->check(CLI::NonNegativeNumber);
  cal_cmd->add_option("--out", cal.out, "Output checkpoint")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a test set");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--test", ev.test, "Test features")->required();
  eval_cmd->add_option("--report", ev.report, "Text report path; JSON goes to REPORT.json")->required();

  ZeroShotArgs zs;
  auto* zs_cmd = app.add_subcommand("zero-shot", "Cosine-similarity zero-shot classification");
  zs_cmd->add_option("--image-embs", zs.image_embs, "Image embeddings (CSV rows or binary features)")->required();
  zs_cmd->add_option("--class-embs", zs.class_embs, "Class text embeddings, one CSV row per class")->required();
  zs_cmd->add_option("--test-labels", zs.test_labels, "Labels, one per line (optional for binary features)");
  zs_cmd->add_option("--train-features", zs.train_features, "Training set whose counts define shot groups");
  zs_cmd->add_option("--temperature", zs.temperature, "Softmax temperature")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  zs_cmd->add_option("--report", zs.report, "Text report path; JSON goes to REPORT.json")->required();

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  gc_cmd->add_option("--module", gc.module, "Which gradients to check")
      ->capture_default_str()
      ->check(CLI::IsMember({"all", "losses", "decoder", "calibrators"}));
  gc_cmd->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str()->check(CLI::PositiveNumber);

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Tabulate JSON reports or checkpoints");
  rep_cmd->add_option("--inputs", rep.inputs, "Report JSON files or checkpoints")->required();
  rep_cmd->add_option("--format", rep.format, "Output format")
      ->capture_default_str()
      ->check(CLI::IsMember({"table", "machine"}));
  rep_cmd->add_option("--test", rep.test, "Test features for checkpoint inputs");

  std::vector<std::string> argv_storage{"lthead"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(train, out);
    if (*cal_cmd) return cmd_calibrate(cal, out);
    if (*eval_cmd) return cmd_eval(ev, out, err);
    if (*zs_cmd) return cmd_zero_shot(zs, out, err);
    if (*gc_cmd) return cmd_gradcheck(gc, out);
    if (*rep_cmd) return cmd_report(rep, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace lthead
