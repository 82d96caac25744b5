#include "lthead/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "lthead/errors.hpp"

namespace lthead {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value, std::size_t line) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("line " + std::to_string(line) + ": invalid value '" + std::string(value) +
                      "' for " + std::string(key));
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  RunConfig c = std::move(base);
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (value.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": missing value for " + std::string(key));
    }
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + std::string(key));
    }
    auto size = [&] { return parse_number<std::size_t>(key, value, line_no); };
    auto real = [&] { return parse_number<double>(key, value, line_no); };
    TrainConfig& t = c.train;
    if (key == "total_iters") t.total_iters = size();
    else if (key == "batch_size") t.batch_size = size();
    else if (key == "lr0") t.lr0 = real();
    else if (key == "warmup_iters") t.warmup_iters = size();
    else if (key == "momentum") t.momentum = real();
    else if (key == "weight_decay") t.weight_decay = real();
    else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, value, line_no);
    else if (key == "loss") t.stage1_loss.variant = parse_loss_variant(value);
    else if (key == "focal_gamma") t.stage1_loss.focal_gamma = real();
    else if (key == "ldam_max_margin") t.stage1_loss.ldam_max_margin = real();
    else if (key == "lade_lambda") t.stage1_loss.lade_lambda = real();
    else if (key == "stage2") {
      if (value == "none") t.stage2.reset();
      else t.stage2 = parse_calibrator_kind(value);
    } else if (key == "stage2_iters") t.stage2_iters = size();
    else if (key == "depth") c.decoder.depth = size();
    else if (key == "heads") c.decoder.heads = size();
    else if (key == "mlp_ratio") c.decoder.mlp_ratio = real();
    else if (key == "dropout") c.decoder.dropout = real();
    else {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
  }
  c.train.validate();
  const auto& l = c.train.stage1_loss;
  if (!(l.focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be >= 0");
  if (!(l.ldam_max_margin >= 0.0)) throw ConfigError("ldam_max_margin must be >= 0");
  if (!(l.lade_lambda >= 0.0)) throw ConfigError("lade_lambda must be >= 0");
  if (!(c.decoder.dropout >= 0.0) || c.decoder.dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0, 1)");
  }
  if (!(c.decoder.mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

std::string format_run_config(const RunConfig& c) {
  const TrainConfig& t = c.train;
  std::ostringstream os;
  os << "total_iters=" << t.total_iters << "\n"
     << "batch_size=" << t.batch_size << "\n"
     << "lr0=" << format_double(t.lr0) << "\n"
     << "warmup_iters=" << t.warmup_iters << "\n"
     << "momentum=" << format_double(t.momentum) << "\n"
     << "weight_decay=" << format_double(t.weight_decay) << "\n"
     << "seed=" << t.seed << "\n"
     << "loss=" << to_string(t.stage1_loss.variant) << "\n"
     << "focal_gamma=" << format_double(t.stage1_loss.focal_gamma) << "\n"
     << "ldam_max_margin=" << format_double(t.stage1_loss.ldam_max_margin) << "\n"
     << "lade_lambda=" << format_double(t.stage1_loss.lade_lambda) << "\n"
     << "stage2=" << (t.stage2 ? std::string(to_string(*t.stage2)) : std::string("none")) << "\n"
     << "stage2_iters=" << t.stage2_iters << "\n"
     << "depth=" << c.decoder.depth << "\n"
     << "heads=" << c.decoder.heads << "\n"
     << "mlp_ratio=" << format_double(c.decoder.mlp_ratio) << "\n"
     << "dropout=" << format_double(c.decoder.dropout) << "\n";
  return os.str();
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_fingerprint(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(format_run_config(config))));
  return buf;
}

}  // namespace lthead
