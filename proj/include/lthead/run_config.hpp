#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "lthead/decoder.hpp"
#include "lthead/training.hpp"

namespace lthead {

/// Everything a training run depends on besides the data.
struct RunConfig {
  TrainConfig train;
  DecoderConfig decoder;  // dim and num_classes are taken from the data

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses `key = value` lines; blank lines and text after '#' are ignored.
/// Unknown keys, duplicate keys and malformed values throw ConfigError.
///
/// Keys: total_iters batch_size lr0 warmup_iters momentum weight_decay seed
///       loss focal_gamma ldam_max_margin lade_lambda stage2 stage2_iters
///       depth heads mlp_ratio dropout
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Canonical text form; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig& config);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
/// 16 hex digits identifying the canonical config text.
std::string config_fingerprint(const RunConfig& config);

}  // namespace lthead
