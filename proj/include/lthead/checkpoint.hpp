#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lthead/calibrators.hpp"
#include "lthead/decoder.hpp"
#include "lthead/losses.hpp"
#include "lthead/run_config.hpp"

namespace lthead {

/// A trained head plus what evaluation and stage two need to reuse it.
struct Checkpoint {
  DecoderHead head;
  std::vector<std::uint64_t> train_counts;  // per-class training counts (group tags)
  RunConfig config;  // config.decoder mirrors head.config after loading
  std::optional<Calibrator> calibrator;

  ClassStats train_stats() const { return class_stats_from_counts(train_counts); }
  std::string fingerprint() const { return config_fingerprint(config); }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Binary layout, little-endian:
///   "LTFH", u32 version=1,
///   u32 depth, u32 heads, f64 mlp_ratio, f64 dropout, u32 dim, u32 K,
///   head parameters as f64 in declaration order,
///   u32 K, K x u64 training counts,
///   u32 length + run-config text,
///   u8 calibrator kind (0 = none), calibrator parameters as f64.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lthead
