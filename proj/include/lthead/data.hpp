#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "lthead/losses.hpp"
#include "lthead/numerics.hpp"

namespace lthead {

enum class DatasetRole : std::uint8_t { Train = 0, Test = 1 };

/// N samples of T x D token features with integer labels in [0, K).
struct FeatureDataset {
  std::size_t num_samples = 0;
  std::size_t tokens = 1;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;  // N * T * D, sample-major
  std::vector<std::uint32_t> labels;
  DatasetRole role = DatasetRole::Train;

  /// Throws DataError on inconsistent sizes, out-of-range labels or non-finite features.
  void validate() const;
  std::span<const double> sample(std::size_t i) const;
  /// Stacks the selected samples into a (|indices| * T) x D matrix.
  Matrix gather(std::span<const std::size_t> indices) const;
  std::vector<std::uint32_t> gather_labels(std::span<const std::size_t> indices) const;
  ClassStats class_stats() const;
  bool is_class_balanced() const;

  friend bool operator==(const FeatureDataset&, const FeatureDataset&) = default;
};

struct SyntheticSpec {
  std::size_t num_classes = 50;
  std::uint64_t head_count = 500;
  double imbalance_ratio = 100.0;
  std::size_t dim = 64;
  std::size_t tokens = 1;
  double separation = 3.0;  // norm of every class mean
  double noise = 1.0;       // per-coordinate standard deviation around the mean
  std::uint64_t test_per_class = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

/// n_j = round(n1 * rho^(-j/(K-1))) for j = 0..K-1.
std::vector<std::uint64_t> synthetic_class_counts(const SyntheticSpec& spec);
/// K x D class means, each of norm `separation`.
Matrix synthetic_class_means(const SyntheticSpec& spec);
std::pair<FeatureDataset, FeatureDataset> generate_synthetic_lt(const SyntheticSpec& spec);

/// Binary layout: "IMBF", u32 version=1, u64 N, u32 T, u32 D, u32 K, u8 role,
/// N x u32 labels, N*T*D f64 features; all little-endian.
void save_features(const FeatureDataset& ds, const std::filesystem::path& path);
FeatureDataset load_features(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_features(const FeatureDataset& ds);
FeatureDataset decode_features(std::span<const std::uint8_t> bytes);

/// Plain-text fixtures: one sample per line, "label,v1,...,vD", T = 1.
/// `num_classes` of 0 infers K as max label + 1. Blank lines and '#' comments are skipped.
FeatureDataset load_feature_table(const std::filesystem::path& path, std::size_t num_classes = 0,
                                  DatasetRole role = DatasetRole::Train);
/// Binary when the file starts with the IMBF magic, text table otherwise.
FeatureDataset read_features(const std::filesystem::path& path);

enum class SamplerStrategy : std::uint8_t { InstanceBalanced, ClassBalanced };

std::string_view to_string(SamplerStrategy strategy);

/// Draws sample indices i.i.d. with replacement.
class BatchSampler {
 public:
  BatchSampler(const FeatureDataset& ds, SamplerStrategy strategy);

  std::vector<std::size_t> sample(std::size_t batch_size, Rng& rng) const;
  SamplerStrategy strategy() const noexcept { return strategy_; }

 private:
  SamplerStrategy strategy_;
  std::size_t num_samples_;
  std::vector<std::vector<std::size_t>> by_class_;
};

std::vector<std::size_t> sample_batch(const FeatureDataset& ds, SamplerStrategy strategy,
                                      std::size_t batch_size, Rng& rng);

}  // namespace lthead
