#include "lthead/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "lthead/errors.hpp"

namespace lthead {

namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace detail

void FeatureDataset::validate() const {
  if (labels.size() != num_samples) throw DataError("dataset: label count != num_samples");
  if (features.size() != num_samples * tokens * dim) {
    throw DataError("dataset: feature count != N * T * D");
  }
  if (num_samples > 0 && (tokens == 0 || dim == 0)) {
    throw DataError("dataset: tokens and dim must be positive");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("dataset: label " + std::to_string(labels[i]) + " of sample " +
                      std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!std::isfinite(features[i])) {
      throw DataError("dataset: non-finite feature in sample " +
                      std::to_string(i / (tokens * dim)));
    }
  }
}

std::span<const double> FeatureDataset::sample(std::size_t i) const {
  const std::size_t stride = tokens * dim;
  return {features.data() + i * stride, stride};
}

Matrix FeatureDataset::gather(std::span<const std::size_t> indices) const {
  Matrix out(indices.size() * tokens, dim);
  const std::size_t stride = tokens * dim;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= num_samples) throw DataError("dataset: sample index out of range");
    const auto src = sample(indices[b]);
    std::copy(src.begin(), src.end(), out.data() + b * stride);
  }
  return out;
}

std::vector<std::uint32_t> FeatureDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<std::uint32_t> out(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) out[b] = labels.at(indices[b]);
  return out;
}

ClassStats FeatureDataset::class_stats() const { return build_class_stats(labels, num_classes); }

bool FeatureDataset::is_class_balanced() const {
  const ClassStats s = class_stats();
  for (auto c : s.counts) {
    if (c != s.counts.front()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (num_classes == 0) throw ConfigError("synthetic: num_classes must be positive");
  if (dim == 0 || tokens == 0) throw ConfigError("synthetic: dim and tokens must be positive");
  if (!(imbalance_ratio >= 1.0)) throw ConfigError("synthetic: imbalance ratio must be >= 1");
  if (static_cast<double>(head_count) < imbalance_ratio) {
    throw ConfigError("synthetic: head count must be >= imbalance ratio");
  }
  if (!(separation >= 0.0) || !(noise >= 0.0)) {
    throw ConfigError("synthetic: separation and noise must be non-negative");
  }
}

std::vector<std::uint64_t> synthetic_class_counts(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t k = spec.num_classes;
  std::vector<std::uint64_t> counts(k);
  const double n1 = static_cast<double>(spec.head_count);
  for (std::size_t j = 0; j < k; ++j) {
    const double t = k == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(k - 1);
    counts[j] = static_cast<std::uint64_t>(std::llround(n1 / std::pow(spec.imbalance_ratio, t)));
    if (counts[j] == 0) {
      throw ConfigError("synthetic: class " + std::to_string(j) + " would have zero samples");
    }
  }
  return counts;
}

Matrix synthetic_class_means(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = Rng(spec.seed).substream(0);
  Matrix means(spec.num_classes, spec.dim);
  for (std::size_t j = 0; j < spec.num_classes; ++j) {
    auto row = means.row(j);
    double norm = 0.0;
    for (double& v : row) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : row) v = norm > 0.0 ? v / norm * spec.separation : 0.0;
  }
  return means;
}

namespace {

FeatureDataset draw_dataset(const SyntheticSpec& spec, const Matrix& means,
                            const std::vector<std::uint64_t>& counts, DatasetRole role, Rng rng) {
  FeatureDataset ds;
  ds.tokens = spec.tokens;
  ds.dim = spec.dim;
  ds.num_classes = spec.num_classes;
  ds.role = role;
  for (auto c : counts) ds.num_samples += c;
  ds.features.reserve(ds.num_samples * ds.tokens * ds.dim);
  ds.labels.reserve(ds.num_samples);
  for (std::size_t j = 0; j < counts.size(); ++j) {
    const auto mean = means.row(j);
    for (std::uint64_t n = 0; n < counts[j]; ++n) {
      ds.labels.push_back(static_cast<std::uint32_t>(j));
      for (std::size_t t = 0; t < spec.tokens; ++t) {
        for (std::size_t d = 0; d < spec.dim; ++d) {
          ds.features.push_back(mean[d] + spec.noise * rng.normal());
        }
      }
    }
  }
  return ds;
}

}  // namespace

std::pair<FeatureDataset, FeatureDataset> generate_synthetic_lt(const SyntheticSpec& spec) {
  const auto train_counts = synthetic_class_counts(spec);
  const Matrix means = synthetic_class_means(spec);
  const Rng root(spec.seed);
  std::vector<std::uint64_t> test_counts(spec.num_classes, spec.test_per_class);
  return {draw_dataset(spec, means, train_counts, DatasetRole::Train, root.substream(1)),
          draw_dataset(spec, means, test_counts, DatasetRole::Test, root.substream(2))};
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kFeatureMagic = "IMBF";
constexpr std::uint32_t kFeatureVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_features(const FeatureDataset& ds) {
  ds.validate();
  detail::ByteWriter w;
  w.raw(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u64(ds.num_samples);
  w.u32(static_cast<std::uint32_t>(ds.tokens));
  w.u32(static_cast<std::uint32_t>(ds.dim));
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u8(static_cast<std::uint8_t>(ds.role));
  for (auto y : ds.labels) w.u32(y);
  w.f64s(ds.features);
  return std::move(w.bytes());
}

FeatureDataset decode_features(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4, "magic") != kFeatureMagic) throw FormatError("bad feature-file magic", 0);
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kFeatureVersion) {
    throw FormatError("unsupported feature-file version", version_at);
  }
  FeatureDataset ds;
  ds.num_samples = r.u64("sample count");
  ds.tokens = r.u32("token count");
  ds.dim = r.u32("dim");
  ds.num_classes = r.u32("class count");
  const std::size_t role_at = r.offset();
  const std::uint8_t role = r.u8("role");
  if (role > 1) throw FormatError("invalid dataset role " + std::to_string(role), role_at);
  ds.role = static_cast<DatasetRole>(role);

  // Size check before allocating so a corrupt header cannot request huge buffers.
  const std::size_t payload_at = r.offset();
  const long double need = static_cast<long double>(ds.num_samples) * 4.0L +
                           static_cast<long double>(ds.num_samples) * ds.tokens * ds.dim * 8.0L;
  if (need > static_cast<long double>(r.remaining())) {
    throw FormatError("truncated file: header announces " + std::to_string(ds.num_samples) +
                          " samples but payload is " + std::to_string(r.remaining()) + " bytes",
                      payload_at);
  }
  ds.labels.resize(ds.num_samples);
  for (auto& y : ds.labels) {
    const std::size_t at = r.offset();
    y = r.u32("labels");
    if (y >= ds.num_classes) throw FormatError("label out of range", at);
  }
  ds.features.resize(ds.num_samples * ds.tokens * ds.dim);
  r.f64s(ds.features, "features");
  if (!r.at_end()) throw FormatError("trailing bytes after feature payload", r.offset());
  for (double v : ds.features) {
    if (!std::isfinite(v)) throw DataError("feature file contains non-finite values");
  }
  return ds;
}

void save_features(const FeatureDataset& ds, const std::filesystem::path& path) {
  detail::write_file(path, encode_features(ds));
}

FeatureDataset load_features(const std::filesystem::path& path) {
  return decode_features(detail::read_file(path));
}

FeatureDataset load_feature_table(const std::filesystem::path& path, std::size_t num_classes,
                                  DatasetRole role) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  FeatureDataset ds;
  ds.role = role;
  std::string line;
  std::size_t offset = 0, line_no = 0;
  std::uint32_t max_label = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;

    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
      return s;
    };
    const auto bad = [&](const std::string& what) {
      return FormatError("line " + std::to_string(line_no) + ": " + what, line_start);
    };
    if (fields.size() < 2) throw bad("expected a label followed by at least one value");
    const std::size_t d = fields.size() - 1;
    if (ds.dim == 0) ds.dim = d;
    if (d != ds.dim) throw bad("row has " + std::to_string(d) + " values, expected " + std::to_string(ds.dim));

    const auto label_text = trim(fields[0]);
    std::uint32_t label = 0;
    auto [lp, lec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (lec != std::errc() || lp != label_text.data() + label_text.size()) {
      throw bad("invalid label '" + std::string(label_text) + "'");
    }
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const auto text = trim(fields[c]);
      double v = 0.0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size() || !std::isfinite(v)) {
        throw bad("invalid value '" + std::string(text) + "'");
      }
      ds.features.push_back(v);
    }
  }
  ds.num_samples = ds.labels.size();
  ds.tokens = 1;
  ds.num_classes = num_classes != 0 ? num_classes : (ds.num_samples ? max_label + 1u : 0u);
  ds.validate();
  return ds;
}

FeatureDataset read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::string_view(magic, 4) == kFeatureMagic) return load_features(path);
  return load_feature_table(path);
}

// ---------------------------------------------------------------------------

std::string_view to_string(SamplerStrategy strategy) {
  return strategy == SamplerStrategy::ClassBalanced ? "class_balanced" : "instance_balanced";
}

BatchSampler::BatchSampler(const FeatureDataset& ds, SamplerStrategy strategy)
    : strategy_(strategy), num_samples_(ds.num_samples) {
  if (ds.num_samples == 0) throw DataError("sampler: dataset is empty");
  if (strategy == SamplerStrategy::ClassBalanced) {
    by_class_.resize(ds.num_classes);
    for (std::size_t i = 0; i < ds.num_samples; ++i) by_class_[ds.labels[i]].push_back(i);
    for (std::size_t j = 0; j < by_class_.size(); ++j) {
      if (by_class_[j].empty()) {
        throw DataError("sampler: class " + std::to_string(j) +
                        " is empty and cannot be drawn under class-balanced sampling");
      }
    }
  }
}

std::vector<std::size_t> BatchSampler::sample(std::size_t batch_size, Rng& rng) const {
  if (batch_size == 0) throw DomainError("sampler: batch_size must be >= 1");
  std::vector<std::size_t> out(batch_size);
  for (auto& idx : out) {
    if (strategy_ == SamplerStrategy::InstanceBalanced) {
      idx = static_cast<std::size_t>(rng.below(num_samples_));
    } else {
      const auto& members = by_class_[rng.below(by_class_.size())];
      idx = members[rng.below(members.size())];
    }
  }
  return out;
}

std::vector<std::size_t> sample_batch(const FeatureDataset& ds, SamplerStrategy strategy,
                                      std::size_t batch_size, Rng& rng) {
  return BatchSampler(ds, strategy).sample(batch_size, rng);
}

}  // namespace lthead
