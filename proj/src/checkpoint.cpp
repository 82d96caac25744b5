#include "lthead/checkpoint.hpp"

#include <limits>
#include <string>

#include "binary_io.hpp"
#include "lthead/errors.hpp"

namespace lthead {

namespace {

constexpr std::string_view kMagic = "LTFH";
constexpr std::uint32_t kVersion = 1;
// Guards allocation before trusting header fields.
constexpr std::uint32_t kMaxDim = 1u << 16;
constexpr std::uint32_t kMaxClasses = 1u << 20;
constexpr std::uint32_t kMaxDepth = 1024;

std::uint32_t narrow(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw ShapeError(std::string("checkpoint: ") + what + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

void write_params(detail::ByteWriter& w, ParamRefs refs) {
  for (const auto& p : refs) w.f64s(p.value->values());
}

void read_params(detail::ByteReader& r, ParamRefs refs, const char* what) {
  for (const auto& p : refs) r.f64s(p.value->values(), what);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const DecoderConfig& c = ckpt.head.config;
  if (ckpt.train_counts.size() != c.num_classes) {
    throw ShapeError("checkpoint: training counts do not match the number of classes");
  }
  detail::ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.u32(narrow(c.depth, "depth"));
  w.u32(narrow(c.heads, "heads"));
  w.f64(c.mlp_ratio);
  w.f64(c.dropout);
  w.u32(narrow(c.dim, "dim"));
  w.u32(narrow(c.num_classes, "num_classes"));
  DecoderHead head = ckpt.head;  // params() needs mutable access
  write_params(w, head.params());

  w.u32(narrow(ckpt.train_counts.size(), "class count"));
  for (auto n : ckpt.train_counts) w.u64(n);
  const std::string text = format_run_config(ckpt.config);
  w.u32(narrow(text.size(), "config text"));
  w.raw(text);

  if (ckpt.calibrator) {
    Calibrator cal = *ckpt.calibrator;
    if (cal.num_classes != c.num_classes || cal.dim != c.dim) {
      throw ShapeError("checkpoint: calibrator shape does not match the head");
    }
    w.u8(static_cast<std::uint8_t>(cal.kind));
    write_params(w, cal.params());
  } else {
    w.u8(0);
  }
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4, "magic") != kMagic) throw FormatError("not a checkpoint (bad magic)", 0);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  DecoderConfig c;
  const std::size_t header_at = r.offset();
  c.depth = r.u32("depth");
  c.heads = r.u32("heads");
  c.mlp_ratio = r.f64("mlp_ratio");
  c.dropout = r.f64("dropout");
  c.dim = r.u32("dim");
  c.num_classes = r.u32("num_classes");
  if (c.depth > kMaxDepth || c.dim > kMaxDim || c.num_classes > kMaxClasses ||
      !(c.mlp_ratio <= 1024.0)) {
    throw FormatError("checkpoint header out of range", header_at);
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid checkpoint header: ") + e.what(), header_at);
  }

  Checkpoint ckpt;
  ckpt.head = DecoderHead::zeros(c);
  r.require(ckpt.head.parameter_count() * 8, "head parameters");
  read_params(r, ckpt.head.params(), "head parameters");

  const std::size_t counts_at = r.offset();
  if (r.u32("class count") != c.num_classes) {
    throw FormatError("training counts do not match the number of classes", counts_at);
  }
  ckpt.train_counts.resize(c.num_classes);
  for (auto& n : ckpt.train_counts) n = r.u64("training counts");

  const std::size_t text_at = r.offset();
  const std::uint32_t text_len = r.u32("config length");
  const std::string text = r.raw(text_len, "config text");
  try {
    ckpt.config = parse_run_config(text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid embedded run config: ") + e.what(), text_at);
  }
  ckpt.config.decoder = c;

  const std::size_t tag_at = r.offset();
  const std::uint8_t tag = r.u8("calibrator kind");
  if (tag != 0) {
    if (tag > static_cast<std::uint8_t>(CalibratorKind::MARC)) {
      throw FormatError("unknown calibrator kind " + std::to_string(tag), tag_at);
    }
    Rng unused(0);
    Calibrator cal = init_calibrator(static_cast<CalibratorKind>(tag), c.num_classes, c.dim, unused);
    read_params(r, cal.params(), "calibrator parameters");
    ckpt.calibrator = std::move(cal);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace lthead
