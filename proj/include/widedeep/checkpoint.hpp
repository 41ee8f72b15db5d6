#pragma once

// Versioned binary checkpoint of a fitted pipeline plus a joint model
// (weights and optimizer accumulators). Layout, all integers little-endian,
// reals as IEEE-754 binary64 bit patterns:
//
//   "WDCK" | u32 version | u32 section_count
//   section_count x ( u32 tag | u64 payload_length | payload )
//   u32 crc32 over every preceding byte
//
// Section tags: PIPE, WIDE (optional), DEEP (optional), JOIN, META.
// docs/checkpoint_format.md lists each payload field by field.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "widedeep/common.hpp"
#include "widedeep/feature_pipeline.hpp"
#include "widedeep/io.hpp"
#include "widedeep/joint_model.hpp"

namespace widedeep {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 4> kCheckpointMagic{'W', 'D', 'C', 'K'};

struct TrainingMeta {
  std::uint64_t steps = 0;
  std::uint64_t seed = 0;

  bool operator==(const TrainingMeta&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  FeaturePipeline pipeline;
  WideDeepModel model;
  TrainingMeta meta;
};

namespace detail {

constexpr std::uint32_t fourcc(const char (&s)[5]) {
  return std::uint32_t(std::uint8_t(s[0])) | std::uint32_t(std::uint8_t(s[1])) << 8 |
         std::uint32_t(std::uint8_t(s[2])) << 16 | std::uint32_t(std::uint8_t(s[3])) << 24;
}

inline constexpr std::uint32_t kTagPipeline = fourcc("PIPE");
inline constexpr std::uint32_t kTagWide = fourcc("WIDE");
inline constexpr std::uint32_t kTagDeep = fourcc("DEEP");
inline constexpr std::uint32_t kTagJoint = fourcc("JOIN");
inline constexpr std::uint32_t kTagMeta = fourcc("META");

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) {
      u8(static_cast<std::uint8_t>(v >> (8 * k)));
    }
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) {
      u8(static_cast<std::uint8_t>(v >> (8 * k)));
    }
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void reals(const std::vector<double>& v) {
    u64(v.size());
    for (const double x : v) {
      f64(x);
    }
  }
  void raw(std::string_view s) { buf_.append(s); }

  const std::string& bytes() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= std::uint32_t(static_cast<std::uint8_t>(data_[pos_++])) << (8 * k);
    }
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) {
      v |= std::uint64_t(static_cast<std::uint8_t>(data_[pos_++])) << (8 * k);
    }
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view bytes(std::uint64_t n) {
    need(n);
    const auto out = data_.substr(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return out;
  }
  std::vector<double> reals() {
    const std::uint64_t n = u64();
    if (n > remaining() / 8) {
      fail("real vector length exceeds remaining bytes");
    }
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) {
      x = f64();
    }
    return v;
  }
  /// A count whose elements each occupy at least `min_bytes`.
  std::uint64_t count(std::uint64_t value, std::size_t min_bytes) {
    if (min_bytes != 0 && value > remaining() / min_bytes) {
      fail("element count exceeds remaining bytes");
    }
    return value;
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool done() const noexcept { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& msg) const { throw LoadError(what_ + ": " + msg); }

 private:
  void need(std::uint64_t n) const {
    if (n > remaining()) {
      fail("truncated");
    }
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline void write_pipeline(ByteWriter& w, const FeaturePipeline& p) {
  const auto& features = p.schema().features();
  w.u32(static_cast<std::uint32_t>(features.size()));
  for (const auto& f : features) {
    w.str(f.name);
    w.u8(static_cast<std::uint8_t>(f.kind));
  }
  for (const auto& v : p.vocabularies()) {
    w.str(v.feature());
    w.u64(v.min_count());
    w.u8(static_cast<std::uint8_t>(v.oov_policy()));
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (const auto& s : v.values()) {
      w.str(s);
    }
  }
  for (const auto& q : p.quantiles()) {
    w.str(q.feature());
    w.u64(q.n_q());
    w.reals(q.boundaries());
  }
  w.u32(static_cast<std::uint32_t>(p.crosses().size()));
  for (const auto& c : p.crosses().crosses()) {
    w.u32(static_cast<std::uint32_t>(c.terms.size()));
    for (const auto& t : c.terms) {
      w.str(t.feature);
      w.str(t.value);
    }
  }
}

inline FeaturePipeline read_pipeline(ByteReader& r) {
  std::vector<FeatureDef> defs(r.count(r.u32(), 5));
  for (auto& d : defs) {
    d.name = r.str();
    const std::uint8_t kind = r.u8();
    if (kind > 1) {
      r.fail("unknown feature kind");
    }
    d.kind = static_cast<FeatureKind>(kind);
  }
  FeatureSchema schema(std::move(defs));
  std::vector<Vocabulary> vocabularies;
  std::vector<QuantileBoundaries> quantiles;
  for (std::size_t k = 0; k < schema.names(FeatureKind::categorical).size(); ++k) {
    std::string feature = r.str();
    const std::uint64_t min_count = r.u64();
    if (r.u8() != static_cast<std::uint8_t>(OovPolicy::drop)) {
      r.fail("unknown out-of-vocabulary policy");
    }
    std::vector<std::string> values(r.count(r.u32(), 4));
    for (auto& s : values) {
      s = r.str();
    }
    vocabularies.emplace_back(std::move(feature), static_cast<std::size_t>(min_count), std::move(values));
  }
  for (std::size_t k = 0; k < schema.names(FeatureKind::continuous).size(); ++k) {
    std::string feature = r.str();
    const std::uint64_t n_q = r.u64();
    quantiles.emplace_back(std::move(feature), static_cast<std::size_t>(n_q), r.reals());
  }
  std::vector<CrossDef> crosses(r.count(r.u32(), 4));
  for (auto& c : crosses) {
    c.terms.resize(r.count(r.u32(), 8));
    for (auto& t : c.terms) {
      t.feature = r.str();
      t.value = r.str();
    }
  }
  CrossSpec spec(std::move(crosses), schema);
  return FeaturePipeline(std::move(schema), std::move(vocabularies), std::move(quantiles), std::move(spec));
}

inline void write_wide(ByteWriter& w, const WideState& s) {
  w.u32(s.dimension());
  w.f64(s.params().alpha);
  w.f64(s.params().beta);
  w.f64(s.params().lambda1);
  w.f64(s.params().lambda2);
  std::vector<FeatureIndex> keys;
  keys.reserve(s.coordinates().size());
  for (const auto& [i, c] : s.coordinates()) {
    keys.push_back(i);
  }
  std::sort(keys.begin(), keys.end());
  w.u64(keys.size());
  for (const FeatureIndex i : keys) {
    const FtrlCoordinate& c = s.coordinates().at(i);
    w.u32(i);
    w.f64(c.w);
    w.f64(c.z);
    w.f64(c.n);
  }
}

inline WideState read_wide(ByteReader& r) {
  const std::uint32_t dimension = r.u32();
  FtrlParams p;
  p.alpha = r.f64();
  p.beta = r.f64();
  p.lambda1 = r.f64();
  p.lambda2 = r.f64();
  WideState s(dimension, p);
  const std::uint64_t n = r.count(r.u64(), 28);
  for (std::uint64_t k = 0; k < n; ++k) {
    const std::uint32_t i = r.u32();
    FtrlCoordinate c;
    c.w = r.f64();
    c.z = r.f64();
    c.n = r.f64();
    if (i >= dimension || s.find(i) != nullptr) {
      r.fail("bad wide coordinate " + std::to_string(i));
    }
    s.set(i, c);
  }
  return s;
}

inline void write_deep(ByteWriter& w, const DeepState& s) {
  w.f64(s.adagrad.learning_rate);
  w.f64(s.adagrad.epsilon);
  w.u64(s.dense_width);
  w.u32(static_cast<std::uint32_t>(s.tables.size()));
  for (const auto& t : s.tables) {
    w.str(t.feature);
    w.u32(t.base_index);
    w.u32(t.vocab_size);
    w.u64(t.dim);
    w.reals(t.weights);
    w.reals(t.accum);
  }
  w.u32(static_cast<std::uint32_t>(s.layers.size()));
  for (const auto& l : s.layers) {
    w.u64(l.in);
    w.u64(l.out);
    w.u8(static_cast<std::uint8_t>(l.activation));
    w.reals(l.weights);
    w.reals(l.bias);
    w.reals(l.weight_accum);
    w.reals(l.bias_accum);
  }
}

inline DeepState read_deep(ByteReader& r) {
  DeepState s;
  s.adagrad.learning_rate = r.f64();
  s.adagrad.epsilon = r.f64();
  s.dense_width = static_cast<std::size_t>(r.u64());
  s.tables.resize(r.count(r.u32(), 36));
  for (auto& t : s.tables) {
    t.feature = r.str();
    t.base_index = r.u32();
    t.vocab_size = r.u32();
    t.dim = static_cast<std::size_t>(r.u64());
    t.weights = r.reals();
    t.accum = r.reals();
  }
  s.layers.resize(r.count(r.u32(), 49));
  for (auto& l : s.layers) {
    l.in = static_cast<std::size_t>(r.u64());
    l.out = static_cast<std::size_t>(r.u64());
    const std::uint8_t act = r.u8();
    if (act > 1) {
      r.fail("unknown activation");
    }
    l.activation = static_cast<Activation>(act);
    l.weights = r.reals();
    l.bias = r.reals();
    l.weight_accum = r.reals();
    l.bias_accum = r.reals();
  }
  try {
    s.validate();
  } catch (const DimensionError& e) {
    r.fail(e.what());
  }
  return s;
}

inline void write_joint(ByteWriter& w, const WideDeepModel& m) {
  w.u32(m.dimension);
  w.u32(m.cross_offset);
  w.u8(static_cast<std::uint8_t>(m.wide_inputs));
  w.u8(static_cast<std::uint8_t>(m.kind()));
  w.f64(m.output_adagrad.learning_rate);
  w.f64(m.output_adagrad.epsilon);
  w.reals(m.output_weights);
  w.reals(m.output_accum);
  w.f64(m.bias);
  w.f64(m.bias_accum);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  using namespace detail;
  std::vector<std::pair<std::uint32_t, std::string>> sections;
  {
    ByteWriter w;
    write_pipeline(w, ckpt.pipeline);
    sections.emplace_back(kTagPipeline, w.take());
  }
  if (ckpt.model.wide) {
    ByteWriter w;
    write_wide(w, *ckpt.model.wide);
    sections.emplace_back(kTagWide, w.take());
  }
  if (ckpt.model.deep) {
    ByteWriter w;
    write_deep(w, *ckpt.model.deep);
    sections.emplace_back(kTagDeep, w.take());
  }
  {
    ByteWriter w;
    write_joint(w, ckpt.model);
    sections.emplace_back(kTagJoint, w.take());
  }
  {
    ByteWriter w;
    w.u64(ckpt.meta.steps);
    w.u64(ckpt.meta.seed);
    sections.emplace_back(kTagMeta, w.take());
  }
  ByteWriter out;
  out.raw(std::string_view(kCheckpointMagic.data(), kCheckpointMagic.size()));
  out.u32(ckpt.version);
  out.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [tag, payload] : sections) {
    out.u32(tag);
    out.u64(payload.size());
    out.raw(payload);
  }
  out.u32(crc32_of(out.bytes()));
  return out.take();
}

/// Parses and validates a whole checkpoint image; never returns a partial model.
inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  using namespace detail;
  if (bytes.size() < 16) {
    throw LoadError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  }
  if (bytes.substr(0, 4) != std::string_view(kCheckpointMagic.data(), kCheckpointMagic.size())) {
    throw LoadError("not a checkpoint (bad magic)");
  }
  ByteReader header(bytes.substr(4, 4), "checkpoint header");
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  ByteReader trailer(bytes.substr(bytes.size() - 4), "checkpoint trailer");
  if (trailer.u32() != crc32_of(body)) {
    throw LoadError("checkpoint checksum mismatch (corrupt or truncated file)");
  }

  ByteReader r(body.substr(8), "checkpoint");
  const std::uint32_t n_sections = r.u32();
  std::map<std::uint32_t, std::string_view> sections;
  for (std::uint32_t k = 0; k < n_sections; ++k) {
    const std::uint32_t tag = r.u32();
    const std::uint64_t length = r.u64();
    if (!sections.emplace(tag, r.bytes(length)).second) {
      r.fail("duplicate section");
    }
  }
  if (!r.done()) {
    r.fail("trailing bytes after sections");
  }
  auto section = [&](std::uint32_t tag, const char* name) -> std::optional<ByteReader> {
    const auto it = sections.find(tag);
    if (it == sections.end()) {
      return std::nullopt;
    }
    return ByteReader(it->second, std::string("section ") + name);
  };
  for (const auto& [tag, payload] : sections) {
    if (tag != kTagPipeline && tag != kTagWide && tag != kTagDeep && tag != kTagJoint && tag != kTagMeta) {
      throw LoadError("unknown checkpoint section tag " + std::to_string(tag));
    }
  }

  Checkpoint ckpt;
  ckpt.version = version;
  try {
    auto pipe = section(kTagPipeline, "PIPE");
    auto joint = section(kTagJoint, "JOIN");
    auto meta = section(kTagMeta, "META");
    if (!pipe || !joint || !meta) {
      throw LoadError("checkpoint lacks a required section");
    }
    ckpt.pipeline = read_pipeline(*pipe);
    if (!pipe->done()) {
      pipe->fail("trailing bytes");
    }
    if (auto wide = section(kTagWide, "WIDE")) {
      ckpt.model.wide = read_wide(*wide);
      if (!wide->done()) {
        wide->fail("trailing bytes");
      }
    }
    if (auto deep = section(kTagDeep, "DEEP")) {
      ckpt.model.deep = read_deep(*deep);
      if (!deep->done()) {
        deep->fail("trailing bytes");
      }
    }
    WideDeepModel& m = ckpt.model;
    m.dimension = joint->u32();
    m.cross_offset = joint->u32();
    const std::uint8_t inputs = joint->u8();
    const std::uint8_t kind = joint->u8();
    if (inputs > 1 || kind > 2) {
      joint->fail("bad routing fields");
    }
    m.wide_inputs = static_cast<WideInputs>(inputs);
    m.output_adagrad.learning_rate = joint->f64();
    m.output_adagrad.epsilon = joint->f64();
    m.output_weights = joint->reals();
    m.output_accum = joint->reals();
    m.bias = joint->f64();
    m.bias_accum = joint->f64();
    if (!joint->done()) {
      joint->fail("trailing bytes");
    }
    ckpt.meta.steps = meta->u64();
    ckpt.meta.seed = meta->u64();
    if (!meta->done()) {
      meta->fail("trailing bytes");
    }
    if (static_cast<ModelKind>(kind) != m.kind() || (!m.wide && !m.deep)) {
      throw LoadError("checkpoint model kind disagrees with its sections");
    }
    if (m.dimension != ckpt.pipeline.dimension() || m.cross_offset != ckpt.pipeline.cross_offset() ||
        (m.wide && m.wide->dimension() != m.dimension)) {
      throw LoadError("checkpoint model dimension disagrees with its pipeline");
    }
    if (m.deep) {
      if (m.output_weights.size() != m.deep->output_width() || m.output_accum.size() != m.output_weights.size() ||
          m.deep->dense_width != ckpt.pipeline.dense_width()) {
        throw LoadError("checkpoint output unit disagrees with deep state");
      }
      for (const auto& t : m.deep->tables) {
        const auto slot = ckpt.pipeline.categorical_slot(t.feature);
        if (!slot || ckpt.pipeline.base_offset(*slot) != t.base_index ||
            ckpt.pipeline.vocabularies()[*slot].size() != t.vocab_size) {
          throw LoadError("embedding table '" + t.feature + "' disagrees with its vocabulary");
        }
      }
    } else if (!m.output_weights.empty()) {
      throw LoadError("output weights present without a deep component");
    }
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw LoadError(std::string("invalid checkpoint contents: ") + e.what());
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error& e) {
    throw LoadError(e.what());
  }
  return deserialize_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Warm start

struct WarmStartOptions {
  bool copy_accumulators = true;  // false: carry weights only
  std::uint64_t seed = 1;         // initialization of anything not carried over
};

struct WarmStartReport {
  std::size_t wide_copied = 0;
  std::size_t rows_copied = 0;
  std::size_t rows_fresh = 0;
  bool dense_layers_copied = false;
  std::vector<std::string> warnings;
};

/// Architecture and optimizer settings of an existing model.
inline ModelConfig model_config_of(const WideDeepModel& model) {
  ModelConfig cfg;
  cfg.wide_inputs = model.wide_inputs;
  cfg.adagrad = model.output_adagrad;
  if (model.wide) {
    cfg.ftrl = model.wide->params();
  }
  if (model.deep) {
    cfg.adagrad = model.deep->adagrad;
    if (!model.deep->tables.empty()) {
      cfg.deep.embedding_dim = model.deep->tables.front().dim;
    }
    cfg.deep.hidden.clear();
    for (const auto& l : model.deep->layers) {
      cfg.deep.hidden.push_back(l.out);
    }
    for (const auto& t : model.deep->tables) {
      cfg.deep_features.push_back(t.feature);
    }
  }
  return cfg;
}

/// Builds a model over `next` that carries embeddings and wide weights from
/// `previous`, matched by categorical value string (not by ID). Values new to
/// `next` get fresh initialization.
inline WideDeepModel warm_start(const Checkpoint& previous, const FeaturePipeline& next,
                                const WarmStartOptions& options = {}, WarmStartReport* report = nullptr) {
  WarmStartReport local;
  WarmStartReport& rep = report != nullptr ? *report : local;
  const WideDeepModel& old = previous.model;
  WideDeepModel model = make_model(next, model_config_of(old), old.kind(), options.seed);

  if (old.wide && model.wide) {
    const auto index = next.coordinate_index();
    const FtrlParams& p = model.wide->params();
    for (const auto& [i, c] : old.wide->coordinates()) {
      const auto it = index.find(previous.pipeline.coordinate_key(i));
      if (it == index.end()) {
        continue;
      }
      if (options.copy_accumulators) {
        model.wide->set(it->second, c);
      } else {
        // Fresh accumulators; choose z so the FTRL weight at n = 0 reproduces w.
        FtrlCoordinate fresh;
        if (c.w != 0.0) {
          const double denom = p.beta / p.alpha + p.lambda2;
          fresh.z = -c.w * denom - (c.w > 0.0 ? 1.0 : -1.0) * p.lambda1;
          fresh.w = ftrl_weight(fresh.z, 0.0, p);
        }
        model.wide->set(it->second, fresh);
      }
      ++rep.wide_copied;
    }
  }

  if (old.deep && model.deep) {
    for (std::size_t t = 0; t < model.deep->tables.size(); ++t) {
      auto& table = model.deep->tables[t];
      const auto& old_table = old.deep->tables[t];
      const auto old_slot = previous.pipeline.categorical_slot(table.feature);
      const auto new_slot = next.categorical_slot(table.feature);
      const Vocabulary& old_vocab = previous.pipeline.vocabularies()[*old_slot];
      const Vocabulary& new_vocab = next.vocabularies()[*new_slot];
      for (std::uint32_t r = 0; r < table.vocab_size; ++r) {
        const auto old_id = old_vocab.lookup(new_vocab.value(r));
        if (!old_id) {
          ++rep.rows_fresh;
          continue;
        }
        const auto src = old_table.row(*old_id);
        std::copy(src.begin(), src.end(), table.row(r).begin());
        if (options.copy_accumulators) {
          const auto acc = old_table.row_accum(*old_id);
          std::copy(acc.begin(), acc.end(), table.row_accum(r).begin());
        }
        ++rep.rows_copied;
      }
    }
    bool same_shape = old.deep->layers.size() == model.deep->layers.size();
    for (std::size_t l = 0; same_shape && l < old.deep->layers.size(); ++l) {
      same_shape = old.deep->layers[l].in == model.deep->layers[l].in &&
                   old.deep->layers[l].out == model.deep->layers[l].out;
    }
    if (same_shape) {
      for (std::size_t l = 0; l < old.deep->layers.size(); ++l) {
        auto& dst = model.deep->layers[l];
        const auto& src = old.deep->layers[l];
        dst.weights = src.weights;
        dst.bias = src.bias;
        if (options.copy_accumulators) {
          dst.weight_accum = src.weight_accum;
          dst.bias_accum = src.bias_accum;
        }
      }
      model.output_weights = old.output_weights;
      if (options.copy_accumulators) {
        model.output_accum = old.output_accum;
      }
      rep.dense_layers_copied = true;
    } else {
      rep.warnings.push_back("dense layer shapes changed; hidden layers and output weights freshly initialized");
    }
  }
  model.bias = old.bias;
  if (options.copy_accumulators) {
    model.bias_accum = old.bias_accum;
  }
  return model;
}

}  // namespace widedeep
