#pragma once

// Feature pipeline: schema, vocabularies, quantile normalization and
// value-anchored cross-product transformations, composed into a single
// encoder that maps raw records onto one global sparse index space:
//
//   [ one-hot(feature 0) | one-hot(feature 1) | ... | crosses ]
//
// plus a dense vector of normalized continuous values in schema order.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "widedeep/common.hpp"

namespace widedeep {

enum class FeatureKind : std::uint8_t { categorical = 0, continuous = 1 };

inline std::string_view to_string(FeatureKind kind) {
  return kind == FeatureKind::categorical ? "categorical" : "continuous";
}

inline FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "categorical") {
    return FeatureKind::categorical;
  }
  if (text == "continuous") {
    return FeatureKind::continuous;
  }
  throw SchemaError("unknown feature kind '" + std::string(text) + "'");
}

struct FeatureDef {
  std::string name;
  FeatureKind kind = FeatureKind::categorical;

  bool operator==(const FeatureDef&) const = default;
};

/// Ordered feature definitions. Position in the schema is the column identity
/// used by every downstream artifact.
class FeatureSchema {
 public:
  FeatureSchema() = default;

  explicit FeatureSchema(std::vector<FeatureDef> features) : features_(std::move(features)) {
    for (std::size_t i = 0; i < features_.size(); ++i) {
      if (features_[i].name.empty()) {
        throw SchemaError("feature name must be nonempty");
      }
      if (!positions_.emplace(features_[i].name, i).second) {
        throw SchemaError("duplicate feature name '" + features_[i].name + "'");
      }
    }
  }

  const std::vector<FeatureDef>& features() const noexcept { return features_; }
  std::size_t size() const noexcept { return features_.size(); }

  std::optional<std::size_t> position(std::string_view name) const {
    const auto it = positions_.find(name);
    if (it == positions_.end()) {
      return std::nullopt;
    }
    return it->second;
  }

  const FeatureDef& at(std::string_view name) const {
    const auto pos = position(name);
    if (!pos) {
      throw SchemaError("unknown feature '" + std::string(name) + "'");
    }
    return features_[*pos];
  }

  std::vector<std::string> names(FeatureKind kind) const {
    std::vector<std::string> out;
    for (const auto& f : features_) {
      if (f.kind == kind) {
        out.push_back(f.name);
      }
    }
    return out;
  }

  bool operator==(const FeatureSchema& other) const { return features_ == other.features_; }

 private:
  std::vector<FeatureDef> features_;
  std::map<std::string, std::size_t, std::less<>> positions_;
};

using FeatureValue = std::variant<std::string, double>;
using FeatureMap = std::map<std::string, FeatureValue, std::less<>>;

/// One impression: feature values plus the acquisition label.
struct RawExample {
  FeatureMap features;
  int label = 0;

  bool operator==(const RawExample&) const = default;
};

/// Value of a categorical feature, or nullptr if absent.
inline const std::string* categorical_value(const FeatureMap& features, std::string_view name) {
  const auto it = features.find(name);
  if (it == features.end()) {
    return nullptr;
  }
  const auto* s = std::get_if<std::string>(&it->second);
  if (s == nullptr) {
    throw SchemaError("feature '" + std::string(name) + "' expects a categorical value");
  }
  return s;
}

inline std::optional<double> continuous_value(const FeatureMap& features, std::string_view name) {
  const auto it = features.find(name);
  if (it == features.end()) {
    return std::nullopt;
  }
  const auto* d = std::get_if<double>(&it->second);
  if (d == nullptr) {
    throw SchemaError("feature '" + std::string(name) + "' expects a continuous value");
  }
  return *d;
}

/// Model input record. `sparse_indices` is sorted ascending and unique.
struct EncodedExample {
  std::vector<FeatureIndex> sparse_indices;
  std::vector<double> dense_values;
  int label = 0;

  bool operator==(const EncodedExample&) const = default;
};

// ---------------------------------------------------------------------------
// Vocabulary

enum class OovPolicy : std::uint8_t { drop = 0 };

namespace detail {

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const noexcept { return std::hash<std::string_view>{}(s); }
};

using StringIdMap = std::unordered_map<std::string, std::uint32_t, StringHash, std::equal_to<>>;

}  // namespace detail

/// Categorical value -> contiguous ID in [0, size).
class Vocabulary {
 public:
  Vocabulary() = default;

  Vocabulary(std::string feature, std::size_t min_count, std::vector<std::string> values,
             OovPolicy oov = OovPolicy::drop)
      : feature_(std::move(feature)), min_count_(min_count), oov_(oov), values_(std::move(values)) {
    ids_.reserve(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!ids_.emplace(values_[i], static_cast<std::uint32_t>(i)).second) {
        throw FitError("vocabulary for '" + feature_ + "' repeats value '" + values_[i] + "'");
      }
    }
  }

  const std::string& feature() const noexcept { return feature_; }
  std::size_t min_count() const noexcept { return min_count_; }
  OovPolicy oov_policy() const noexcept { return oov_; }
  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<std::string>& values() const noexcept { return values_; }
  const std::string& value(std::uint32_t id) const { return values_.at(id); }

  std::optional<std::uint32_t> lookup(std::string_view value) const {
    const auto it = ids_.find(value);
    if (it == ids_.end()) {
      return std::nullopt;
    }
    return it->second;
  }

  bool operator==(const Vocabulary& o) const {
    return feature_ == o.feature_ && min_count_ == o.min_count_ && oov_ == o.oov_ && values_ == o.values_;
  }

 private:
  std::string feature_;
  std::size_t min_count_ = 1;
  OovPolicy oov_ = OovPolicy::drop;
  std::vector<std::string> values_;
  detail::StringIdMap ids_;
};

template <typename R>
concept RawCorpus = std::ranges::input_range<R> && std::same_as<std::ranges::range_value_t<R>, RawExample>;

/// IDs go to values seen at least `min_count` times, ordered by descending
/// count with lexicographic tie-break.
template <RawCorpus Corpus>
Vocabulary build_vocabulary(const Corpus& corpus, const FeatureSchema& schema, std::string_view feature,
                            std::size_t min_count) {
  const FeatureDef& def = schema.at(feature);
  if (def.kind != FeatureKind::categorical) {
    throw SchemaError("vocabulary requested for continuous feature '" + def.name + "'");
  }
  if (min_count < 1) {
    throw FitError("min_count must be >= 1 for '" + def.name + "'");
  }
  std::map<std::string, std::size_t, std::less<>> counts;
  for (const RawExample& ex : corpus) {
    if (const std::string* v = categorical_value(ex.features, feature)) {
      ++counts[*v];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [value, count] : counts) {
    if (count >= min_count) {
      kept.emplace_back(value, count);
    }
  }
  // counts is already lexicographic, so a stable sort on count keeps the tie-break.
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> values;
  values.reserve(kept.size());
  for (auto& kv : kept) {
    values.push_back(std::move(kv.first));
  }
  return Vocabulary(def.name, min_count, std::move(values));
}

// ---------------------------------------------------------------------------
// Quantile normalization

/// n_q - 1 sorted boundaries splitting a continuous feature into n_q buckets.
class QuantileBoundaries {
 public:
  QuantileBoundaries() = default;

  QuantileBoundaries(std::string feature, std::size_t n_q, std::vector<double> boundaries)
      : feature_(std::move(feature)), n_q_(n_q), boundaries_(std::move(boundaries)) {
    if (n_q_ < 2) {
      throw FitError("n_q must be >= 2 for '" + feature_ + "'");
    }
    if (boundaries_.size() != n_q_ - 1) {
      throw FitError("expected " + std::to_string(n_q_ - 1) + " quantile boundaries for '" + feature_ + "'");
    }
    for (std::size_t j = 0; j < boundaries_.size(); ++j) {
      if (!std::isfinite(boundaries_[j]) || (j > 0 && boundaries_[j] < boundaries_[j - 1])) {
        throw FitError("quantile boundaries for '" + feature_ + "' must be finite and nondecreasing");
      }
    }
  }

  const std::string& feature() const noexcept { return feature_; }
  std::size_t n_q() const noexcept { return n_q_; }
  const std::vector<double>& boundaries() const noexcept { return boundaries_; }

  /// 1-based bucket. A value equal to boundary j lands in bucket j. NaN maps to bucket 1.
  std::size_t bucket(double x) const {
    const auto it = std::lower_bound(boundaries_.begin(), boundaries_.end(), x);
    return 1 + static_cast<std::size_t>(it - boundaries_.begin());
  }

  /// (i - 1) / (n_q - 1) for bucket i.
  double normalize(double x) const {
    return static_cast<double>(bucket(x) - 1) / static_cast<double>(n_q_ - 1);
  }

  bool operator==(const QuantileBoundaries&) const = default;

 private:
  std::string feature_;
  std::size_t n_q_ = 2;
  std::vector<double> boundaries_{0.0};
};

/// Boundary j (1-based) is sorted[ceil(j * N / n_q) - 1].
template <std::ranges::input_range Values>
  requires std::convertible_to<std::ranges::range_value_t<Values>, double>
QuantileBoundaries fit_quantiles(const Values& values, std::size_t n_q, std::string feature = {}) {
  if (n_q < 2) {
    throw FitError("n_q must be >= 2 for '" + feature + "'");
  }
  std::vector<double> sorted;
  for (const auto& v : values) {
    const double x = static_cast<double>(v);
    if (!std::isfinite(x)) {
      throw FitError("non-finite value in quantile corpus for '" + feature + "'");
    }
    sorted.push_back(x);
  }
  if (sorted.empty()) {
    throw FitError("empty quantile corpus for '" + feature + "'");
  }
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<double> boundaries;
  boundaries.reserve(n_q - 1);
  for (std::size_t j = 1; j < n_q; ++j) {
    const std::size_t rank = (j * n + n_q - 1) / n_q;  // ceil(j*n/n_q) >= 1
    boundaries.push_back(sorted[rank - 1]);
  }
  return QuantileBoundaries(std::move(feature), n_q, std::move(boundaries));
}

inline double normalize_continuous(double x, const QuantileBoundaries& q) { return q.normalize(x); }

// ---------------------------------------------------------------------------
// Cross-product transformations

struct CrossTerm {
  std::string feature;
  std::string value;

  auto operator<=>(const CrossTerm&) const = default;
};

/// A conjunction of (feature = value) terms; active iff every term matches.
struct CrossDef {
  std::vector<CrossTerm> terms;

  bool operator==(const CrossDef&) const = default;
};

namespace detail {

inline std::string term_key(std::string_view feature, std::string_view value) {
  std::string key;
  key.reserve(feature.size() + value.size() + 1);
  key.append(feature);
  key.push_back('\x1f');
  key.append(value);
  return key;
}

}  // namespace detail

class CrossSpec {
 public:
  CrossSpec() = default;

  /// Validates every cross against `schema` and orders each cross's terms by
  /// schema position so equal conjunctions compare equal.
  CrossSpec(std::vector<CrossDef> crosses, const FeatureSchema& schema) : crosses_(std::move(crosses)) {
    for (std::size_t k = 0; k < crosses_.size(); ++k) {
      auto& terms = crosses_[k].terms;
      if (terms.size() < 2) {
        throw SchemaError("cross " + std::to_string(k) + " needs at least two terms");
      }
      for (const auto& t : terms) {
        const FeatureDef& def = schema.at(t.feature);
        if (def.kind != FeatureKind::categorical) {
          throw SchemaError("cross " + std::to_string(k) + " references continuous feature '" + t.feature + "'");
        }
      }
      std::sort(terms.begin(), terms.end(), [&](const CrossTerm& a, const CrossTerm& b) {
        return *schema.position(a.feature) < *schema.position(b.feature);
      });
      for (std::size_t i = 1; i < terms.size(); ++i) {
        if (terms[i].feature == terms[i - 1].feature) {
          throw SchemaError("cross " + std::to_string(k) + " repeats feature '" + terms[i].feature + "'");
        }
      }
      anchors_[detail::term_key(terms.front().feature, terms.front().value)].push_back(
          static_cast<std::uint32_t>(k));
    }
  }

  std::size_t size() const noexcept { return crosses_.size(); }
  const std::vector<CrossDef>& crosses() const noexcept { return crosses_; }
  const CrossDef& at(std::size_t k) const { return crosses_.at(k); }

  /// Crosses whose first term is (feature = value).
  std::span<const std::uint32_t> anchored_at(std::string_view feature, std::string_view value) const {
    const auto it = anchors_.find(detail::term_key(feature, value));
    if (it == anchors_.end()) {
      return {};
    }
    return it->second;
  }

  bool operator==(const CrossSpec& o) const { return crosses_ == o.crosses_; }

 private:
  std::vector<CrossDef> crosses_;
  std::unordered_map<std::string, std::vector<std::uint32_t>, detail::StringHash, std::equal_to<>> anchors_;
};

/// Indices k (ascending) of the crosses active on `features`. Evaluated on raw
/// values, so a cross can fire even when a constituent is out of vocabulary.
inline std::vector<std::uint32_t> cross_product(const FeatureMap& features, const CrossSpec& spec) {
  std::vector<std::uint32_t> active;
  if (spec.size() == 0) {
    return active;
  }
  for (const auto& [name, value] : features) {
    const auto* s = std::get_if<std::string>(&value);
    if (s == nullptr) {
      continue;
    }
    for (const std::uint32_t k : spec.anchored_at(name, *s)) {
      const auto& terms = spec.at(k).terms;
      const bool all = std::all_of(terms.begin() + 1, terms.end(), [&](const CrossTerm& t) {
        const auto it = features.find(t.feature);
        if (it == features.end()) {
          return false;
        }
        const auto* v = std::get_if<std::string>(&it->second);
        return v != nullptr && *v == t.value;
      });
      if (all) {
        active.push_back(k);
      }
    }
  }
  std::sort(active.begin(), active.end());
  return active;
}

inline std::vector<std::uint32_t> cross_product(const RawExample& example, const CrossSpec& spec) {
  return cross_product(example.features, spec);
}

/// Generates one value-anchored cross per value tuple of `features` that
/// co-occurs at least `min_count` times in a corpus.
struct CrossTemplate {
  std::vector<std::string> features;
  std::size_t min_count = 1;

  bool operator==(const CrossTemplate&) const = default;
};

template <RawCorpus Corpus>
std::vector<CrossDef> expand_cross_template(const Corpus& corpus, const FeatureSchema& schema,
                                            const CrossTemplate& tmpl) {
  if (tmpl.features.size() < 2) {
    throw SchemaError("cross template needs at least two features");
  }
  if (tmpl.min_count < 1) {
    throw ConfigError("cross template min_count must be >= 1");
  }
  for (const auto& f : tmpl.features) {
    if (schema.at(f).kind != FeatureKind::categorical) {
      throw SchemaError("cross template references continuous feature '" + f + "'");
    }
  }
  std::map<std::vector<std::string>, std::size_t> counts;
  std::vector<std::string> tuple(tmpl.features.size());
  for (const RawExample& ex : corpus) {
    bool complete = true;
    for (std::size_t i = 0; i < tmpl.features.size() && complete; ++i) {
      const std::string* v = categorical_value(ex.features, tmpl.features[i]);
      if (v == nullptr) {
        complete = false;
      } else {
        tuple[i] = *v;
      }
    }
    if (complete) {
      ++counts[tuple];
    }
  }
  std::vector<std::pair<const std::vector<std::string>*, std::size_t>> kept;
  for (const auto& [values, count] : counts) {
    if (count >= tmpl.min_count) {
      kept.emplace_back(&values, count);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<CrossDef> out;
  out.reserve(kept.size());
  for (const auto& [values, count] : kept) {
    CrossDef def;
    for (std::size_t i = 0; i < values->size(); ++i) {
      def.terms.push_back({tmpl.features[i], (*values)[i]});
    }
    out.push_back(std::move(def));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fitted pipeline

/// Immutable bundle of fitted artifacts plus the global index layout.
class FeaturePipeline {
 public:
  FeaturePipeline() = default;

  /// `vocabularies` must follow the schema's categorical features in order,
  /// `quantiles` its continuous features.
  FeaturePipeline(FeatureSchema schema, std::vector<Vocabulary> vocabularies,
                  std::vector<QuantileBoundaries> quantiles, CrossSpec crosses)
      : schema_(std::move(schema)),
        vocabularies_(std::move(vocabularies)),
        quantiles_(std::move(quantiles)),
        crosses_(std::move(crosses)) {
    const auto categorical = schema_.names(FeatureKind::categorical);
    const auto continuous = schema_.names(FeatureKind::continuous);
    if (categorical.size() != vocabularies_.size()) {
      throw SchemaError("pipeline needs one vocabulary per categorical feature");
    }
    if (continuous.size() != quantiles_.size()) {
      throw SchemaError("pipeline needs one quantile table per continuous feature");
    }
    std::uint64_t offset = 0;
    for (std::size_t s = 0; s < categorical.size(); ++s) {
      if (vocabularies_[s].feature() != categorical[s]) {
        throw SchemaError("vocabulary order does not match schema at '" + categorical[s] + "'");
      }
      offsets_.push_back(static_cast<FeatureIndex>(offset));
      offset += vocabularies_[s].size();
    }
    for (std::size_t s = 0; s < continuous.size(); ++s) {
      if (quantiles_[s].feature() != continuous[s]) {
        throw SchemaError("quantile order does not match schema at '" + continuous[s] + "'");
      }
    }
    cross_offset_ = static_cast<FeatureIndex>(offset);
    offset += crosses_.size();
    if (offset > UINT32_MAX) {
      throw DimensionError("wide feature space exceeds 32-bit index range");
    }
    dimension_ = static_cast<FeatureIndex>(offset);
    categorical_names_ = categorical;
    continuous_names_ = continuous;
  }

  const FeatureSchema& schema() const noexcept { return schema_; }
  const std::vector<Vocabulary>& vocabularies() const noexcept { return vocabularies_; }
  const std::vector<QuantileBoundaries>& quantiles() const noexcept { return quantiles_; }
  const CrossSpec& crosses() const noexcept { return crosses_; }

  /// Global dimension d of the wide feature space.
  FeatureIndex dimension() const noexcept { return dimension_; }
  FeatureIndex cross_offset() const noexcept { return cross_offset_; }
  FeatureIndex base_offset(std::size_t categorical_slot) const { return offsets_.at(categorical_slot); }
  std::size_t dense_width() const noexcept { return quantiles_.size(); }
  const std::vector<std::string>& categorical_features() const noexcept { return categorical_names_; }
  const std::vector<std::string>& continuous_features() const noexcept { return continuous_names_; }

  std::optional<std::size_t> categorical_slot(std::string_view feature) const {
    for (std::size_t s = 0; s < categorical_names_.size(); ++s) {
      if (categorical_names_[s] == feature) {
        return s;
      }
    }
    return std::nullopt;
  }

  /// Never reads the label; the caller attaches it. Every continuous feature
  /// must be present. Unknown feature names are ignored.
  EncodedExample encode_features(const FeatureMap& features) const {
    EncodedExample out;
    for (std::size_t s = 0; s < categorical_names_.size(); ++s) {
      if (const std::string* v = categorical_value(features, categorical_names_[s])) {
        if (const auto id = vocabularies_[s].lookup(*v)) {
          out.sparse_indices.push_back(offsets_[s] + *id);
        }
      }
    }
    for (const std::uint32_t k : cross_product(features, crosses_)) {
      out.sparse_indices.push_back(cross_offset_ + k);
    }
    out.dense_values.reserve(continuous_names_.size());
    for (std::size_t s = 0; s < continuous_names_.size(); ++s) {
      const auto x = continuous_value(features, continuous_names_[s]);
      if (!x) {
        throw SchemaError("missing continuous feature '" + continuous_names_[s] + "'");
      }
      if (std::isnan(*x)) {
        throw SchemaError("continuous feature '" + continuous_names_[s] + "' is NaN");
      }
      out.dense_values.push_back(quantiles_[s].normalize(*x));
    }
    return out;
  }

  EncodedExample encode(const RawExample& example) const {
    EncodedExample out = encode_features(example.features);
    out.label = example.label;
    return out;
  }

  template <RawCorpus Corpus>
  std::vector<EncodedExample> encode_all(const Corpus& corpus) const {
    std::vector<EncodedExample> out;
    for (const RawExample& ex : corpus) {
      out.push_back(encode(ex));
    }
    return out;
  }

  /// Stable string identity of a coordinate, independent of ID assignment.
  std::string coordinate_key(FeatureIndex index) const {
    if (index >= dimension_) {
      throw DimensionError("coordinate " + std::to_string(index) + " outside dimension " +
                           std::to_string(dimension_));
    }
    if (index >= cross_offset_) {
      std::string key = "X";
      for (const auto& t : crosses_.at(index - cross_offset_).terms) {
        key.push_back('\x1d');
        key += detail::term_key(t.feature, t.value);
      }
      return key;
    }
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), index);
    const std::size_t slot = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return "B\x1d" + detail::term_key(categorical_names_[slot], vocabularies_[slot].value(index - offsets_[slot]));
  }

  /// Readable rendering of a coordinate, e.g. "user=a" or "user=a&item=b".
  std::string describe(FeatureIndex index) const {
    std::string key = coordinate_key(index);
    std::string out;
    for (std::size_t i = 2; i < key.size(); ++i) {
      const char c = key[i];
      out.push_back(c == '\x1f' ? '=' : c == '\x1d' ? '&' : c);
    }
    return out;
  }

  std::unordered_map<std::string, FeatureIndex> coordinate_index() const {
    std::unordered_map<std::string, FeatureIndex> out;
    out.reserve(dimension_);
    for (FeatureIndex i = 0; i < dimension_; ++i) {
      out.emplace(coordinate_key(i), i);
    }
    return out;
  }

  bool operator==(const FeaturePipeline& o) const {
    return schema_ == o.schema_ && vocabularies_ == o.vocabularies_ && quantiles_ == o.quantiles_ &&
           crosses_ == o.crosses_;
  }

 private:
  FeatureSchema schema_;
  std::vector<Vocabulary> vocabularies_;
  std::vector<QuantileBoundaries> quantiles_;
  CrossSpec crosses_;
  std::vector<FeatureIndex> offsets_;
  FeatureIndex cross_offset_ = 0;
  FeatureIndex dimension_ = 0;
  std::vector<std::string> categorical_names_;
  std::vector<std::string> continuous_names_;
};

struct FeatureConfig {
  std::string name;
  FeatureKind kind = FeatureKind::categorical;
  std::size_t min_count = 1;  // categorical only
  std::size_t n_q = 10;       // continuous only

  bool operator==(const FeatureConfig&) const = default;
};

struct PipelineConfig {
  std::vector<FeatureConfig> features;
  std::vector<CrossDef> crosses;
  std::vector<CrossTemplate> cross_templates;

  FeatureSchema schema() const {
    std::vector<FeatureDef> defs;
    defs.reserve(features.size());
    for (const auto& f : features) {
      defs.push_back({f.name, f.kind});
    }
    return FeatureSchema(std::move(defs));
  }
};

/// Fits vocabularies, quantiles and template crosses on `corpus`. Explicit
/// crosses come first, then template expansions; duplicates are dropped.
template <RawCorpus Corpus>
FeaturePipeline fit_pipeline(const PipelineConfig& config, const Corpus& corpus) {
  FeatureSchema schema = config.schema();
  std::vector<Vocabulary> vocabularies;
  std::vector<QuantileBoundaries> quantiles;
  for (const auto& f : config.features) {
    if (f.kind == FeatureKind::categorical) {
      vocabularies.push_back(build_vocabulary(corpus, schema, f.name, f.min_count));
    } else {
      std::vector<double> values;
      for (const RawExample& ex : corpus) {
        if (const auto x = continuous_value(ex.features, f.name)) {
          values.push_back(*x);
        }
      }
      quantiles.push_back(fit_quantiles(values, f.n_q, f.name));
    }
  }
  std::vector<CrossDef> crosses = config.crosses;
  for (const auto& tmpl : config.cross_templates) {
    auto expanded = expand_cross_template(corpus, schema, tmpl);
    crosses.insert(crosses.end(), std::make_move_iterator(expanded.begin()),
                   std::make_move_iterator(expanded.end()));
  }
  // Canonicalize term order, then drop repeats keeping the first occurrence.
  CrossSpec canonical(std::move(crosses), schema);
  std::vector<CrossDef> unique;
  std::map<std::vector<CrossTerm>, bool> seen;
  for (const auto& c : canonical.crosses()) {
    if (seen.emplace(c.terms, true).second) {
      unique.push_back(c);
    }
  }
  return FeaturePipeline(schema, std::move(vocabularies), std::move(quantiles),
                         CrossSpec(std::move(unique), schema));
}

}  // namespace widedeep
