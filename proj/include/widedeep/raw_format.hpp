#pragma once

// Line-oriented raw record format:
//
//   <label> TAB <name>=<value> TAB <name>=<value> ...
//
// label is 0 or 1. Values of continuous schema features are decimal reals;
// everything else is taken verbatim as a categorical string (which may not
// contain TAB or newline). Lines that are empty or start with '#' are skipped
// by the file reader.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "widedeep/feature_pipeline.hpp"

namespace widedeep {

inline double parse_real(std::string_view text, std::string_view what) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw SchemaError("invalid real '" + std::string(text) + "' for " + std::string(what));
  }
  return value;
}

inline std::string format_real(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

/// Parses `name=value` fields into `out`; used for records and request payloads.
inline void parse_feature_fields(std::string_view fields, const FeatureSchema& schema, FeatureMap& out) {
  while (!fields.empty()) {
    const auto tab = fields.find('\t');
    const std::string_view field = fields.substr(0, tab);
    fields = tab == std::string_view::npos ? std::string_view{} : fields.substr(tab + 1);
    if (field.empty()) {
      continue;
    }
    const auto eq = field.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw SchemaError("malformed field '" + std::string(field) + "'");
    }
    const std::string_view name = field.substr(0, eq);
    const std::string_view value = field.substr(eq + 1);
    FeatureValue parsed;
    const auto pos = schema.position(name);
    if (pos && schema.features()[*pos].kind == FeatureKind::continuous) {
      parsed = parse_real(value, "feature '" + std::string(name) + "'");
    } else {
      parsed = std::string(value);
    }
    if (!out.emplace(std::string(name), std::move(parsed)).second) {
      throw SchemaError("feature '" + std::string(name) + "' appears twice");
    }
  }
}

inline RawExample parse_raw_record(std::string_view line, const FeatureSchema& schema) {
  if (!line.empty() && line.back() == '\r') {
    line.remove_suffix(1);
  }
  const auto tab = line.find('\t');
  const std::string_view label = line.substr(0, tab);
  RawExample ex;
  if (label == "0") {
    ex.label = 0;
  } else if (label == "1") {
    ex.label = 1;
  } else {
    throw SchemaError("label must be 0 or 1, got '" + std::string(label) + "'");
  }
  if (tab != std::string_view::npos) {
    parse_feature_fields(line.substr(tab + 1), schema, ex.features);
  }
  return ex;
}

/// Schema features first in schema order, then any extra fields by name.
inline std::string format_raw_record(const RawExample& ex, const FeatureSchema& schema) {
  std::string out = ex.label != 0 ? "1" : "0";
  auto append = [&](const std::string& name, const FeatureValue& v) {
    out.push_back('\t');
    out += name;
    out.push_back('=');
    if (const auto* s = std::get_if<std::string>(&v)) {
      out += *s;
    } else {
      out += format_real(std::get<double>(v));
    }
  };
  for (const auto& def : schema.features()) {
    if (const auto it = ex.features.find(def.name); it != ex.features.end()) {
      append(it->first, it->second);
    }
  }
  for (const auto& [name, value] : ex.features) {
    if (!schema.position(name)) {
      append(name, value);
    }
  }
  return out;
}

inline std::vector<RawExample> read_raw_file(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) {
    throw SchemaError("cannot open data file " + path.string());
  }
  std::vector<RawExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') {
      continue;
    }
    try {
      out.push_back(parse_raw_record(line, schema));
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::string format_raw_records(std::span<const RawExample> examples, const FeatureSchema& schema) {
  std::string out;
  for (const auto& ex : examples) {
    out += format_raw_record(ex, schema);
    out.push_back('\n');
  }
  return out;
}

}  // namespace widedeep
