#pragma once

// Structured report records: one line per record,
//
//   <kind> key=value key=value ...
//
// with space-separated fields, stable key names, and values free of spaces.

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "widedeep/common.hpp"
#include "widedeep/raw_format.hpp"

namespace widedeep {

struct ReportRecord {
  std::string kind;
  std::map<std::string, std::string, std::less<>> fields;

  const std::string& at(std::string_view key) const {
    const auto it = fields.find(key);
    if (it == fields.end()) {
      throw SchemaError(kind + " record lacks field '" + std::string(key) + "'");
    }
    return it->second;
  }

  double real(std::string_view key) const { return parse_real(at(key), kind + "." + std::string(key)); }
};

inline std::string format_record(std::string_view kind, const std::vector<std::pair<std::string, std::string>>& fields) {
  std::string out(kind);
  for (const auto& [k, v] : fields) {
    out.push_back(' ');
    out += k;
    out.push_back('=');
    out += v;
  }
  return out;
}

inline ReportRecord parse_record(std::string_view line) {
  ReportRecord rec;
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string_view {
    while (pos < line.size() && line[pos] == ' ') {
      ++pos;
    }
    const std::size_t start = pos;
    while (pos < line.size() && line[pos] != ' ') {
      ++pos;
    }
    return line.substr(start, pos - start);
  };
  rec.kind = std::string(next_token());
  if (rec.kind.empty() || rec.kind.find('=') != std::string::npos) {
    throw SchemaError("record must start with a kind word");
  }
  for (std::string_view tok = next_token(); !tok.empty(); tok = next_token()) {
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw SchemaError("malformed report field '" + std::string(tok) + "'");
    }
    if (!rec.fields.emplace(std::string(tok.substr(0, eq)), std::string(tok.substr(eq + 1))).second) {
      throw SchemaError("report field '" + std::string(tok.substr(0, eq)) + "' repeated");
    }
  }
  return rec;
}

}  // namespace widedeep
