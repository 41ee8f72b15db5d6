// Validates the line-oriented records printed by `widedeep`.
//
//   report_check FILE [--expect KIND[=COUNT]]... [--grid 200x1,100x2,50x4]
//
// Every nonblank line must parse as a record of a known kind with its
// required fields. Prints one summary line; exits 0 when all checks hold.

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "widedeep/evaluation.hpp"
#include "widedeep/reports.hpp"
#include "widedeep/serving.hpp"

using namespace widedeep;

namespace {

const std::map<std::string, std::vector<std::string>, std::less<>> kRequired{
    {"gen_data", {"train_examples", "holdout_examples", "rules", "seed"}},
    {"train_loss", {"step", "logloss"}},
    {"train", {"kind", "steps", "examples", "dimension", "crosses"}},
    {"warm_start", {"wide_copied", "rows_copied", "rows_fresh", "dense_layers_copied", "first_batch_prev_logloss"}},
    {"eval", {"auc", "logloss", "count", "positive_rate"}},
    {"compare", {"verdict", "candidate_auc", "baseline_auc", "delta", "tolerance"}},
    {"bench", {"batch_size", "workers", "candidates", "requests", "p50_ms", "p95_ms", "p99_ms", "mean_ms", "throughput"}},
};

void check_record(const std::string& line, std::map<std::string, int>& counts,
                  std::set<std::pair<std::size_t, std::size_t>>& grid_seen) {
  const ReportRecord rec = parse_record(line);
  const auto it = kRequired.find(rec.kind);
  if (it == kRequired.end()) {
    throw SchemaError("unknown record kind '" + rec.kind + "'");
  }
  for (const auto& key : it->second) {
    rec.at(key);
  }
  if (rec.kind == "eval") {
    const EvalReport r = parse_eval_report(line);
    if (r.auc < 0.0 || r.auc > 1.0 || r.count < 1) {
      throw SchemaError("eval record out of range");
    }
  } else if (rec.kind == "bench") {
    const BenchReport r = parse_bench_record(line);
    grid_seen.insert({r.shard_size, r.workers});
  } else if (rec.kind == "compare") {
    const std::string& v = rec.at("verdict");
    if (v != "pass" && v != "fail") {
      throw SchemaError("compare verdict must be pass or fail");
    }
    rec.real("delta");
  } else if (rec.kind == "train_loss") {
    rec.real("logloss");
  }
  counts[rec.kind]++;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Check widedeep report records"};
  std::string path;
  std::vector<std::string> expects;
  std::string grid;
  app.add_option("file", path, "Record file ('-' for stdin)")->required();
  app.add_option("--expect", expects, "Required kind, optionally with an exact count: bench=3");
  app.add_option("--grid", grid, "Bench grid points that must all appear, e.g. 200x1,100x2,50x4");
  CLI11_PARSE(app, argc, argv);

  std::ifstream file;
  if (path != "-") {
    file.open(path);
    if (!file) {
      std::cerr << "report_check: cannot open " << path << '\n';
      return 2;
    }
  }
  std::istream& in = path == "-" ? std::cin : file;

  std::map<std::string, int> counts;
  std::set<std::pair<std::size_t, std::size_t>> grid_seen;
  std::string line;
  int line_no = 0;
  int failures = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      check_record(line, counts, grid_seen);
    } catch (const Error& e) {
      std::cerr << "line " << line_no << ": " << e.what() << '\n';
      ++failures;
    }
  }
  for (const auto& e : expects) {
    const auto eq = e.find('=');
    const std::string kind = e.substr(0, eq);
    const int have = counts.contains(kind) ? counts[kind] : 0;
    if (eq == std::string::npos ? have == 0 : have != std::stoi(e.substr(eq + 1))) {
      std::cerr << "expected " << e << ", found " << have << " '" << kind << "' records\n";
      ++failures;
    }
  }
  std::stringstream points(grid);
  std::string point;
  while (std::getline(points, point, ',')) {
    const auto x = point.find('x');
    const std::pair<std::size_t, std::size_t> p{std::stoul(point.substr(0, x)), std::stoul(point.substr(x + 1))};
    if (!grid_seen.contains(p)) {
      std::cerr << "bench grid point " << point << " missing\n";
      ++failures;
    }
  }
  int total = 0;
  for (const auto& [kind, n] : counts) {
    total += n;
  }
  std::cout << (failures == 0 ? "ok" : "FAILED") << ": " << total << " records, " << failures << " problems\n";
  return failures == 0 ? 0 : 1;
}
