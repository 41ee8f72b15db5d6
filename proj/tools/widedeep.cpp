// Command-line driver: gen-data, train, eval, bench.
//
// Structured records go to stdout, one per line; logs, warnings and the
// latency table go to stderr. Exit status: 0 success, 1 failed eval gate,
// 2 any other error.

#include <cstdio>
#include <optional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "widedeep/widedeep.hpp"

using namespace widedeep;
using nlohmann::json;

namespace {

constexpr int kExitGateFailed = 1;
constexpr int kExitError = 2;

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> sets;  // section.key=value overrides
};

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// it is valid JSON and taken as a string otherwise.
void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) {
    value = text;
  }
  json* node = &doc;
  std::stringstream parts(path);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) {
    keys.push_back(part);
  }
  for (std::size_t k = 0; k + 1 < keys.size(); ++k) {
    json& child = (*node)[keys[k]];
    if (child.is_null()) {
      child = json::object();
    }
    if (!child.is_object()) {
      throw ConfigError("override path '" + path + "' passes through a non-object");
    }
    node = &child;
  }
  (*node)[keys.back()] = std::move(value);
}

ExperimentConfig load_config(const GlobalOptions& g) {
  json doc = json::object();
  if (!g.config_path.empty()) {
    try {
      doc = json::parse(read_file(g.config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError(g.config_path + ": " + e.what());
    }
  }
  for (const auto& s : g.sets) {
    apply_override(doc, s);
  }
  return parse_experiment_config(doc);
}

void emit(const std::string& record) {
  std::cout << record << '\n' << std::flush;
}

// ---------------------------------------------------------------------------

struct GenOptions {
  std::string out;
  std::string preset;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GlobalOptions& g, const GenOptions& o) {
  const ExperimentConfig cfg = load_config(g);
  GenConfig gen = cfg.datagen;
  if (!o.preset.empty()) {
    gen = preset_config(o.preset, o.seed.value_or(gen.seed));
  }
  if (o.seed) {
    gen.seed = *o.seed;
  }
  gen.validate();
  const GeneratedData data = generate(gen);
  write_dataset(o.out, gen, data);
  emit(format_record("gen_data", {{"train_examples", std::to_string(data.train.size())},
                                  {"holdout_examples", std::to_string(data.holdout.size())},
                                  {"rules", std::to_string(data.rules.size())},
                                  {"seed", std::to_string(gen.seed)}}));
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string out;
  std::string warm_start;
  bool wide_only = false;
  bool deep_only = false;
  bool fresh_accumulators = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> log_every;
};

int cmd_train(const GlobalOptions& g, const TrainOptions& o) {
  ExperimentConfig cfg = load_config(g);
  if (o.seed) {
    cfg.train.seed = *o.seed;
  }
  if (o.epochs) {
    cfg.train.epochs = *o.epochs;
  }
  if (o.batch_size) {
    cfg.train.batch_size = *o.batch_size;
  }
  if (o.log_every) {
    cfg.train.log_every = *o.log_every;
  }
  cfg.train.validate();
  ModelKind kind = cfg.kind;
  if (o.wide_only) {
    kind = ModelKind::wide_only;
  } else if (o.deep_only) {
    kind = ModelKind::deep_only;
  }

  const FeatureSchema schema = cfg.pipeline.schema();
  const auto raw = read_raw_file(o.data, schema);
  const FeaturePipeline pipeline = fit_pipeline(cfg.pipeline, raw);
  const auto data = pipeline.encode_all(raw);

  WideDeepModel model;
  if (!o.warm_start.empty()) {
    const Checkpoint previous = load_checkpoint(o.warm_start);
    if ((o.wide_only || o.deep_only) && previous.model.kind() != kind) {
      throw ConfigError("--warm-start checkpoint is " + std::string(to_string(previous.model.kind())) +
                        ", which conflicts with the requested ablation");
    }
    kind = previous.model.kind();
    WarmStartReport rep;
    model = warm_start(previous, pipeline, {!o.fresh_accumulators, cfg.train.seed}, &rep);
    for (const auto& w : rep.warnings) {
      std::cerr << "warning: " << w << '\n';
    }
    // The previous model scored on the rows the new run starts with; equal to
    // the first logged loss when the vocabulary is unchanged.
    const auto order = first_epoch_order(data.size(), cfg.train.seed);
    const std::size_t n = std::min(cfg.train.batch_size, order.size());
    double prev_loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const RawExample& row = raw[order[k]];
      prev_loss += logloss_from_logit(logit(previous.model, previous.pipeline.encode(row)), row.label);
    }
    prev_loss /= static_cast<double>(n);
    emit(format_record("warm_start", {{"wide_copied", std::to_string(rep.wide_copied)},
                                      {"rows_copied", std::to_string(rep.rows_copied)},
                                      {"rows_fresh", std::to_string(rep.rows_fresh)},
                                      {"dense_layers_copied", rep.dense_layers_copied ? "1" : "0"},
                                      {"first_batch_prev_logloss", format_real(prev_loss)}}));
  } else {
    model = make_model(pipeline, cfg.model, kind, cfg.train.seed);
  }

  const TrainResult result = train(model, data, cfg.train, [](const LossPoint& p) {
    emit(format_record("train_loss", {{"step", std::to_string(p.step)}, {"logloss", format_real(p.mean_logloss)}}));
  });
  const Checkpoint ckpt{kCheckpointVersion, pipeline, std::move(model), {result.steps, cfg.train.seed}};
  save_checkpoint(ckpt, o.out);
  emit(format_record("train", {{"kind", std::string(to_string(kind))},
                               {"steps", std::to_string(result.steps)},
                               {"examples", std::to_string(data.size())},
                               {"dimension", std::to_string(pipeline.dimension())},
                               {"crosses", std::to_string(pipeline.crosses().size())}}));
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string model;
  std::string data;
  std::string baseline;
  std::optional<double> tolerance;
};

int cmd_eval(const GlobalOptions& g, const EvalOptions& o) {
  const ExperimentConfig cfg = load_config(g);
  const Checkpoint candidate = load_checkpoint(o.model);
  const auto holdout = read_raw_file(o.data, candidate.pipeline.schema());
  emit(format_eval_report(evaluate(candidate, holdout)));
  if (o.baseline.empty()) {
    return 0;
  }
  const Checkpoint baseline = load_checkpoint(o.baseline);
  const CompareVerdict v = compare_models(candidate, baseline, holdout, o.tolerance.value_or(cfg.tolerance));
  emit(format_compare_verdict(v));
  return v.pass ? 0 : kExitGateFailed;
}

// ---------------------------------------------------------------------------

struct BenchOptionsCli {
  std::string model;
  std::string grid;
  std::optional<double> duration;
  std::optional<std::size_t> candidates;
  std::uint64_t seed = 7;
};

std::vector<BenchPoint> parse_grid(const std::string& text) {
  std::vector<BenchPoint> grid;
  std::stringstream items(text);
  std::string item;
  while (std::getline(items, item, ',')) {
    const auto x = item.find('x');
    std::size_t batch = 0;
    std::size_t workers = 0;
    try {
      if (x == std::string::npos) {
        throw std::invalid_argument(item);
      }
      std::size_t used = 0;
      batch = std::stoul(item.substr(0, x), &used);
      if (used != x) {
        throw std::invalid_argument(item);
      }
      workers = std::stoul(item.substr(x + 1), &used);
      if (used != item.size() - x - 1) {
        throw std::invalid_argument(item);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("grid entry '" + item + "' must look like BATCHxWORKERS, e.g. 50x4");
    }
    if (batch == 0 || workers == 0) {
      throw ConfigError("grid entry '" + item + "' needs positive batch size and workers");
    }
    grid.push_back({batch, workers});
  }
  if (grid.empty()) {
    throw ConfigError("bench grid is empty");
  }
  return grid;
}

int cmd_bench(const GlobalOptions& g, const BenchOptionsCli& o) {
  const ExperimentConfig cfg = load_config(g);
  const Checkpoint snapshot = load_checkpoint(o.model);
  const std::vector<BenchPoint> grid = o.grid.empty() ? cfg.serving.grid : parse_grid(o.grid);
  for (const auto& f : cfg.serving.candidate_features) {
    snapshot.pipeline.schema().at(f);  // unknown names fail here, not mid-benchmark
  }
  BenchOptions opts;
  opts.duration = std::chrono::duration<double>(o.duration.value_or(cfg.serving.duration_s));
  opts.seed = o.seed;
  const auto generator = make_request_generator(snapshot.pipeline, cfg.serving.candidate_features,
                                                o.candidates.value_or(cfg.serving.candidates));
  const auto reports = bench(snapshot, generator, grid, opts);
  for (const auto& r : reports) {
    emit(format_bench_record(r));
  }
  std::cerr << render_bench_table(reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wide & deep recommender: data generation, training, evaluation gate, serving benchmark"};
  app.require_subcommand(1);
  GlobalOptions global;
  app.add_option("--config", global.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--set", global.sets, "Override a config field, e.g. --set model.ftrl.alpha=0.5")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic train/holdout dataset");
  gen_cmd->add_option("--out", gen.out, "Existing output directory")->required();
  gen_cmd->add_option("--preset", gen.preset, "default, exceptions or latent");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Fit the pipeline, train a model, write a checkpoint");
  train_cmd->add_option("--data", tr.data, "Training records")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Checkpoint to write")->required();
  train_cmd->add_option("--warm-start", tr.warm_start, "Initialize from this checkpoint")->check(CLI::ExistingFile);
  auto* wide_flag = train_cmd->add_flag("--wide-only", tr.wide_only, "Train only the wide component");
  auto* deep_flag = train_cmd->add_flag("--deep-only", tr.deep_only, "Train only the deep component");
  wide_flag->excludes(deep_flag);
  train_cmd->add_flag("--fresh-accumulators", tr.fresh_accumulators,
                      "With --warm-start, copy weights but reset optimizer state");
  train_cmd->add_option("--seed", tr.seed, "Training seed (shuffling and initialization)");
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--log-every", tr.log_every, "Steps per loss record (0: once per epoch)");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a holdout; with --baseline, gate on AUC");
  eval_cmd->add_option("--model", ev.model, "Candidate checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Holdout records")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--baseline", ev.baseline, "Baseline checkpoint to compare against")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--tolerance", ev.tolerance, "Allowed AUC drop versus the baseline");

  BenchOptionsCli be;
  auto* bench_cmd = app.add_subcommand("bench", "Serving latency over (batch size, workers) grid points");
  bench_cmd->add_option("--model", be.model, "Checkpoint to serve")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--grid", be.grid, "Comma-separated BATCHxWORKERS points, e.g. 200x1,100x2,50x4");
  bench_cmd->add_option("--duration", be.duration, "Seconds per grid point");
  bench_cmd->add_option("--candidates", be.candidates, "Candidates per request");
  bench_cmd->add_option("--seed", be.seed, "Request generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitError;
  }

  try {
    if (*gen_cmd) {
      return cmd_gen_data(global, gen);
    }
    if (*train_cmd) {
      return cmd_train(global, tr);
    }
    if (*eval_cmd) {
      return cmd_eval(global, ev);
    }
    return cmd_bench(global, be);
  } catch (const widedeep::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}
