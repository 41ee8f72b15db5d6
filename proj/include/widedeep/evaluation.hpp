#pragma once

// Offline metrics and model comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "widedeep/checkpoint.hpp"
#include "widedeep/common.hpp"
#include "widedeep/joint_model.hpp"
#include "widedeep/reports.hpp"

namespace widedeep {

struct ScoredLabel {
  double score = 0.0;
  int label = 0;
};

/// Mann-Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counted as one half. The count is accumulated exactly
/// in integers (doubled to absorb the half) before the final division.
inline double auc(std::span<const ScoredLabel> scored) {
  std::vector<ScoredLabel> sorted(scored.begin(), scored.end());
  for (const auto& s : sorted) {
    if (std::isnan(s.score)) {
      throw MetricError("AUC input contains a NaN score");
    }
  }
  std::sort(sorted.begin(), sorted.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score < b.score; });
  std::uint64_t positives = 0;
  std::uint64_t negatives_below = 0;
  std::uint64_t twice_wins = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].label != 0 ? pos : neg) += 1;
      ++j;
    }
    twice_wins += 2 * pos * negatives_below + pos * neg;
    positives += pos;
    negatives_below += neg;
    i = j;
  }
  const std::uint64_t negatives = negatives_below;
  if (positives == 0 || negatives == 0) {
    throw MetricError("AUC is undefined without both positive and negative labels");
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

/// Collects (score, label) pairs one at a time; AUC on demand.
class AucAccumulator {
 public:
  void add(double score, int label) { scored_.push_back({score, label}); }
  std::size_t size() const noexcept { return scored_.size(); }
  double value() const { return auc(scored_); }

 private:
  std::vector<ScoredLabel> scored_;
};

struct EvalReport {
  double auc = 0.5;
  double mean_logloss = 0.0;
  std::size_t count = 0;
  double positive_rate = 0.0;
};

inline std::string format_eval_report(const EvalReport& r) {
  return format_record("eval", {{"auc", format_real(r.auc)},
                                {"logloss", format_real(r.mean_logloss)},
                                {"count", std::to_string(r.count)},
                                {"positive_rate", format_real(r.positive_rate)}});
}

inline EvalReport parse_eval_report(std::string_view line) {
  const ReportRecord rec = parse_record(line);
  if (rec.kind != "eval") {
    throw SchemaError("expected an eval record, got '" + rec.kind + "'");
  }
  EvalReport r;
  r.auc = rec.real("auc");
  r.mean_logloss = rec.real("logloss");
  r.count = static_cast<std::size_t>(rec.real("count"));
  r.positive_rate = rec.real("positive_rate");
  return r;
}

/// Aggregates metrics from per-example logits.
inline EvalReport report_from_logits(std::span<const double> logits, std::span<const int> labels) {
  if (logits.empty()) {
    throw Error("evaluation dataset is empty");
  }
  AucAccumulator acc;
  double loss = 0.0;
  std::size_t positives = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    acc.add(logits[k], labels[k]);  // AUC is rank-based; logits avoid sigmoid saturation ties
    loss += logloss_from_logit(logits[k], labels[k]);
    positives += labels[k] != 0 ? 1 : 0;
  }
  EvalReport r;
  r.count = logits.size();
  r.mean_logloss = loss / static_cast<double>(r.count);
  r.positive_rate = static_cast<double>(positives) / static_cast<double>(r.count);
  r.auc = acc.value();
  return r;
}

inline EvalReport evaluate(const WideDeepModel& model, std::span<const EncodedExample> dataset) {
  std::vector<double> logits;
  std::vector<int> labels;
  logits.reserve(dataset.size());
  labels.reserve(dataset.size());
  for (const auto& ex : dataset) {
    logits.push_back(logit(model, ex));
    labels.push_back(ex.label);
  }
  return report_from_logits(logits, labels);
}

/// A holdout that cannot be encoded by one of the pipelines being compared.
struct IncompatibleError : Error {
  using Error::Error;
};

inline std::vector<EncodedExample> encode_for(const Checkpoint& ckpt, std::span<const RawExample> holdout,
                                              std::string_view role) {
  try {
    return ckpt.pipeline.encode_all(holdout);
  } catch (const SchemaError& e) {
    throw IncompatibleError("holdout incompatible with " + std::string(role) + " pipeline: " + e.what());
  }
}

inline EvalReport evaluate(const Checkpoint& ckpt, std::span<const RawExample> holdout) {
  return evaluate(ckpt.model, encode_for(ckpt, holdout, "model"));
}

struct CompareVerdict {
  bool pass = false;
  double candidate_auc = 0.0;
  double baseline_auc = 0.0;
  double delta = 0.0;  // candidate - baseline
  double tolerance = 0.0;
};

inline constexpr double kDefaultCompareTolerance = 0.002;

/// Pass iff the candidate's AUC is no worse than the baseline's by more than
/// `tolerance`. The 1e-12 slack absorbs rounding in the subtraction, so decimal
/// inputs sitting exactly on the boundary (0.726 vs 0.728 at 0.002) pass.
inline CompareVerdict judge(double candidate_auc, double baseline_auc, double tolerance) {
  CompareVerdict v;
  v.candidate_auc = candidate_auc;
  v.baseline_auc = baseline_auc;
  v.delta = candidate_auc - baseline_auc;
  v.tolerance = tolerance;
  v.pass = v.delta >= -tolerance - 1e-12;
  return v;
}

inline CompareVerdict compare_models(const Checkpoint& candidate, const Checkpoint& baseline,
                                     std::span<const RawExample> holdout,
                                     double tolerance = kDefaultCompareTolerance) {
  const auto cand = encode_for(candidate, holdout, "candidate");
  const auto base = encode_for(baseline, holdout, "baseline");
  return judge(evaluate(candidate.model, cand).auc, evaluate(baseline.model, base).auc, tolerance);
}

inline std::string format_compare_verdict(const CompareVerdict& v) {
  return format_record("compare", {{"verdict", v.pass ? "pass" : "fail"},
                                   {"candidate_auc", format_real(v.candidate_auc)},
                                   {"baseline_auc", format_real(v.baseline_auc)},
                                   {"delta", format_real(v.delta)},
                                   {"tolerance", format_real(v.tolerance)}});
}

/// Separately trained models combined only at inference: sigmoid of the mean logit.
inline double ensemble_logit(double first_logit, double second_logit) { return 0.5 * (first_logit + second_logit); }

inline double ensemble_predict(const Checkpoint& first, const Checkpoint& second, const RawExample& example) {
  const double a = logit(first.model, first.pipeline.encode(example));
  const double b = logit(second.model, second.pipeline.encode(example));
  return sigmoid(ensemble_logit(a, b));
}

inline EvalReport evaluate_ensemble(const Checkpoint& first, const Checkpoint& second,
                                    std::span<const RawExample> holdout) {
  const auto a = encode_for(first, holdout, "first ensemble member");
  const auto b = encode_for(second, holdout, "second ensemble member");
  std::vector<double> logits;
  std::vector<int> labels;
  for (std::size_t k = 0; k < holdout.size(); ++k) {
    logits.push_back(ensemble_logit(logit(first.model, a[k]), logit(second.model, b[k])));
    labels.push_back(holdout[k].label);
  }
  return report_from_logits(logits, labels);
}

}  // namespace widedeep
