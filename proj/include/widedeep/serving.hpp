#pragma once

// Request scoring for serving: a candidate list is split into shards that are
// scored in parallel on a worker pool against an immutable model snapshot,
// then ranked by score. Plus a latency benchmark over (shard size, workers).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "widedeep/checkpoint.hpp"
#include "widedeep/common.hpp"
#include "widedeep/joint_model.hpp"
#include "widedeep/reports.hpp"

namespace widedeep {

/// Fixed-size pool. `run` blocks until every task is done; the calling
/// thread works too, so a pool of N workers owns N - 1 threads.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t workers) : workers_(workers) {
    if (workers < 1) {
      throw ConfigError("worker count must be >= 1");
    }
    threads_.reserve(workers - 1);
    for (std::size_t k = 1; k < workers; ++k) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  ~WorkerPool() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    wake_.notify_all();
    threads_.clear();  // jthread joins
  }

  std::size_t workers() const noexcept { return workers_; }

  /// Calls fn(0) .. fn(tasks - 1), each exactly once, spread over the pool.
  /// The first exception thrown by a task is rethrown here.
  void run(std::size_t tasks, const std::function<void(std::size_t)>& fn) {
    std::lock_guard serial(run_mu_);
    Job job;
    job.fn = &fn;
    job.tasks = tasks;
    if (!threads_.empty() && tasks > 1) {
      {
        std::lock_guard lk(mu_);
        job_ = &job;
        ++generation_;
      }
      wake_.notify_all();
    }
    work(job);
    {
      std::unique_lock lk(mu_);
      done_.wait(lk, [&] { return job.finished.load() == tasks && active_ == 0; });
      job_ = nullptr;
    }
    if (job.error) {
      std::rethrow_exception(job.error);
    }
  }

 private:
  struct Job {
    const std::function<void(std::size_t)>* fn = nullptr;
    std::size_t tasks = 0;
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> finished{0};
    std::mutex error_mu;
    std::exception_ptr error;
  };

  static void work(Job& job) {
    for (;;) {
      const std::size_t t = job.next.fetch_add(1);
      if (t >= job.tasks) {
        return;
      }
      try {
        (*job.fn)(t);
      } catch (...) {
        std::lock_guard lk(job.error_mu);
        if (!job.error) {
          job.error = std::current_exception();
        }
      }
      job.finished.fetch_add(1);
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      Job* job = nullptr;
      {
        std::unique_lock lk(mu_);
        wake_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) {
          return;
        }
        seen = generation_;
        job = job_;
        if (job == nullptr) {
          continue;
        }
        ++active_;
      }
      work(*job);
      {
        std::lock_guard lk(mu_);
        --active_;
      }
      done_.notify_all();
    }
  }

  std::size_t workers_;
  std::mutex run_mu_;
  std::mutex mu_;
  std::condition_variable wake_;
  std::condition_variable done_;
  Job* job_ = nullptr;
  std::uint64_t generation_ = 0;
  std::size_t active_ = 0;
  bool stop_ = false;
  std::vector<std::jthread> threads_;
};

struct Candidate {
  std::string id;
  FeatureMap features;
};

/// Shared user/context features plus the candidate items to rank.
struct ScoreRequest {
  std::string request_id;
  FeatureMap shared;
  std::vector<Candidate> candidates;
};

struct RankedItem {
  std::string candidate_id;
  double score = 0.0;

  bool operator==(const RankedItem&) const = default;
};

struct CandidateFailure {
  std::string candidate_id;
  std::string message;

  bool operator==(const CandidateFailure&) const = default;
};

/// Sorted by score descending, ties by candidate id ascending. Candidates that
/// could not be encoded are listed in `failures` instead.
struct RankedList {
  std::string request_id;
  std::vector<RankedItem> items;
  std::vector<CandidateFailure> failures;
};

inline void sort_ranked(std::vector<RankedItem>& items) {
  std::sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) {
      return a.score > b.score;
    }
    return a.candidate_id < b.candidate_id;
  });
}

/// Candidate features take precedence over shared ones with the same name.
inline double score_candidate(const Checkpoint& snapshot, const FeatureMap& shared, const Candidate& candidate) {
  FeatureMap merged = shared;
  for (const auto& [name, value] : candidate.features) {
    merged.insert_or_assign(name, value);
  }
  return predict(snapshot.model, snapshot.pipeline.encode_features(merged));
}

inline RankedList score_request(const Checkpoint& snapshot, const ScoreRequest& request, WorkerPool& pool,
                                std::size_t shard_size) {
  if (shard_size < 1) {
    throw ConfigError("shard_size must be >= 1");
  }
  if (request.candidates.empty()) {
    throw Error("score request '" + request.request_id + "' has no candidates");
  }
  const std::size_t n = request.candidates.size();
  std::vector<double> scores(n, 0.0);
  std::vector<std::optional<std::string>> errors(n);
  const std::size_t shards = (n + shard_size - 1) / shard_size;
  pool.run(shards, [&](std::size_t s) {
    const std::size_t end = std::min(n, (s + 1) * shard_size);
    for (std::size_t k = s * shard_size; k < end; ++k) {
      try {
        scores[k] = score_candidate(snapshot, request.shared, request.candidates[k]);
      } catch (const Error& e) {
        errors[k] = e.what();
      }
    }
  });
  RankedList out;
  out.request_id = request.request_id;
  out.items.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (errors[k]) {
      out.failures.push_back({request.candidates[k].id, *errors[k]});
    } else {
      out.items.push_back({request.candidates[k].id, scores[k]});
    }
  }
  sort_ranked(out.items);
  std::sort(out.failures.begin(), out.failures.end(),
            [](const CandidateFailure& a, const CandidateFailure& b) { return a.candidate_id < b.candidate_id; });
  return out;
}

inline RankedList score_request(const Checkpoint& snapshot, const ScoreRequest& request, std::size_t workers,
                                std::size_t shard_size) {
  WorkerPool pool(workers);
  return score_request(snapshot, request, pool, shard_size);
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchPoint {
  std::size_t shard_size = 200;
  std::size_t workers = 1;

  bool operator==(const BenchPoint&) const = default;
};

/// The batch-size / thread-count pairs that hold 200 candidates per request fixed.
inline std::vector<BenchPoint> default_bench_grid() { return {{200, 1}, {100, 2}, {50, 4}}; }

struct BenchReport {
  std::size_t shard_size = 0;
  std::size_t workers = 0;
  std::size_t requests = 0;
  std::size_t candidates = 0;  // per request
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
  double mean_ms = 0.0;
  double throughput = 0.0;  // candidates scored per second
};

using RequestGenerator = std::function<ScoreRequest(std::mt19937_64&)>;

/// Nearest-rank percentile of an ascending sample.
inline double percentile(std::span<const double> sorted, double p) {
  if (sorted.empty()) {
    return 0.0;
  }
  const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

struct BenchOptions {
  std::chrono::duration<double> duration{1.0};  // per grid point
  std::size_t min_requests = 20;
  std::size_t distinct_requests = 16;
  std::uint64_t seed = 7;
};

inline std::vector<BenchReport> bench(const Checkpoint& snapshot, const RequestGenerator& generate,
                                      std::span<const BenchPoint> grid, const BenchOptions& options = {}) {
  std::mt19937_64 rng(options.seed);
  std::vector<ScoreRequest> requests;
  for (std::size_t k = 0; k < std::max<std::size_t>(options.distinct_requests, 1); ++k) {
    requests.push_back(generate(rng));
  }
  std::vector<BenchReport> reports;
  for (const BenchPoint& point : grid) {
    WorkerPool pool(point.workers);
    for (std::size_t k = 0; k < std::min<std::size_t>(3, requests.size()); ++k) {
      (void)score_request(snapshot, requests[k], pool, point.shard_size);
    }
    std::vector<double> latencies;
    std::size_t scored = 0;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t k = 0;; ++k) {
      const auto elapsed = std::chrono::steady_clock::now() - start;
      if (latencies.size() >= options.min_requests && elapsed >= options.duration) {
        break;
      }
      const ScoreRequest& req = requests[k % requests.size()];
      const auto t0 = std::chrono::steady_clock::now();
      const RankedList ranked = score_request(snapshot, req, pool, point.shard_size);
      const auto t1 = std::chrono::steady_clock::now();
      latencies.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      scored += ranked.items.size() + ranked.failures.size();
    }
    const double total_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    BenchReport r;
    r.shard_size = point.shard_size;
    r.workers = point.workers;
    r.requests = latencies.size();
    r.candidates = requests.front().candidates.size();
    double sum = 0.0;
    for (const double l : latencies) {
      sum += l;
    }
    r.mean_ms = sum / static_cast<double>(latencies.size());
    std::sort(latencies.begin(), latencies.end());
    r.p50_ms = percentile(latencies, 0.50);
    r.p95_ms = percentile(latencies, 0.95);
    r.p99_ms = percentile(latencies, 0.99);
    r.throughput = total_s > 0.0 ? static_cast<double>(scored) / total_s : 0.0;
    reports.push_back(r);
  }
  return reports;
}

/// Random requests drawn from the pipeline's vocabularies and quantile ranges.
/// Features named in `candidate_features` vary per candidate; the rest are shared.
inline RequestGenerator make_request_generator(const FeaturePipeline& pipeline,
                                               std::vector<std::string> candidate_features,
                                               std::size_t candidates_per_request) {
  return [&pipeline, candidate_features = std::move(candidate_features),
          candidates_per_request](std::mt19937_64& rng) {
    auto draw = [&](const FeatureDef& def) -> FeatureValue {
      if (def.kind == FeatureKind::categorical) {
        const Vocabulary& vocab = pipeline.vocabularies()[*pipeline.categorical_slot(def.name)];
        if (vocab.size() == 0) {
          return std::string("<none>");
        }
        std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
        return vocab.value(static_cast<std::uint32_t>(pick(rng)));
      }
      const auto& names = pipeline.continuous_features();
      const auto slot = static_cast<std::size_t>(std::find(names.begin(), names.end(), def.name) - names.begin());
      const auto& b = pipeline.quantiles()[slot].boundaries();
      std::uniform_real_distribution<double> dist(b.front() - 1.0, b.back() + 1.0);
      return dist(rng);
    };
    auto is_candidate = [&](const std::string& name) {
      return std::find(candidate_features.begin(), candidate_features.end(), name) != candidate_features.end();
    };
    ScoreRequest req;
    req.request_id = "req" + std::to_string(rng() % 1000000007ULL);
    for (const auto& def : pipeline.schema().features()) {
      if (!is_candidate(def.name)) {
        req.shared.emplace(def.name, draw(def));
      }
    }
    for (std::size_t c = 0; c < candidates_per_request; ++c) {
      Candidate cand;
      cand.id = "c" + std::to_string(c);
      for (const auto& def : pipeline.schema().features()) {
        if (is_candidate(def.name)) {
          cand.features.emplace(def.name, draw(def));
        }
      }
      req.candidates.push_back(std::move(cand));
    }
    return req;
  };
}

inline std::string format_bench_record(const BenchReport& r) {
  return format_record("bench", {{"batch_size", std::to_string(r.shard_size)},
                                 {"workers", std::to_string(r.workers)},
                                 {"candidates", std::to_string(r.candidates)},
                                 {"requests", std::to_string(r.requests)},
                                 {"p50_ms", format_real(r.p50_ms)},
                                 {"p95_ms", format_real(r.p95_ms)},
                                 {"p99_ms", format_real(r.p99_ms)},
                                 {"mean_ms", format_real(r.mean_ms)},
                                 {"throughput", format_real(r.throughput)}});
}

/// Parses a bench record and checks the percentile ordering.
inline BenchReport parse_bench_record(std::string_view line) {
  const ReportRecord rec = parse_record(line);
  if (rec.kind != "bench") {
    throw SchemaError("expected a bench record, got '" + rec.kind + "'");
  }
  BenchReport r;
  r.shard_size = static_cast<std::size_t>(rec.real("batch_size"));
  r.workers = static_cast<std::size_t>(rec.real("workers"));
  r.candidates = static_cast<std::size_t>(rec.real("candidates"));
  r.requests = static_cast<std::size_t>(rec.real("requests"));
  r.p50_ms = rec.real("p50_ms");
  r.p95_ms = rec.real("p95_ms");
  r.p99_ms = rec.real("p99_ms");
  r.mean_ms = rec.real("mean_ms");
  r.throughput = rec.real("throughput");
  if (!(r.p50_ms <= r.p95_ms && r.p95_ms <= r.p99_ms)) {
    throw SchemaError("bench record percentiles are not nondecreasing");
  }
  return r;
}

inline std::string render_bench_table(std::span<const BenchReport> reports) {
  std::string out = "Batch size  Threads  p50 (ms)  p95 (ms)  p99 (ms)  scores/s\n";
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%10zu  %7zu  %8.3f  %8.3f  %8.3f  %8.0f\n", r.shard_size, r.workers, r.p50_ms,
                  r.p95_ms, r.p99_ms, r.throughput);
    out += buf;
  }
  return out;
}

}  // namespace widedeep
