// Benchmark harness: merged pipeline vs the exact unmerged oracle on seeded
// synthetic workloads, swept over merge ratio, group size, sequence length,
// coalescing strategy and bias correction.
#pragma once

#include "come/block.hpp"
#include "come/config.hpp"
#include "come/predictor.hpp"
#include "come/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

namespace come {

enum class Strategy {
  kConfidence,  // bottom-p confidence mask, group average
  kSimilarity,  // top-p self-similarity mask, group average
  kPickOne,     // confidence mask, one random member per group
  kDropAll,     // confidence mask, flagged groups removed
};

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

enum class ConfidenceMode { kTeacher, kPredictor };

struct SweepConfig {
  std::vector<double> ratios{0.5};
  std::vector<Index> group_sizes{4};
  std::vector<Index> frames{1, 4, 16};
  Index special = 4;
  Index grid_h = 16;
  Index grid_w = 16;
  Index channels = 32;
  Index hidden = 0;  // 0 selects 4 * channels
  Index layers = 2;
  Index heads = 1;
  double logit_gain = 1.0;
  std::uint64_t seed = 0;
  std::vector<Strategy> strategies{Strategy::kConfidence};
  std::vector<bool> bias{true};
  Index repetitions = 5;
  /// Each timed repetition loops the pipeline until at least this long.
  double min_sample_seconds = 0.01;
  bool measure_time = true;
  Workload workload = Workload::kSmooth;
  ConfidenceMode confidence = ConfidenceMode::kPredictor;
  Index predictor_steps = 300;
  Index predictor_latent = 16;
  double predictor_lr = 0.05;
  Index workers = 1;
  /// Optional block weight archive with sections layer<i>/{wq,wk,wv,wo,w1,w2}.
  std::string weights;
  /// Directory for per-point activation archives; empty disables dumping.
  std::string dump_activations;

  Index hidden_dim() const { return hidden > 0 ? hidden : 4 * channels; }
  /// Throws std::invalid_argument on an invalid configuration.
  void validate() const;

  static SweepConfig from_config(const KeyValueConfig& kv);
};

/// Replaces config.seed with $COME_SEED when that variable is set.
void apply_seed_override(SweepConfig& config);

struct TimingStats {
  double median = 0.0;  // seconds per pipeline run
  double iqr = 0.0;
  Index samples = 0;
};

struct BenchRecord {
  Strategy strategy = Strategy::kConfidence;
  bool bias = true;
  double ratio = 0.0;
  Index group = 0;
  Index frames = 0;
  Index tokens = 0;
  Index merged_tokens = 0;
  double flops_oracle = 0.0;
  double flops_merged = 0.0;
  TimingStats oracle_time;
  TimingStats merged_time;
  double speedup = 0.0;
  /// Mean |merged - oracle| over image tokens the confidence mask keeps.
  double error_l1 = 0.0;
  Index retained_tokens = 0;
  double predictor_seconds = 0.0;
  std::string failure;

  bool ok() const { return failure.empty(); }
  double flop_ratio() const { return flops_oracle / flops_merged; }
};

/// Runs every grid point; a point that throws yields a record with `failure` set.
std::vector<BenchRecord> run_sweep(const SweepConfig& config);

/// Median and interquartile range of repeated timings, after one discarded warmup.
template <typename F>
TimingStats time_repeated(F&& f, Index repetitions, double min_sample_seconds);

struct TradeoffRow {
  Strategy strategy = Strategy::kConfidence;
  bool bias = true;
  double ratio = 0.0;
  double speedup = 0.0;
  double flop_ratio = 0.0;
  double delta_l1 = 0.0;
};

/// Strategy x ratio grid for a single (frames, group) point of `config`.
std::vector<TradeoffRow> tradeoff_table(const SweepConfig& config);

struct BreakdownConfig {
  Index tokens = 4096;
  Index frames = 1;
  Index special = 0;
  double ratio = 0.5;
  Index group = 4;
  Index channels = 16;
  Index hidden = 0;
  Index layers = 1;
  std::uint64_t seed = 0;
  Index repetitions = 1;
  bool warmup = false;
  bool bias = true;
};

struct RuntimeBreakdown {
  Index tokens = 0;
  Index merged_tokens = 0;
  double total_seconds = 0.0;
  double attention = 0.0;
  double mlp = 0.0;
  double merge_split = 0.0;
  double mask_generation = 0.0;

  double share(double part) const { return part / total_seconds; }
  double overhead_share() const { return share(merge_split + mask_generation); }
  /// Sum of all component shares; 1 when the components cover the wall time.
  double accounted_share() const { return share(attention + mlp + merge_split + mask_generation); }
};

/// Wall-time decomposition of the merged pipeline.
RuntimeBreakdown runtime_breakdown(const BreakdownConfig& config,
                                   TensorArchive* activations = nullptr);

/// Layout with `tokens` total tokens split over frames, on a near-square patch grid.
LayoutDescriptor breakdown_layout(const BreakdownConfig& config);

void write_sweep_csv(std::ostream& out, const std::vector<BenchRecord>& records);
void write_sweep_json(std::ostream& out, const std::vector<BenchRecord>& records);
void write_tradeoff_csv(std::ostream& out, const std::vector<TradeoffRow>& rows);
void print_sweep_summary(std::ostream& out, const std::vector<BenchRecord>& records);
void print_breakdown(std::ostream& out, const RuntimeBreakdown& b);
std::string breakdown_json(const RuntimeBreakdown& b);

// ---------------------------------------------------------------------------

template <typename F>
TimingStats time_repeated(F&& f, Index repetitions, double min_sample_seconds) {
  using Clock = std::chrono::steady_clock;
  auto seconds = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  f();  // warmup
  auto t0 = Clock::now();
  f();
  const double once = std::max(seconds(t0, Clock::now()), 1e-9);
  const auto iters = std::max<Index>(1, static_cast<Index>(std::ceil(min_sample_seconds / once)));

  std::vector<double> samples;
  for (Index r = 0; r < repetitions; ++r) {
    t0 = Clock::now();
    for (Index i = 0; i < iters; ++i) f();
    samples.push_back(seconds(t0, Clock::now()) / static_cast<double>(iters));
  }
  std::sort(samples.begin(), samples.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
  };
  return {quantile(0.5), quantile(0.75) - quantile(0.25), static_cast<Index>(samples.size())};
}

}  // namespace come
