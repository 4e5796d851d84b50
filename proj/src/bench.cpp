#include "come/bench.hpp"

#include "come/train.hpp"

#include <json.hpp>

#include <array>
#include <atomic>
#include <cstdlib>
#include <map>
#include <optional>
#include <filesystem>
#include <future>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace come {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

Coalesce coalesce_of(Strategy s) {
  switch (s) {
    case Strategy::kPickOne: return Coalesce::kPickOne;
    case Strategy::kDropAll: return Coalesce::kDropAll;
    default: return Coalesce::kAverage;
  }
}

std::vector<BlockParams> make_layers(const SweepConfig& c) {
  std::vector<BlockParams> layers;
  if (!c.weights.empty()) {
    const auto archive = load_archive(c.weights);
    for (Index l = 0; l < c.layers; ++l) {
      layers.push_back(
          BlockParams::from_archive(archive, "layer" + std::to_string(l) + "/", c.heads));
      if (layers.back().channels() != c.channels) {
        throw DimensionError("weight archive channel count differs from the config");
      }
    }
    return layers;
  }
  Rng rng(counter_hash(c.seed, 0xB10C));
  for (Index l = 0; l < c.layers; ++l) {
    layers.push_back(BlockParams::random(c.channels, c.hidden_dim(), rng, c.logit_gain, c.heads));
  }
  return layers;
}

TokenSequence run_oracle(TokenSequence x, const std::vector<BlockParams>& layers) {
  for (const auto& p : layers) x = oracle_block(x, p);
  return x;
}

TokenSequence run_merged(TokenSequence x, const MergeMask& mask,
                         const std::vector<BlockParams>& layers, const BlockOptions& options) {
  for (const auto& p : layers) x = merged_block(x, mask, p, options);
  return x;
}

/// Everything a sweep point needs that depends only on the frame count.
struct FrameData {
  SceneConfig scene;
  TokenSequence input;       // layout with group size 1; re-laid per point
  RowMatrixf patch_scores;   // (batch, image_tokens)
  double predictor_seconds = 0.0;
  TokenSequence oracle_out;
  TimingStats oracle_time;
};

class Sweep {
 public:
  explicit Sweep(const SweepConfig& c) : c_(c), layers_(make_layers(c)) {
    if (c_.confidence == ConfidenceMode::kPredictor) train_predictor();
    for (Index f : c_.frames) frames_.emplace(f, prepare(f));
  }

  std::vector<BenchRecord> run() {
    struct Point {
      Index frames, group;
      double ratio;
      Strategy strategy;
      bool bias;
    };
    std::vector<Point> points;
    for (Index f : c_.frames)
      for (Index n : c_.group_sizes)
        for (Strategy s : c_.strategies)
          for (bool b : c_.bias)
            for (double p : c_.ratios) points.push_back({f, n, p, s, b});

    std::vector<BenchRecord> records(points.size());
    auto run_one = [&](std::size_t i) {
      const auto& pt = points[i];
      auto& r = records[i];
      r.frames = pt.frames;
      r.group = pt.group;
      r.ratio = pt.ratio;
      r.strategy = pt.strategy;
      r.bias = pt.bias;
      try {
        measure(r);
      } catch (const std::exception& e) {
        r.failure = e.what();
      }
    };
    if (c_.workers <= 1) {
      for (std::size_t i = 0; i < points.size(); ++i) run_one(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::future<void>> pool;
      for (Index w = 0; w < c_.workers; ++w) {
        pool.push_back(std::async(std::launch::async, [&] {
          for (std::size_t i = next++; i < points.size(); i = next++) run_one(i);
        }));
      }
      for (auto& f : pool) f.get();
    }
    return records;
  }

 private:
  SceneConfig scene_config(Index frames, Index group) const {
    SceneConfig s;
    s.frames = frames;
    s.special = c_.special;
    s.grid_h = c_.grid_h;
    s.grid_w = c_.grid_w;
    s.group = group;
    s.channels = c_.channels;
    s.workload = c_.workload;
    s.world_seed = counter_hash(c_.seed, 0x5CE7E);
    return s;
  }

  void train_predictor() {
    TrainConfig t;
    t.steps = c_.predictor_steps;
    t.lr = c_.predictor_lr;
    t.latent = c_.predictor_latent;
    t.seed = c_.seed;
    t.eval_every = 0;
    t.pairs_per_step = 2048;
    const auto teacher = synthetic_teacher(scene_config(1, 1), TeacherKind::kSmooth, 0.05, 1,
                                           counter_hash(c_.seed, 0x7EAC));
    predictor_ = train(teacher, c_.channels, t).params;
  }

  FrameData prepare(Index frames) const {
    FrameData d;
    d.scene = scene_config(frames, 1);
    Rng rng(counter_hash(c_.seed, static_cast<std::uint64_t>(frames)));
    d.input = make_scene(d.scene, 1, rng);
    if (predictor_) {
      const auto t0 = Clock::now();
      d.patch_scores = predict_patches(d.input, *predictor_);
      d.predictor_seconds = elapsed(t0);
    } else {
      d.patch_scores = teacher_confidence(d.input, d.scene, TeacherKind::kSmooth, 0.05, rng);
    }
    d.oracle_out = run_oracle(d.input, layers_);
    if (c_.measure_time) {
      d.oracle_time = time_repeated([&] { (void)run_oracle(d.input, layers_); }, c_.repetitions,
                                    c_.min_sample_seconds);
    }
    return d;
  }

  void measure(BenchRecord& r) const {
    const auto& d = frames_.at(r.frames);
    const auto layout =
        LayoutDescriptor::grid(r.frames, c_.special, c_.grid_h, c_.grid_w, r.group);
    const TokenSequence x(layout, d.input.tokens);
    const auto source = predictor_ ? ConfidenceSource::kPredictor : ConfidenceSource::kTeacher;

    BlockOptions options;
    options.bias_correction = r.bias;
    options.merge.coalesce = coalesce_of(r.strategy);
    options.merge.seed = c_.seed;
    const auto policy = slot_policy(options.merge.coalesce);

    auto make_mask = [&] {
      if (r.strategy == Strategy::kSimilarity) return similarity_mask(x, r.ratio, policy);
      const auto conf = confidence_from_patches(d.patch_scores, layout, source);
      return build_mask(group_confidence(conf, layout), r.ratio, layout, policy);
    };

    const auto mask = make_mask();
    TensorArchive dump;
    if (!c_.dump_activations.empty()) options.activations = &dump;
    const auto out = run_merged(x, mask, layers_, options);
    options.activations = nullptr;
    if (!out.tokens.all_finite()) throw DomainError("merged pipeline produced non-finite output");
    if (!dump.empty()) {
      std::filesystem::create_directories(c_.dump_activations);
      std::ostringstream name;
      name << c_.dump_activations << "/act_" << to_string(r.strategy) << "_f" << r.frames << "_n"
           << r.group << "_p" << r.ratio << (r.bias ? "_bias" : "_nobias") << ".come";
      save_archive(name.str(), dump);
    }

    // The retained region is fixed by the confidence mask so every strategy
    // is scored on the same tokens.
    const auto conf = confidence_from_patches(d.patch_scores, layout, source);
    const auto region = build_mask(group_confidence(conf, layout), r.ratio, layout);
    double err = 0.0;
    Index kept = 0;
    const auto& flags = region.flags[0];
    for (Index g = 0; g < layout.group_count(); ++g) {
      if (flags[static_cast<std::size_t>(g)]) continue;
      const auto range = layout.group_index(g);
      for (Index t = range.begin; t < range.end; ++t) {
        err += (out.sample(0).row(t) - d.oracle_out.sample(0).row(t)).cwiseAbs().cast<double>().sum();
        ++kept;
      }
    }
    r.tokens = layout.total_tokens();
    r.merged_tokens = mask.merged_length;
    r.retained_tokens = kept;
    r.error_l1 = kept > 0 ? err / static_cast<double>(kept * c_.channels) : 0.0;

    for (const auto& p : layers_) {
      r.flops_oracle += flop_count(layout, nullptr, p).total();
      r.flops_merged += flop_count(layout, &mask, p).total();
    }
    r.predictor_seconds = d.predictor_seconds;
    if (c_.measure_time) {
      r.oracle_time = d.oracle_time;
      r.merged_time = time_repeated(
          [&] {
            const auto m = make_mask();
            (void)run_merged(x, m, layers_, options);
          },
          c_.repetitions, c_.min_sample_seconds);
      r.speedup = r.oracle_time.median / r.merged_time.median;
    }
  }

  const SweepConfig& c_;
  std::vector<BlockParams> layers_;
  std::optional<PredictorParams<float>> predictor_;
  std::map<Index, FrameData> frames_;
};

Index isqrt_floor(Index n) {
  auto r = static_cast<Index>(std::sqrt(static_cast<double>(n)));
  while (r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  return r;
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kConfidence: return "confidence";
    case Strategy::kSimilarity: return "similarity";
    case Strategy::kPickOne: return "pick-one";
    case Strategy::kDropAll: return "drop-all";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "confidence" || name == "average") return Strategy::kConfidence;
  if (name == "similarity") return Strategy::kSimilarity;
  if (name == "pick-one" || name == "pick_one") return Strategy::kPickOne;
  if (name == "drop-all" || name == "drop_all") return Strategy::kDropAll;
  throw std::invalid_argument("unknown strategy: " + name);
}

void SweepConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (ratios.empty() || group_sizes.empty() || frames.empty() || strategies.empty() || bias.empty()) {
    fail("every sweep axis needs at least one value");
  }
  for (double p : ratios)
    if (!(p >= 0.0 && p < 1.0)) fail("merge ratio must lie in [0, 1)");
  for (Index n : group_sizes)
    if (n < 1) fail("group size must be positive");
  for (Index f : frames)
    if (f < 1) fail("frame count must be positive");
  if (special < 0 || grid_h < 1 || grid_w < 1) fail("invalid token grid");
  if (channels < 1 || layers < 1 || heads < 1 || channels % heads != 0) {
    fail("channels, layers and heads must be positive with heads dividing channels");
  }
  if (repetitions < 3) fail("repetitions must be at least 3");
  if (workers < 1) fail("workers must be positive");
}

SweepConfig SweepConfig::from_config(const KeyValueConfig& kv) {
  SweepConfig c;
  auto to_index = [](const std::vector<long>& v) { return std::vector<Index>(v.begin(), v.end()); };
  c.ratios = kv.get_doubles("ratios", c.ratios);
  c.group_sizes = to_index(kv.get_ints("groups", {c.group_sizes.begin(), c.group_sizes.end()}));
  c.frames = to_index(kv.get_ints("frames", {c.frames.begin(), c.frames.end()}));
  c.special = kv.get_int("special", c.special);
  c.grid_h = kv.get_int("grid_h", c.grid_h);
  c.grid_w = kv.get_int("grid_w", c.grid_w);
  c.channels = kv.get_int("channels", c.channels);
  c.hidden = kv.get_int("hidden", c.hidden);
  c.layers = kv.get_int("layers", c.layers);
  c.heads = kv.get_int("heads", c.heads);
  c.logit_gain = kv.get_double("logit_gain", c.logit_gain);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(c.seed)));
  if (kv.has("strategies")) {
    c.strategies.clear();
    for (const auto& s : kv.values("strategies")) c.strategies.push_back(parse_strategy(s));
  }
  if (kv.has("bias")) {
    c.bias.clear();
    for (const auto& s : kv.values("bias")) c.bias.push_back(parse_bool(s));
  }
  c.repetitions = kv.get_int("repetitions", c.repetitions);
  c.min_sample_seconds = kv.get_double("min_sample_seconds", c.min_sample_seconds);
  c.measure_time = kv.get_bool("measure_time", c.measure_time);
  if (kv.has("workload")) c.workload = parse_workload(kv.get_string("workload", ""));
  if (kv.has("confidence")) {
    const auto m = kv.get_string("confidence", "");
    if (m == "teacher") c.confidence = ConfidenceMode::kTeacher;
    else if (m == "predictor") c.confidence = ConfidenceMode::kPredictor;
    else throw std::invalid_argument("confidence must be teacher or predictor");
  }
  c.predictor_steps = kv.get_int("predictor_steps", c.predictor_steps);
  c.predictor_latent = kv.get_int("predictor_latent", c.predictor_latent);
  c.predictor_lr = kv.get_double("predictor_lr", c.predictor_lr);
  c.workers = kv.get_int("workers", c.workers);
  c.weights = kv.get_string("weights", c.weights);
  for (const auto& key : kv.keys()) {
    static const char* known[] = {"ratios", "groups", "frames", "special", "grid_h", "grid_w",
                                  "channels", "hidden", "layers", "heads", "logit_gain", "seed",
                                  "strategies", "bias", "repetitions", "min_sample_seconds",
                                  "measure_time", "workload", "confidence", "predictor_steps",
                                  "predictor_latent", "predictor_lr", "workers", "weights"};
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw std::invalid_argument("unknown config key: " + key);
    }
  }
  return c;
}

void apply_seed_override(SweepConfig& config) {
  if (const char* s = std::getenv("COME_SEED"); s != nullptr && *s != '\0') {
    config.seed = std::stoull(s);
  }
}

std::vector<BenchRecord> run_sweep(const SweepConfig& config) {
  config.validate();
  Sweep sweep(config);
  return sweep.run();
}

std::vector<TradeoffRow> tradeoff_table(const SweepConfig& config) {
  if (config.frames.size() != 1 || config.group_sizes.size() != 1) {
    throw std::invalid_argument("tradeoff table takes a single frame count and group size");
  }
  std::vector<TradeoffRow> rows;
  for (const auto& r : run_sweep(config)) {
    if (!r.ok()) throw std::runtime_error("tradeoff point failed: " + r.failure);
    rows.push_back({r.strategy, r.bias, r.ratio, r.speedup, r.flop_ratio(), r.error_l1});
  }
  return rows;
}

LayoutDescriptor breakdown_layout(const BreakdownConfig& c) {
  if (c.tokens < 1 || c.frames < 1 || c.tokens % c.frames != 0) {
    throw std::invalid_argument("token count must be a positive multiple of the frame count");
  }
  const Index patches = c.tokens / c.frames - c.special;
  if (patches < 1) throw std::invalid_argument("no image patches left after special tokens");
  // Near-square grid h x w = patches.
  Index h = isqrt_floor(patches);
  while (patches % h != 0) --h;
  return LayoutDescriptor::grid(c.frames, c.special, h, patches / h, c.group);
}

RuntimeBreakdown runtime_breakdown(const BreakdownConfig& c, TensorArchive* activations) {
  const auto layout = breakdown_layout(c);
  SceneConfig scene;
  scene.frames = c.frames;
  scene.special = c.special;
  scene.grid_h = layout.grid_h();
  scene.grid_w = layout.grid_w();
  scene.group = c.group;
  scene.channels = c.channels;
  scene.world_seed = counter_hash(c.seed, 0x5CE7E);
  Rng rng(counter_hash(c.seed, static_cast<std::uint64_t>(c.tokens)));
  const auto x = make_scene(scene, 1, rng);
  const auto scores = teacher_confidence(x, scene, TeacherKind::kSmooth, 0.05, rng);

  Rng wrng(counter_hash(c.seed, 0xB10C));
  std::vector<BlockParams> layers;
  const Index hidden = c.hidden > 0 ? c.hidden : 4 * c.channels;
  for (Index l = 0; l < c.layers; ++l) layers.push_back(BlockParams::random(c.channels, hidden, wrng));

  RuntimeBreakdown b;
  b.tokens = layout.total_tokens();
  auto once = [&](bool record) {
    BlockTimings timings;
    BlockOptions options;
    options.bias_correction = c.bias;
    options.timings = &timings;
    if (record) options.activations = activations;
    const auto t0 = Clock::now();
    const auto conf = confidence_from_patches(scores, layout, ConfidenceSource::kTeacher);
    const auto mask = build_mask(group_confidence(conf, layout), c.ratio, layout);
    const double mask_time = elapsed(t0);
    TokenSequence h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      options.activation_prefix = "layer" + std::to_string(l) + "/";
      h = merged_block(h, mask, layers[l], options);
    }
    const double total = elapsed(t0);
    b.merged_tokens = mask.merged_length;
    return std::array<double, 5>{total, timings.attention, timings.mlp, timings.merge_split,
                                 mask_time};
  };
  if (c.warmup) (void)once(false);
  for (Index r = 0; r < std::max<Index>(1, c.repetitions); ++r) {
    const auto t = once(r == 0 && activations != nullptr);
    b.total_seconds += t[0];
    b.attention += t[1];
    b.mlp += t[2];
    b.merge_split += t[3];
    b.mask_generation += t[4];
  }
  return b;
}

namespace {

nlohmann::json to_json(const BenchRecord& r) {
  nlohmann::json j{{"strategy", to_string(r.strategy)},
                   {"bias", r.bias},
                   {"ratio", r.ratio},
                   {"group", r.group},
                   {"frames", r.frames},
                   {"tokens", r.tokens},
                   {"merged_tokens", r.merged_tokens},
                   {"flops_oracle", r.flops_oracle},
                   {"flops_merged", r.flops_merged},
                   {"oracle_ms", r.oracle_time.median * 1e3},
                   {"oracle_iqr_ms", r.oracle_time.iqr * 1e3},
                   {"merged_ms", r.merged_time.median * 1e3},
                   {"merged_iqr_ms", r.merged_time.iqr * 1e3},
                   {"speedup", r.speedup},
                   {"error_l1", r.error_l1},
                   {"retained_tokens", r.retained_tokens},
                   {"predictor_ms", r.predictor_seconds * 1e3}};
  if (!r.ok()) j["failure"] = r.failure;
  return j;
}

}  // namespace

void write_sweep_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << "strategy,bias,ratio,group,frames,tokens,merged_tokens,flops_oracle,flops_merged,"
         "oracle_ms,oracle_iqr_ms,merged_ms,merged_iqr_ms,speedup,error_l1,retained_tokens,"
         "predictor_ms,failure\n";
  out << std::setprecision(9);
  for (const auto& r : records) {
    out << to_string(r.strategy) << ',' << (r.bias ? 1 : 0) << ',' << r.ratio << ',' << r.group
        << ',' << r.frames << ',' << r.tokens << ',' << r.merged_tokens << ',' << r.flops_oracle
        << ',' << r.flops_merged << ',' << r.oracle_time.median * 1e3 << ','
        << r.oracle_time.iqr * 1e3 << ',' << r.merged_time.median * 1e3 << ','
        << r.merged_time.iqr * 1e3 << ',' << r.speedup << ',' << r.error_l1 << ','
        << r.retained_tokens << ',' << r.predictor_seconds * 1e3 << ',' << '"' << r.failure
        << '"' << '\n';
  }
}

void write_sweep_json(std::ostream& out, const std::vector<BenchRecord>& records) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : records) j.push_back(to_json(r));
  out << j.dump(2) << '\n';
}

void write_tradeoff_csv(std::ostream& out, const std::vector<TradeoffRow>& rows) {
  out << "strategy,bias,ratio,speedup,delta_l1,flop_ratio\n" << std::setprecision(9);
  for (const auto& r : rows) {
    out << to_string(r.strategy) << ',' << (r.bias ? 1 : 0) << ',' << r.ratio << ',' << r.speedup
        << ',' << r.delta_l1 << ',' << r.flop_ratio << '\n';
  }
}

void print_sweep_summary(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << std::left << std::setw(11) << "strategy" << std::setw(5) << "bias" << std::setw(7)
      << "ratio" << std::setw(6) << "group" << std::setw(7) << "frames" << std::setw(8)
      << "tokens" << std::setw(8) << "merged" << std::setw(10) << "flop_x" << std::setw(10)
      << "speedup" << "error_l1\n";
  out << std::fixed;
  for (const auto& r : records) {
    out << std::setw(11) << to_string(r.strategy) << std::setw(5) << (r.bias ? "on" : "off")
        << std::setw(7) << std::setprecision(2) << r.ratio << std::setw(6) << r.group
        << std::setw(7) << r.frames << std::setw(8) << r.tokens << std::setw(8)
        << r.merged_tokens;
    if (!r.ok()) {
      out << "FAILED: " << r.failure << '\n';
      continue;
    }
    out << std::setw(10) << std::setprecision(3) << r.flop_ratio() << std::setw(10)
        << r.speedup << std::setprecision(5) << r.error_l1 << '\n';
  }
  out << std::defaultfloat;
}

void print_breakdown(std::ostream& out, const RuntimeBreakdown& b) {
  out << "tokens " << b.tokens << " -> " << b.merged_tokens << ", wall " << std::fixed
      << std::setprecision(4) << b.total_seconds << " s\n";
  auto line = [&](const char* name, double part) {
    out << "  " << std::left << std::setw(16) << name << std::right << std::setw(8)
        << std::setprecision(2) << 100.0 * b.share(part) << " %\n";
  };
  line("attention", b.attention);
  line("mlp", b.mlp);
  line("merge_split", b.merge_split);
  line("mask_generation", b.mask_generation);
  out << "  " << std::left << std::setw(16) << "accounted" << std::right << std::setw(8)
      << 100.0 * b.accounted_share() << " %\n"
      << std::defaultfloat;
}

std::string breakdown_json(const RuntimeBreakdown& b) {
  nlohmann::json j{{"tokens", b.tokens},
                   {"merged_tokens", b.merged_tokens},
                   {"total_seconds", b.total_seconds},
                   {"attention_share", b.share(b.attention)},
                   {"mlp_share", b.share(b.mlp)},
                   {"merge_split_share", b.share(b.merge_split)},
                   {"mask_generation_share", b.share(b.mask_generation)},
                   {"overhead_share", b.overhead_share()},
                   {"accounted_share", b.accounted_share()}};
  return j.dump(2);
}

}  // namespace come
