// bench: sweep, trade-off and runtime-breakdown driver, plus predictor
// training and Chamfer evaluation utilities.
#include "come/bench.hpp"
#include "come/metrics.hpp"
#include "come/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace come;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

int sweep(const std::string& config_path, const std::string& out_dir, bool dump) {
  auto config = config_path.empty() ? SweepConfig{}
                                    : SweepConfig::from_config(KeyValueConfig::load(config_path));
  apply_seed_override(config);
  if (dump) config.dump_activations = (fs::path(out_dir) / "activations").string();
  const auto records = run_sweep(config);
  auto csv = open_out(fs::path(out_dir) / "sweep.csv");
  write_sweep_csv(csv, records);
  auto json = open_out(fs::path(out_dir) / "sweep.json");
  write_sweep_json(json, records);
  print_sweep_summary(std::cout, records);
  const auto failed = std::count_if(records.begin(), records.end(),
                                    [](const BenchRecord& r) { return !r.ok(); });
  if (failed > 0) std::cerr << failed << " of " << records.size() << " points failed\n";
  return failed > 0 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-guided token merging benchmark"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "bench_out";
  bool dump = false;
  auto* sw = app.add_subcommand("sweep", "Run the configured parameter sweep");
  sw->add_option("--config", config_path, "key = value sweep configuration");
  sw->add_option("--out", out_dir, "Output directory for sweep.csv and sweep.json");
  sw->add_flag("--dump-activations", dump, "Write pre/post-merge activations per point");

  std::vector<std::string> strategies{"confidence", "similarity", "pick-one", "drop-all"};
  std::vector<double> ratios{0.25, 0.5, 0.75};
  std::vector<std::string> bias_modes{"on"};
  Index t_frames = 4, t_group = 4, t_reps = 5;
  std::uint64_t t_seed = 0;
  std::string t_out, t_confidence = "teacher";
  auto* to = app.add_subcommand("tradeoff", "Speedup versus accuracy per strategy and ratio");
  to->add_option("--strategies", strategies)->delimiter(',');
  to->add_option("--ratios", ratios)->delimiter(',');
  to->add_option("--bias", bias_modes, "on, off, or on,off")->delimiter(',');
  to->add_option("--frames", t_frames);
  to->add_option("--group", t_group);
  to->add_option("--repetitions", t_reps);
  to->add_option("--seed", t_seed);
  to->add_option("--confidence", t_confidence)->check(CLI::IsMember({"teacher", "predictor"}));
  to->add_option("--out", t_out, "CSV path (stdout when omitted)");

  BreakdownConfig bd;
  std::string bd_dump;
  bool bd_json = false;
  auto* br = app.add_subcommand("breakdown", "Wall-time shares of the merged pipeline");
  br->add_option("--tokens", bd.tokens)->required();
  br->add_option("--ratio", bd.ratio)->required();
  br->add_option("--group", bd.group)->required();
  br->add_option("--frames", bd.frames);
  br->add_option("--special", bd.special);
  br->add_option("--channels", bd.channels);
  br->add_option("--layers", bd.layers);
  br->add_option("--repetitions", bd.repetitions);
  br->add_option("--seed", bd.seed);
  br->add_flag("--warmup", bd.warmup);
  br->add_flag("--json", bd_json);
  br->add_option("--dump-activations", bd_dump, "Archive path for recorded activations");

  TrainConfig tc;
  SceneConfig scene;
  std::string tr_out = "train_out", tr_loss = "ranking", tr_teacher = "smooth";
  double tr_noise = 0.05;
  auto* tr = app.add_subcommand("train", "Distil the confidence predictor from the synthetic teacher");
  tr->add_option("--steps", tc.steps);
  tr->add_option("--lr", tc.lr);
  tr->add_option("--latent", tc.latent);
  tr->add_option("--pairs", tc.pairs_per_step);
  tr->add_option("--seed", tc.seed);
  tr->add_option("--eval-every", tc.eval_every);
  tr->add_option("--loss", tr_loss)->check(CLI::IsMember({"ranking", "mse"}));
  tr->add_option("--teacher", tr_teacher)->check(CLI::IsMember({"smooth", "linear"}));
  tr->add_option("--noise", tr_noise, "Teacher noise level (smooth teacher only)");
  tr->add_option("--gain", tc.init_gain, "Initial weight scale");
  tr->add_option("--frames", scene.frames);
  tr->add_option("--grid-h", scene.grid_h);
  tr->add_option("--grid-w", scene.grid_w);
  tr->add_option("--channels", scene.channels);
  tr->add_option("--out", tr_out, "Directory for trace.csv and predictor.come");

  std::string ch_pred, ch_gt;
  bool ch_align = false;
  auto* ch = app.add_subcommand("chamfer", "Completeness and accuracy between two xyz clouds");
  ch->add_option("--pred", ch_pred)->required()->check(CLI::ExistingFile);
  ch->add_option("--gt", ch_gt)->required()->check(CLI::ExistingFile);
  ch->add_flag("--align", ch_align, "Sim(3)-align pred onto gt by index correspondence first");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sw) return sweep(config_path, out_dir, dump);

    if (*to) {
      SweepConfig c;
      c.frames = {t_frames};
      c.group_sizes = {t_group};
      c.ratios = ratios;
      c.repetitions = t_reps;
      c.seed = t_seed;
      c.confidence = t_confidence == "teacher" ? ConfidenceMode::kTeacher : ConfidenceMode::kPredictor;
      c.strategies.clear();
      for (const auto& s : strategies) c.strategies.push_back(parse_strategy(s));
      c.bias.clear();
      for (const auto& b : bias_modes) c.bias.push_back(parse_bool(b));
      apply_seed_override(c);
      const auto rows = tradeoff_table(c);
      if (t_out.empty()) {
        write_tradeoff_csv(std::cout, rows);
      } else {
        auto out = open_out(t_out);
        write_tradeoff_csv(out, rows);
      }
      return 0;
    }

    if (*br) {
      TensorArchive acts;
      const auto b = runtime_breakdown(bd, bd_dump.empty() ? nullptr : &acts);
      if (!bd_dump.empty()) save_archive(bd_dump, acts);
      if (bd_json) std::cout << breakdown_json(b) << '\n';
      else print_breakdown(std::cout, b);
      return 0;
    }

    if (*tr) {
      tc.loss = tr_loss == "mse" ? DistillLoss::kMse : DistillLoss::kRanking;
      const auto kind = tr_teacher == "linear" ? TeacherKind::kLinear : TeacherKind::kSmooth;
      const auto teacher = synthetic_teacher(scene, kind, tr_noise, 1, tc.seed);
      const auto result = train(teacher, scene.channels, tc);
      auto trace = open_out(fs::path(tr_out) / "trace.csv");
      write_trace_csv(trace, result.trace);
      save_archive((fs::path(tr_out) / "predictor.come").string(), result.params.to_archive());
      std::cout << "loss " << result.trace.front().loss << " -> " << result.trace.back().loss;
      if (result.trace.back().holdout_iou) std::cout << ", held-out IoU " << *result.trace.back().holdout_iou;
      std::cout << '\n';
      return 0;
    }

    if (*ch) {
      std::ifstream pin(ch_pred), gin(ch_gt);
      auto pred = read_xyz(pin);
      const auto gt = read_xyz(gin);
      if (ch_align) pred = umeyama_sim3(pred, gt).apply(pred);
      const auto r = chamfer(pred, gt);
      std::cout << nlohmann::json{{"completeness", r.completeness}, {"accuracy", r.accuracy}}.dump(2)
                << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
