#include "come/synthetic.hpp"
#include "come/train.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace come;

namespace {

SceneConfig small_scene() {
  SceneConfig s;
  s.frames = 2;
  s.grid_h = 6;
  s.grid_w = 6;
  s.group = 4;
  s.channels = 8;
  return s;
}

TrainConfig short_run(double lr) {
  TrainConfig c;
  c.steps = 15;
  c.lr = lr;
  c.latent = 6;
  c.pairs_per_step = 256;
  c.eval_every = 5;
  c.holdout_samples = 2;
  return c;
}

}  // namespace

TEST(Synthetic, SceneIsDeterministic) {
  const auto cfg = small_scene();
  Rng a(3), b(3);
  EXPECT_EQ(make_scene(cfg, 2, a).tokens, make_scene(cfg, 2, b).tokens);
  Rng c(4);
  const auto s = make_scene(cfg, 2, c);
  EXPECT_EQ(s.layout, cfg.layout());
  EXPECT_TRUE(s.tokens.all_finite());
  const auto t = teacher_confidence(s, cfg, TeacherKind::kSmooth, 0.1, c);
  EXPECT_EQ(t.rows(), 2);
  EXPECT_EQ(t.cols(), cfg.layout().image_tokens());
}

TEST(Synthetic, HighFrequencyDecorrelatesNeighbours) {
  auto cfg = small_scene();
  cfg.grid_h = cfg.grid_w = 16;
  cfg.blobs = 0;
  auto mean_similarity = [&](Workload w) {
    cfg.workload = w;
    Rng rng(5);
    const auto s = make_scene(cfg, 1, rng);
    return group_similarity(s).cast<double>().mean();
  };
  EXPECT_GT(mean_similarity(Workload::kSmooth), mean_similarity(Workload::kHighFrequency) + 0.2);
}

TEST(Train, DistillGradientMatchesFiniteDifferences) {
  auto cfg = small_scene();
  cfg.frames = 1;
  cfg.grid_h = cfg.grid_w = 3;
  cfg.group = 1;
  const auto teacher = synthetic_teacher(cfg, TeacherKind::kSmooth, 0.1, 2, 1);
  const auto sample = teacher(0);
  Rng init(2);
  auto p = PredictorParams<double>::random(cfg.channels, 3, init);
  for (auto loss : {DistillLoss::kRanking, DistillLoss::kMse}) {
    Rng r0(9);
    const auto [value, grad] = distill_gradient(sample, p, loss, 1 << 20, r0);
    const double eps = 1e-6;
    double err = 0, norm = 0;
    std::vector<RowMatrixd> analytic;
    grad.for_each_block([&](std::string_view, const RowMatrixd& g) { analytic.push_back(g); });
    std::size_t b = 0;
    p.for_each_block([&](std::string_view, RowMatrixd& block) {
      for (Index i = 0; i < block.size(); ++i) {
        const double keep = block.data()[i];
        block.data()[i] = keep + eps;
        Rng r1(9);
        const double up = distill_gradient(sample, p, loss, 1 << 20, r1).first;
        block.data()[i] = keep - eps;
        Rng r2(9);
        const double down = distill_gradient(sample, p, loss, 1 << 20, r2).first;
        block.data()[i] = keep;
        const double fd = (up - down) / (2 * eps);
        err += std::pow(fd - analytic[b].data()[i], 2);
        norm += fd * fd;
      }
      ++b;
    });
    EXPECT_GT(value, 0.0);
    EXPECT_LT(std::sqrt(err / norm), 1e-3);
  }
}

TEST(Train, SameSeedSameTrace) {
  const auto teacher = synthetic_teacher(small_scene(), TeacherKind::kSmooth, 0.05, 1, 4);
  const auto a = train(teacher, 8, short_run(0.05));
  const auto b = train(teacher, 8, short_run(0.05));
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].loss, b.trace[i].loss);
  EXPECT_EQ(a.params.proj, b.params.proj);
}

TEST(Train, ZeroLearningRateKeepsLossConstantOnFixedSample) {
  // A generator that always returns the same sample; full pair sets make the loss exact.
  const auto base = synthetic_teacher(small_scene(), TeacherKind::kSmooth, 0.05, 1, 4);
  const auto fixed = base(0);
  TeacherGenerator same = [fixed](std::uint64_t) { return fixed; };
  auto cfg = short_run(0.0);
  cfg.pairs_per_step = 1 << 20;
  const auto r = train(same, 8, cfg);
  for (const auto& row : r.trace) EXPECT_EQ(row.loss, r.trace.front().loss);
}

TEST(Train, LossFallsOnLinearTeacher) {
  const auto teacher = synthetic_teacher(small_scene(), TeacherKind::kLinear, 0.0, 1, 4);
  auto cfg = short_run(0.05);
  cfg.steps = 200;
  const auto r = train(teacher, 8, cfg);
  double head = 0, tail = 0;
  for (int i = 0; i < 20; ++i) {
    head += r.trace[static_cast<std::size_t>(i)].loss;
    tail += r.trace[r.trace.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(tail, 0.5 * head);
}

TEST(Train, NonFiniteLossRaises) {
  const auto base = synthetic_teacher(small_scene(), TeacherKind::kSmooth, 0.05, 1, 4);
  TeacherGenerator poisoned = [base](std::uint64_t i) {
    auto s = base(i);
    s.features.tokens.storage()[s.features.layout.image_token(0, 0) * 8] =
        std::numeric_limits<float>::quiet_NaN();
    return s;
  };
  try {
    train(poisoned, 8, short_run(0.05));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.step(), 0);
  }
}

TEST(Train, TraceCsvFormat) {
  std::vector<TraceRow> rows{{0, 0.5, 0.75}, {1, 0.25, std::nullopt}};
  std::ostringstream out;
  write_trace_csv(out, rows);
  EXPECT_EQ(out.str(), "step,loss,holdout_iou\n0,0.5,0.75\n1,0.25,\n");
}
