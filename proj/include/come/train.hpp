// Self-supervised distillation of the confidence predictor from a teacher,
// by plain gradient descent on the ranking (or MSE) loss.
#pragma once

#include "come/predictor.hpp"
#include "come/ranking.hpp"
#include "come/synthetic.hpp"

#include <functional>
#include <iosfwd>
#include <optional>

namespace come {

enum class DistillLoss { kRanking, kMse };

/// Produces the training sample with the given index; must be deterministic.
using TeacherGenerator = std::function<DistillSample(std::uint64_t index)>;

/// Generator over make_scene / teacher_confidence, one scene per index.
TeacherGenerator synthetic_teacher(const SceneConfig& scene, TeacherKind kind, double noise,
                                   Index batch = 1, std::uint64_t seed = 0);

struct TrainConfig {
  Index steps = 2000;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  std::size_t pairs_per_step = 4096;
  Index latent = 32;
  double init_gain = 1.0;
  DistillLoss loss = DistillLoss::kRanking;
  /// Held-out IoU is evaluated every `eval_every` steps and after the last step (0 = never).
  Index eval_every = 100;
  double eval_ratio = 0.5;
  Index holdout_samples = 4;
};

struct TraceRow {
  Index step = 0;
  double loss = 0.0;
  std::optional<double> holdout_iou;
};

struct TrainResult {
  PredictorParams<float> params;
  std::vector<TraceRow> trace;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, Index step) : std::runtime_error(what), step_(step) {}
  Index step() const { return step_; }

 private:
  Index step_;
};

/// Index of the first held-out sample; training draws indices below it.
inline constexpr std::uint64_t kHoldoutBase = std::uint64_t{1} << 40;

/// Loss and parameter gradient on one sample (all batch rows), averaged over rows.
template <typename Scalar>
std::pair<Scalar, PredictorParams<Scalar>> distill_gradient(const DistillSample& sample,
                                                            const PredictorParams<Scalar>& params,
                                                            DistillLoss loss, std::size_t pairs,
                                                            Rng& rng);

/// Pooled IoU between bottom-`ratio` masks of predictor and teacher over held-out samples.
double holdout_iou(const PredictorParams<float>& params, const TeacherGenerator& teacher,
                   Index samples, double ratio);

TrainResult train(const TeacherGenerator& teacher, Index channels, const TrainConfig& config);

/// `step,loss,holdout_iou`; the IoU column is empty on steps without evaluation.
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace come
