#include "come/train.hpp"

#include <ostream>

namespace come {

TeacherGenerator synthetic_teacher(const SceneConfig& scene, TeacherKind kind, double noise,
                                   Index batch, std::uint64_t seed) {
  return [=](std::uint64_t index) {
    Rng rng(counter_hash(seed, index));
    auto features = make_scene(scene, batch, rng);
    auto teacher = teacher_confidence(features, scene, kind, noise, rng);
    return DistillSample{std::move(features), std::move(teacher)};
  };
}

template <typename Scalar>
std::pair<Scalar, PredictorParams<Scalar>> distill_gradient(const DistillSample& sample,
                                                            const PredictorParams<Scalar>& params,
                                                            DistillLoss loss, std::size_t pairs,
                                                            Rng& rng) {
  const auto grid = patch_grid(sample.features.layout);
  const Index batch = sample.features.batch();
  auto grad = PredictorParams<Scalar>::zeros(params.channels(), params.latent());
  double total = 0.0;
  for (Index b = 0; b < batch; ++b) {
    PredictorCache<Scalar> cache;
    const Vector<Scalar> pred =
        predictor_forward(image_features<Scalar>(sample.features, b), grid, params, &cache);
    const Vector<float> teacher_row = sample.teacher.row(b).transpose();
    Vector<Scalar> upstream;
    if (loss == DistillLoss::kRanking) {
      const auto set = sample_pairs(std::span<const float>(teacher_row.data(), teacher_row.size()),
                                    pairs, rng);
      total += static_cast<double>(ranking_loss(pred, set));
      upstream = ranking_loss_grad(pred, set);
    } else {
      auto lg = mse_loss(pred, Vector<Scalar>(teacher_row.template cast<Scalar>()));
      total += static_cast<double>(lg.loss);
      upstream = std::move(lg.grad);
    }
    upstream /= static_cast<Scalar>(batch);
    grad.accumulate(predictor_backward(cache, grid, params, upstream));
  }
  return {static_cast<Scalar>(total / static_cast<double>(batch)), std::move(grad)};
}

template std::pair<float, PredictorParams<float>> distill_gradient(const DistillSample&,
                                                                   const PredictorParams<float>&,
                                                                   DistillLoss, std::size_t, Rng&);
template std::pair<double, PredictorParams<double>> distill_gradient(
    const DistillSample&, const PredictorParams<double>&, DistillLoss, std::size_t, Rng&);

double holdout_iou(const PredictorParams<float>& params, const TeacherGenerator& teacher,
                   Index samples, double ratio) {
  GroupFlags predicted;
  GroupFlags reference;
  for (Index s = 0; s < samples; ++s) {
    const auto sample = teacher(kHoldoutBase + static_cast<std::uint64_t>(s));
    const auto& layout = sample.features.layout;
    const auto pred_conf = predictor_confidence(sample.features, params);
    const auto teacher_conf =
        confidence_from_patches(sample.teacher, layout, ConfidenceSource::kTeacher);
    auto a = select_lowest(group_confidence(pred_conf, layout), ratio);
    auto b = select_lowest(group_confidence(teacher_conf, layout), ratio);
    predicted.insert(predicted.end(), a.begin(), a.end());
    reference.insert(reference.end(), b.begin(), b.end());
  }
  return mask_iou(predicted, reference);
}

TrainResult train(const TeacherGenerator& teacher, Index channels, const TrainConfig& config) {
  if (config.steps < 0 || config.latent < 1) throw std::invalid_argument("invalid training config");
  Rng init(config.seed);
  TrainResult result{PredictorParams<float>::random(channels, config.latent, init, config.init_gain),
                     {}};
  Rng pair_rng = init.split(1);
  const auto lr = static_cast<float>(config.lr);

  auto evaluate = [&](Index step) -> std::optional<double> {
    if (config.eval_every <= 0) return std::nullopt;
    if (step % config.eval_every != 0 && step != config.steps - 1) return std::nullopt;
    return holdout_iou(result.params, teacher, config.holdout_samples, config.eval_ratio);
  };

  for (Index step = 0; step < config.steps; ++step) {
    const auto sample = teacher(static_cast<std::uint64_t>(step));
    auto [loss, grad] = distill_gradient(sample, result.params, config.loss,
                                         config.pairs_per_step, pair_rng);
    if (!std::isfinite(loss) || !grad.all_finite()) {
      throw TrainingError("training diverged at step " + std::to_string(step), step);
    }
    result.trace.push_back({step, static_cast<double>(loss), evaluate(step)});
    result.params.descend(grad, lr);
  }
  return result;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "step,loss,holdout_iou\n";
  for (const auto& row : trace) {
    out << row.step << ',' << row.loss << ',';
    if (row.holdout_iou) out << *row.holdout_iou;
    out << '\n';
  }
}

}  // namespace come
