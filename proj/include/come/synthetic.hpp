// Seeded synthetic workloads.
//
// Image tokens are a low-frequency mixture of plane waves with random channel
// directions, plus a few Gaussian "salient" blobs pushed along one fixed
// feature direction. The teacher confidence is a smooth function of the
// features that mostly tracks that direction, so low-confidence regions are
// the smooth, redundant background.
#pragma once

#include "come/layout.hpp"
#include "come/rng.hpp"

namespace come {

enum class Workload {
  kSmooth,         // low-frequency fields
  kHighFrequency,  // near-Nyquist fields; neighbouring tokens decorrelate
};

const char* to_string(Workload w);
Workload parse_workload(const std::string& name);

struct SceneConfig {
  Index frames = 1;
  Index special = 0;
  Index grid_h = 16;
  Index grid_w = 16;
  Index group = 4;
  Index channels = 16;
  Index waves = 6;
  /// Largest wave frequency for kSmooth, in cycles across the grid.
  double max_frequency = 1.0;
  Index blobs = 3;
  double salience_gain = 2.0;
  Workload workload = Workload::kSmooth;
  /// Fixes the salient direction and the teacher weights shared by all samples.
  std::uint64_t world_seed = 7;

  LayoutDescriptor layout() const;
};

/// `batch` samples drawn from `rng`.
TokenSequence make_scene(const SceneConfig& config, Index batch, Rng& rng);

enum class TeacherKind {
  kSmooth,  // tanh of the salient projection plus a weak linear term and noise
  kLinear,  // exactly linear in the features, noiseless
};

/// Teacher confidence for every image patch: (batch, image_tokens).
RowMatrixf teacher_confidence(const TokenSequence& scene, const SceneConfig& config,
                              TeacherKind kind, double noise, Rng& rng);

struct DistillSample {
  TokenSequence features;
  RowMatrixf teacher;  // (batch, image_tokens)
};

}  // namespace come
