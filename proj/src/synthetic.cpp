#include "come/synthetic.hpp"

#include <cmath>
#include <numbers>

namespace come {
namespace {

RowVector<double> unit_direction(Index channels, Rng& rng) {
  RowVector<double> d(channels);
  for (Index c = 0; c < channels; ++c) d(c) = rng.normal();
  return d / d.norm();
}

struct World {
  RowVector<double> salient;
  RowVector<double> linear;
};

World world(const SceneConfig& cfg) {
  Rng rng(cfg.world_seed);
  return {unit_direction(cfg.channels, rng), unit_direction(cfg.channels, rng)};
}

}  // namespace

const char* to_string(Workload w) {
  return w == Workload::kSmooth ? "smooth" : "high-frequency";
}

Workload parse_workload(const std::string& name) {
  if (name == "smooth") return Workload::kSmooth;
  if (name == "high-frequency" || name == "hf") return Workload::kHighFrequency;
  throw std::invalid_argument("unknown workload: " + name);
}

LayoutDescriptor SceneConfig::layout() const {
  return LayoutDescriptor::grid(frames, special, grid_h, grid_w, group);
}

TokenSequence make_scene(const SceneConfig& cfg, Index batch, Rng& rng) {
  const auto layout = cfg.layout();
  const auto w = world(cfg);
  const double two_pi = 2.0 * std::numbers::pi;
  const double max_f = cfg.workload == Workload::kSmooth
                           ? cfg.max_frequency
                           : 0.5 * static_cast<double>(std::min(cfg.grid_h, cfg.grid_w));
  TokenSequence seq(layout, batch, cfg.channels);

  for (Index b = 0; b < batch; ++b) {
    struct Wave {
      RowVector<double> dir;
      double fy, fx, phase, drift;
    };
    std::vector<Wave> waves;
    for (Index k = 0; k < cfg.waves; ++k) {
      RowVector<double> dir(cfg.channels);
      for (Index c = 0; c < cfg.channels; ++c) {
        dir(c) = rng.normal() / std::sqrt(static_cast<double>(cfg.waves));
      }
      waves.push_back({dir, rng.uniform(-max_f, max_f), rng.uniform(-max_f, max_f),
                       rng.uniform(0.0, two_pi), rng.uniform(-0.3, 0.3)});
    }
    struct Blob {
      double cy, cx, radius, vy, vx;
    };
    std::vector<Blob> blobs;
    const double extent = static_cast<double>(std::min(cfg.grid_h, cfg.grid_w));
    for (Index k = 0; k < cfg.blobs; ++k) {
      blobs.push_back({rng.uniform(0.0, static_cast<double>(cfg.grid_h)),
                       rng.uniform(0.0, static_cast<double>(cfg.grid_w)),
                       rng.uniform(0.1, 0.25) * extent, rng.normal(0.0, 0.5), rng.normal(0.0, 0.5)});
    }

    auto x = seq.sample(b);
    for (Index f = 0; f < cfg.frames; ++f) {
      const Index frame_begin = f * layout.tokens_per_frame();
      for (Index s = 0; s < cfg.special; ++s) {
        for (Index c = 0; c < cfg.channels; ++c) {
          x(frame_begin + s, c) = static_cast<float>(rng.normal());
        }
      }
      const double fd = static_cast<double>(f);
      for (Index py = 0; py < cfg.grid_h; ++py) {
        for (Index px = 0; px < cfg.grid_w; ++px) {
          const double yy = static_cast<double>(py) / static_cast<double>(cfg.grid_h);
          const double xx = static_cast<double>(px) / static_cast<double>(cfg.grid_w);
          RowVector<double> v = RowVector<double>::Zero(cfg.channels);
          for (const auto& wv : waves) {
            v += wv.dir * std::cos(two_pi * (wv.fy * yy + wv.fx * xx) + wv.phase + fd * wv.drift);
          }
          double sal = 0.0;
          for (const auto& bl : blobs) {
            const double dy = static_cast<double>(py) - (bl.cy + fd * bl.vy);
            const double dx = static_cast<double>(px) - (bl.cx + fd * bl.vx);
            sal = std::max(sal, std::exp(-(dy * dy + dx * dx) / (2.0 * bl.radius * bl.radius)));
          }
          v += cfg.salience_gain * sal * w.salient;
          x.row(layout.image_token(f, py * cfg.grid_w + px)) = v.cast<float>();
        }
      }
    }
  }
  return seq;
}

RowMatrixf teacher_confidence(const TokenSequence& scene, const SceneConfig& cfg, TeacherKind kind,
                              double noise, Rng& rng) {
  const auto w = world(cfg);
  const auto& layout = scene.layout;
  RowMatrixf out(scene.batch(), layout.image_tokens());
  for (Index b = 0; b < scene.batch(); ++b) {
    const auto x = scene.sample(b);
    for (Index f = 0; f < layout.frames(); ++f) {
      for (Index p = 0; p < layout.patches_per_frame(); ++p) {
        const RowVector<double> v = x.row(layout.image_token(f, p)).cast<double>();
        const double s = v.dot(w.salient);
        const double l = v.dot(w.linear);
        double t = 0.0;
        if (kind == TeacherKind::kLinear) {
          t = s + 0.5 * l;
        } else {
          t = std::tanh(s) + 0.2 * l + noise * rng.normal();
        }
        out(b, f * layout.patches_per_frame() + p) = static_cast<float>(t);
      }
    }
  }
  return out;
}

}  // namespace come
