// Lightweight confidence predictor: linear projection into a latent space,
// one single-head self-attention over all image patches of a sample (across
// frames), and a 3x3 zero-padded convolution head per frame producing one
// score per patch.
//
// For one sample with image-token features X (patches x channels):
//   Z = X P + 1 b
//   A = softmax(Z Wq (Z Wk)^T / sqrt(latent))
//   U = Z + A Z Wv
//   C'[f, y, x] = c0 + sum_{dy,dx in -1..1} K[dy, dx] . U[f, y+dy, x+dx]
//
// Gradients are derived by hand (backward()); tests check them against
// central finite differences.
#pragma once

#include "come/layout.hpp"
#include "come/mask.hpp"
#include "come/rng.hpp"
#include "come/tensor_io.hpp"

#include <array>
#include <cmath>
#include <string_view>

namespace come {

template <typename Scalar>
struct PredictorParams {
  RowMatrix<Scalar> proj;       // channels x latent
  RowMatrix<Scalar> proj_bias;  // 1 x latent
  RowMatrix<Scalar> wq, wk, wv; // latent x latent
  RowMatrix<Scalar> conv;       // 9 x latent, tap (dy+1)*3 + (dx+1)
  RowMatrix<Scalar> conv_bias;  // 1 x 1

  Index channels() const { return proj.rows(); }
  Index latent() const { return proj.cols(); }

  static PredictorParams zeros(Index channels, Index latent) {
    PredictorParams p;
    p.proj = RowMatrix<Scalar>::Zero(channels, latent);
    p.proj_bias = RowMatrix<Scalar>::Zero(1, latent);
    p.wq = p.wk = p.wv = RowMatrix<Scalar>::Zero(latent, latent);
    p.conv = RowMatrix<Scalar>::Zero(9, latent);
    p.conv_bias = RowMatrix<Scalar>::Zero(1, 1);
    return p;
  }

  /// Gaussian init with variance 1/fan_in (times `gain`); biases zero.
  static PredictorParams random(Index channels, Index latent, Rng& rng, double gain = 1.0) {
    auto p = zeros(channels, latent);
    auto fill = [&](RowMatrix<Scalar>& m, double fan_in) {
      const double sd = gain / std::sqrt(fan_in);
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.normal() * sd);
    };
    fill(p.proj, static_cast<double>(channels));
    fill(p.wq, static_cast<double>(latent));
    fill(p.wk, static_cast<double>(latent));
    fill(p.wv, static_cast<double>(latent));
    fill(p.conv, 9.0 * static_cast<double>(latent));
    return p;
  }

  /// Calls f(name, block) for every parameter block, in a fixed order.
  template <typename F>
  void for_each_block(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each_block(F&& f) const { visit(*this, f); }

  /// this -= step * grad
  void descend(const PredictorParams& grad, Scalar step) {
    proj -= step * grad.proj;
    proj_bias -= step * grad.proj_bias;
    wq -= step * grad.wq;
    wk -= step * grad.wk;
    wv -= step * grad.wv;
    conv -= step * grad.conv;
    conv_bias -= step * grad.conv_bias;
  }

  void accumulate(const PredictorParams& other) {
    proj += other.proj;
    proj_bias += other.proj_bias;
    wq += other.wq;
    wk += other.wk;
    wv += other.wv;
    conv += other.conv;
    conv_bias += other.conv_bias;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_block([&](std::string_view, const RowMatrix<Scalar>& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  template <typename Other>
  PredictorParams<Other> cast() const {
    return {proj.template cast<Other>(), proj_bias.template cast<Other>(),
            wq.template cast<Other>(),   wk.template cast<Other>(),
            wv.template cast<Other>(),   conv.template cast<Other>(),
            conv_bias.template cast<Other>()};
  }

  TensorArchive to_archive() const {
    TensorArchive a;
    for_each_block([&](std::string_view name, const RowMatrix<Scalar>& m) {
      a.emplace(std::string("predictor/") + std::string(name),
                Tensor::from_matrix(m.template cast<float>()));
    });
    return a;
  }

  static PredictorParams from_archive(const TensorArchive& a) {
    PredictorParams p;
    p.for_each_block([&](std::string_view name, RowMatrix<Scalar>& m) {
      auto it = a.find(std::string("predictor/") + std::string(name));
      if (it == a.end()) throw FormatError("predictor archive lacks section " + std::string(name));
      m = it->second.matrix().template cast<Scalar>();
    });
    if (p.proj_bias.rows() != 1 || p.proj_bias.cols() != p.latent() || p.wq.rows() != p.latent() ||
        p.conv.rows() != 9 || p.conv.cols() != p.latent() || p.conv_bias.size() != 1) {
      throw FormatError("predictor archive has inconsistent shapes");
    }
    return p;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f(std::string_view("proj"), self.proj);
    f(std::string_view("proj_bias"), self.proj_bias);
    f(std::string_view("wq"), self.wq);
    f(std::string_view("wk"), self.wk);
    f(std::string_view("wv"), self.wv);
    f(std::string_view("conv"), self.conv);
    f(std::string_view("conv_bias"), self.conv_bias);
  }
};

/// Patch grid geometry of one sample.
struct PatchGrid {
  Index frames = 0;
  Index height = 0;
  Index width = 0;
  Index patches() const { return frames * height * width; }
};

inline PatchGrid patch_grid(const LayoutDescriptor& layout) {
  if (!layout.has_grid()) throw DimensionError("layout has no patch grid");
  return {layout.frames(), layout.grid_h(), layout.grid_w()};
}

/// Image-token rows of one sample, in (frame, y, x) order.
template <typename Scalar>
RowMatrix<Scalar> image_features(const TokenSequence& seq, Index sample) {
  const auto& l = seq.layout;
  RowMatrix<Scalar> x(l.image_tokens(), seq.channels());
  const auto s = seq.sample(sample);
  for (Index f = 0; f < l.frames(); ++f) {
    x.middleRows(f * l.patches_per_frame(), l.patches_per_frame()) =
        s.middleRows(l.image_token(f, 0), l.patches_per_frame()).template cast<Scalar>();
  }
  return x;
}

/// Intermediate activations of one forward pass, kept for backward().
template <typename Scalar>
struct PredictorCache {
  RowMatrix<Scalar> x, z, q, k, v, attn, u;
  Vector<Scalar> out;
};

namespace detail {

// Calls f(out_patch, in_patch, tap) for every in-bounds 3x3 neighbour.
template <typename F>
void for_each_tap(const PatchGrid& g, F&& f) {
  for (Index fr = 0; fr < g.frames; ++fr) {
    for (Index y = 0; y < g.height; ++y) {
      for (Index x = 0; x < g.width; ++x) {
        const Index o = (fr * g.height + y) * g.width + x;
        for (Index dy = -1; dy <= 1; ++dy) {
          const Index yy = y + dy;
          if (yy < 0 || yy >= g.height) continue;
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index xx = x + dx;
            if (xx < 0 || xx >= g.width) continue;
            f(o, (fr * g.height + yy) * g.width + xx, (dy + 1) * 3 + (dx + 1));
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Forward pass for one sample; returns one score per patch.
template <typename Scalar>
Vector<Scalar> predictor_forward(const RowMatrix<Scalar>& features, const PatchGrid& grid,
                                 const PredictorParams<Scalar>& p,
                                 PredictorCache<Scalar>* cache = nullptr) {
  if (features.rows() != grid.patches()) throw DimensionError("feature rows do not match patch grid");
  if (features.cols() != p.channels()) throw DimensionError("feature channels do not match predictor");
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(p.latent()));

  PredictorCache<Scalar> local;
  auto& c = cache ? *cache : local;
  c.x = features;
  c.z = features * p.proj;
  c.z.rowwise() += p.proj_bias.row(0);
  c.q = c.z * p.wq;
  c.k = c.z * p.wk;
  c.v = c.z * p.wv;
  c.attn = (c.q * c.k.transpose()) * scale;
  softmax_rows_inplace(c.attn);
  c.u = c.z + c.attn * c.v;

  // Per-patch dot products with every tap, then the zero-padded stencil sum.
  const RowMatrix<Scalar> taps = c.u * p.conv.transpose();  // patches x 9
  c.out = Vector<Scalar>::Constant(grid.patches(), p.conv_bias(0, 0));
  detail::for_each_tap(grid, [&](Index o, Index i, Index tap) { c.out(o) += taps(i, tap); });
  return c.out;
}

/// Gradient of a scalar loss w.r.t. all parameters, given dL/dC' for one sample.
template <typename Scalar>
PredictorParams<Scalar> predictor_backward(const PredictorCache<Scalar>& c, const PatchGrid& grid,
                                           const PredictorParams<Scalar>& p,
                                           const Vector<Scalar>& upstream) {
  if (upstream.size() != grid.patches()) throw DimensionError("upstream gradient length mismatch");
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(p.latent()));
  auto g = PredictorParams<Scalar>::zeros(p.channels(), p.latent());

  g.conv_bias(0, 0) = upstream.sum();
  // d taps(i, tap) = sum of upstream over outputs that read tap from patch i.
  RowMatrix<Scalar> dtaps = RowMatrix<Scalar>::Zero(grid.patches(), 9);
  detail::for_each_tap(grid, [&](Index o, Index i, Index tap) { dtaps(i, tap) += upstream(o); });
  g.conv = dtaps.transpose() * c.u;
  const RowMatrix<Scalar> du = dtaps * p.conv;

  RowMatrix<Scalar> dz = du;
  const RowMatrix<Scalar> dattn = du * c.v.transpose();
  const RowMatrix<Scalar> dv = c.attn.transpose() * du;
  // Softmax backward, row by row: dS = A .* (dA - rowsum(dA .* A)).
  const Vector<Scalar> inner = (dattn.array() * c.attn.array()).rowwise().sum();
  RowMatrix<Scalar> dlogits =
      (c.attn.array() * (dattn.colwise() - inner).array()).matrix() * scale;
  const RowMatrix<Scalar> dq = dlogits * c.k;
  const RowMatrix<Scalar> dk = dlogits.transpose() * c.q;

  g.wq = c.z.transpose() * dq;
  g.wk = c.z.transpose() * dk;
  g.wv = c.z.transpose() * dv;
  dz.noalias() += dq * p.wq.transpose();
  dz.noalias() += dk * p.wk.transpose();
  dz.noalias() += dv * p.wv.transpose();

  g.proj = c.x.transpose() * dz;
  g.proj_bias = dz.colwise().sum();
  return g;
}

/// Batched forward: per-patch predictor scores for every sample, (batch, image_tokens).
template <typename Scalar>
RowMatrix<Scalar> predict_patches(const TokenSequence& features, const PredictorParams<Scalar>& p) {
  const auto grid = patch_grid(features.layout);
  RowMatrix<Scalar> out(features.batch(), grid.patches());
  for (Index b = 0; b < features.batch(); ++b) {
    out.row(b) = predictor_forward(image_features<Scalar>(features, b), grid, p).transpose();
  }
  return out;
}

/// Confidence map C' with the +inf sentinel on specials.
template <typename Scalar>
ConfidenceMap predictor_confidence(const TokenSequence& features, const PredictorParams<Scalar>& p) {
  return confidence_from_patches(predict_patches(features, p).template cast<float>(),
                                 features.layout, ConfidenceSource::kPredictor);
}

}  // namespace come
