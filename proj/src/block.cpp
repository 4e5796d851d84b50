#include "come/block.hpp"

#include <chrono>
#include <cmath>

namespace come {
namespace {

// Query rows per attention tile; bounds the logits buffer to kTile x N.
constexpr Index kTile = 256;

using Clock = std::chrono::steady_clock;

class ScopedTimer {
 public:
  explicit ScopedTimer(double* sink) : sink_(sink), start_(sink ? Clock::now() : Clock::time_point{}) {}
  ~ScopedTimer() {
    if (sink_) *sink_ += std::chrono::duration<double>(Clock::now() - start_).count();
  }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  double* sink_;
  Clock::time_point start_;
};

RowMatrixf gaussian(Index rows, Index cols, double stddev, Rng& rng) {
  RowMatrixf m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal() * stddev);
  return m;
}

void record(const BlockOptions& o, const std::string& name, const Eigen::Ref<const RowMatrixf>& m) {
  if (o.activations != nullptr) (*o.activations)[o.activation_prefix + name] = Tensor::from_matrix(m);
}

}  // namespace

void BlockParams::validate() const {
  const Index c = wq.rows();
  auto square = [c](const RowMatrixf& m) { return m.rows() == c && m.cols() == c; };
  if (!square(wq) || !square(wk) || !square(wv) || !square(wo)) {
    throw DimensionError("attention projections must be channels x channels");
  }
  if (w1.rows() != c || w2.cols() != c || w2.rows() != w1.cols()) {
    throw DimensionError("MLP weights inconsistent with channel count");
  }
  if (heads < 1 || c % heads != 0) throw DimensionError("channels not divisible by head count");
}

BlockParams BlockParams::zeros(Index channels, Index hidden, Index heads) {
  BlockParams p;
  p.wq = p.wk = p.wv = p.wo = RowMatrixf::Zero(channels, channels);
  p.w1 = RowMatrixf::Zero(channels, hidden);
  p.w2 = RowMatrixf::Zero(hidden, channels);
  p.heads = heads;
  p.validate();
  return p;
}

BlockParams BlockParams::random(Index channels, Index hidden, Rng& rng, double logit_gain,
                                Index heads) {
  const double sc = 1.0 / std::sqrt(static_cast<double>(channels));
  const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
  const double sq = sc * std::sqrt(logit_gain);
  BlockParams p;
  p.wq = gaussian(channels, channels, sq, rng);
  p.wk = gaussian(channels, channels, sq, rng);
  p.wv = gaussian(channels, channels, sc, rng);
  p.wo = gaussian(channels, channels, sc, rng);
  p.w1 = gaussian(channels, hidden, sc, rng);
  p.w2 = gaussian(hidden, channels, sh, rng);
  p.heads = heads;
  p.validate();
  return p;
}

TensorArchive BlockParams::to_archive(const std::string& prefix) const {
  return {{prefix + "wq", Tensor::from_matrix(wq)}, {prefix + "wk", Tensor::from_matrix(wk)},
          {prefix + "wv", Tensor::from_matrix(wv)}, {prefix + "wo", Tensor::from_matrix(wo)},
          {prefix + "w1", Tensor::from_matrix(w1)}, {prefix + "w2", Tensor::from_matrix(w2)}};
}

BlockParams BlockParams::from_archive(const TensorArchive& archive, const std::string& prefix,
                                      Index heads) {
  auto get = [&](const char* name) -> RowMatrixf {
    auto it = archive.find(prefix + name);
    if (it == archive.end()) throw FormatError("block archive lacks section " + prefix + name);
    return it->second.matrix();
  };
  BlockParams p{get("wq"), get("wk"), get("wv"), get("wo"), get("w1"), get("w2"), heads};
  p.validate();
  return p;
}

RowMatrixf attention(const Eigen::Ref<const RowMatrixf>& x, const BlockParams& params,
                     const RowVector<float>* key_bias) {
  const Index n = x.rows();
  const Index c = params.channels();
  const Index dh = c / params.heads;
  if (x.cols() != c) throw DimensionError("token channels do not match block parameters");
  if (key_bias != nullptr && key_bias->size() != n) {
    throw DimensionError("attention bias length does not match key count");
  }

  RowMatrixf q = x * params.wq;
  q *= static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
  const RowMatrixf k = x * params.wk;
  const RowMatrixf v = x * params.wv;

  RowMatrixf heads_out(n, c);
  RowMatrixf logits;
  for (Index h = 0; h < params.heads; ++h) {
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    for (Index r0 = 0; r0 < n; r0 += kTile) {
      const Index rows = std::min(kTile, n - r0);
      logits.resize(rows, n);
      logits.noalias() = q.block(r0, h * dh, rows, dh) * kh.transpose();
      softmax_rows_inplace(logits, key_bias);
      heads_out.block(r0, h * dh, rows, dh).noalias() = logits * vh;
    }
  }
  RowMatrixf out(n, c);
  out.noalias() = heads_out * params.wo;
  return out;
}

RowMatrixf mlp(const Eigen::Ref<const RowMatrixf>& x, const BlockParams& params) {
  if (x.cols() != params.channels()) {
    throw DimensionError("token channels do not match block parameters");
  }
  RowMatrixf hidden(x.rows(), params.hidden());
  hidden.noalias() = x * params.w1;
  hidden = hidden.unaryExpr([](float v) { return gelu(v); });
  RowMatrixf out(x.rows(), params.channels());
  out.noalias() = hidden * params.w2;
  return out;
}

RowVector<float> attention_bias(const IndexMap& map) {
  RowVector<float> bias(map.merged_length);
  for (Index s = 0; s < map.merged_length; ++s) {
    bias(s) = std::log(static_cast<float>(map.counts[s]));
  }
  return bias;
}

TokenSequence oracle_block(const TokenSequence& seq, const BlockParams& params,
                           BlockTimings* timings) {
  params.validate();
  TokenSequence out = seq;
  for (Index b = 0; b < seq.batch(); ++b) {
    auto y = out.sample(b);
    {
      ScopedTimer t(timings ? &timings->attention : nullptr);
      y += attention(seq.sample(b), params);
    }
    {
      ScopedTimer t(timings ? &timings->mlp : nullptr);
      y += mlp(y, params);
    }
  }
  return out;
}

TokenSequence merged_block(const TokenSequence& seq, const MergeMask& mask,
                           const BlockParams& params, const BlockOptions& options) {
  params.validate();
  if (!(seq.layout == mask.layout) || seq.batch() != mask.batch()) {
    throw DimensionError("mask was compiled for a different layout or batch");
  }
  auto* timings = options.timings;
  const Index c = seq.channels();
  TokenSequence out;
  {
    // The residual stream starts as a copy of the input.
    ScopedTimer t(timings ? &timings->attention : nullptr);
    out = seq;
  }
  RowMatrixf merged(mask.merged_length, c);
  RowMatrixf full(seq.layout.total_tokens(), c);

  for (Index b = 0; b < seq.batch(); ++b) {
    const auto& map = mask.maps[static_cast<std::size_t>(b)];
    const bool trace = options.activations != nullptr && b == 0;
    auto y = out.sample(b);

    RowVector<float> bias;
    {
      ScopedTimer t(timings ? &timings->merge_split : nullptr);
      merge_sample(seq.sample(b), mask, b, options.merge, merged);
      if (options.bias_correction) bias = attention_bias(map);
    }
    if (trace) record(options, "attn_pre_merge", seq.sample(b));
    if (trace) record(options, "attn_merged", merged);

    RowMatrixf delta;
    {
      ScopedTimer t(timings ? &timings->attention : nullptr);
      delta = attention(merged, params, options.bias_correction ? &bias : nullptr);
    }
    {
      ScopedTimer t(timings ? &timings->merge_split : nullptr);
      split_sample(delta, map, full);
    }
    {
      ScopedTimer t(timings ? &timings->attention : nullptr);
      y += full;
    }
    if (trace) record(options, "attn_post_split", y);

    {
      ScopedTimer t(timings ? &timings->merge_split : nullptr);
      merge_sample(y, mask, b, options.merge, merged);
    }
    if (trace) record(options, "mlp_merged", merged);
    {
      ScopedTimer t(timings ? &timings->mlp : nullptr);
      delta = mlp(merged, params);
    }
    {
      ScopedTimer t(timings ? &timings->merge_split : nullptr);
      split_sample(delta, map, full);
    }
    {
      ScopedTimer t(timings ? &timings->mlp : nullptr);
      y += full;
    }
    if (trace) record(options, "mlp_post_split", y);
  }
  return out;
}

FlopCount flop_count(Index sequence_length, Index channels, Index hidden) {
  const double n = static_cast<double>(sequence_length);
  const double d = static_cast<double>(channels);
  return {4.0 * n * n * d + 8.0 * n * d * d, 4.0 * n * d * static_cast<double>(hidden)};
}

FlopCount flop_count(const LayoutDescriptor& layout, const MergeMask* mask,
                     const BlockParams& params) {
  const Index n = mask != nullptr ? mask->merged_length : layout.total_tokens();
  return flop_count(n, params.channels(), params.hidden());
}

}  // namespace come
