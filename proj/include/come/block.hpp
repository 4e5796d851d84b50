// Transformer block (attention + MLP) on full or merged token sequences.
//
// Row-vector convention: a sample X is (tokens x channels) and
//   H   = X + softmax(X Wq (X Wk)^T / sqrt(d_head) + bias) X Wv Wo
//   out = H + gelu(H W1) W2
// The merged variant runs attention and MLP on Merge(.) and adds Split(.) of
// the result to the full-resolution residual stream. The key-side bias is
// log(n_j) for a slot that stands for n_j original tokens.
#pragma once

#include "come/merge.hpp"
#include "come/rng.hpp"
#include "come/tensor_io.hpp"

#include <optional>

namespace come {

struct BlockParams {
  RowMatrixf wq, wk, wv, wo;  // channels x channels
  RowMatrixf w1;              // channels x hidden
  RowMatrixf w2;              // hidden x channels
  Index heads = 1;

  Index channels() const { return wq.rows(); }
  Index hidden() const { return w1.cols(); }

  /// Throws DimensionError on inconsistent shapes.
  void validate() const;

  static BlockParams zeros(Index channels, Index hidden, Index heads = 1);
  /// Gaussian weights with variance 1/fan_in; `logit_gain` scales Wq and Wk.
  static BlockParams random(Index channels, Index hidden, Rng& rng, double logit_gain = 1.0,
                            Index heads = 1);

  TensorArchive to_archive(const std::string& prefix = "") const;
  static BlockParams from_archive(const TensorArchive& archive, const std::string& prefix = "",
                                  Index heads = 1);
};

/// Accumulated wall time (seconds) spent inside each component.
struct BlockTimings {
  double attention = 0.0;
  double mlp = 0.0;
  double merge_split = 0.0;

  double total() const { return attention + mlp + merge_split; }
};

struct BlockOptions {
  bool bias_correction = true;
  MergeOptions merge;
  BlockTimings* timings = nullptr;
  /// When set, pre/post-merge activations of sample 0 are recorded here.
  TensorArchive* activations = nullptr;
  std::string activation_prefix;
};

/// Attention delta (no residual) for one sample; `key_bias` adds one logit per key column.
RowMatrixf attention(const Eigen::Ref<const RowMatrixf>& x, const BlockParams& params,
                     const RowVector<float>* key_bias = nullptr);

/// Token-wise MLP delta (no residual) for one sample.
RowMatrixf mlp(const Eigen::Ref<const RowMatrixf>& x, const BlockParams& params);

/// Key bias log(counts) for a compiled index map.
RowVector<float> attention_bias(const IndexMap& map);

/// Exact, unmerged reference block.
TokenSequence oracle_block(const TokenSequence& seq, const BlockParams& params,
                           BlockTimings* timings = nullptr);

/// Block with attention and MLP evaluated at merged resolution.
TokenSequence merged_block(const TokenSequence& seq, const MergeMask& mask,
                           const BlockParams& params, const BlockOptions& options = {});

struct FlopCount {
  double attention = 0.0;
  double mlp = 0.0;
  double total() const { return attention + mlp; }
};

/// Analytic per-sample FLOPs of one block at the (merged) sequence length.
FlopCount flop_count(const LayoutDescriptor& layout, const MergeMask* mask,
                     const BlockParams& params);
FlopCount flop_count(Index sequence_length, Index channels, Index hidden);

}  // namespace come
