// Merge and Split around a compute module.
//
// Merge writes every output slot through the precomputed index map: specials
// and unflagged tokens are copied, flagged groups are coalesced. Split is the
// gather back: each original position reads its slot, so a merged token is
// replicated over its whole group.
#pragma once

#include "come/mask.hpp"

namespace come {

/// How a flagged group is coalesced into the merged sequence.
enum class Coalesce {
  kAverage,  // arithmetic mean of the group
  kPickOne,  // one member chosen uniformly at random (seeded)
  kDropAll,  // no slot at all; split writes zeros back
};

SlotPolicy slot_policy(Coalesce c);
const char* to_string(Coalesce c);
Coalesce parse_coalesce(const std::string& name);

struct MergeOptions {
  Coalesce coalesce = Coalesce::kAverage;
  /// Seed for kPickOne member selection.
  std::uint64_t seed = 0;
  /// Optional (batch, total_tokens) non-negative weights turning the mean into
  /// a weighted mean. Off (null) by default.
  const Tensor* weights = nullptr;
};

/// Merged tokens, shape (batch, merged_length, channels). `mask` is not owned.
struct MergedSequence {
  Tensor tokens;
  const MergeMask* mask = nullptr;
};

/// Member of flagged group `group` (of sample `sample`) kept by kPickOne.
Index pick_one_member(std::uint64_t seed, Index sample, Index group, Index group_size);

/// Single-sample kernel: coalesces `x` (tokens x channels) into `out` (slots x channels).
void merge_sample(const Eigen::Ref<const RowMatrixf>& x, const MergeMask& mask, Index sample,
                  const MergeOptions& options, Eigen::Ref<RowMatrixf> out);

/// Single-sample kernel: scatters `merged` back to `out` (tokens x channels).
void split_sample(const Eigen::Ref<const RowMatrixf>& merged, const IndexMap& map,
                  Eigen::Ref<RowMatrixf> out);

MergedSequence merge(const TokenSequence& seq, const MergeMask& mask,
                     const MergeOptions& options = {});

TokenSequence split(const MergedSequence& merged);

}  // namespace come
