// Merge-mask generation.
//
// Confidence is pooled per group, the k = floor(p * G) lowest groups of each
// sample are flagged, and the flags are compiled once into an index map that
// every later merge/split call reuses. Because k depends only on G and p,
// every sample of a batch ends up with the same merged length.
#pragma once

#include "come/layout.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

namespace come {

enum class ConfidenceSource { kTeacher, kPredictor };

/// Sentinel confidence carried by special tokens; they are never selected.
inline constexpr float kSpecialConfidence = std::numeric_limits<float>::infinity();

/// Per-token confidence, shape (batch, total_tokens).
struct ConfidenceMap {
  Tensor values;
  ConfidenceSource source = ConfidenceSource::kTeacher;

  Index batch() const { return values.dim(0); }
};

/// Scatters per-patch scores (batch, image_tokens) into a ConfidenceMap,
/// giving every special token the +inf sentinel.
ConfidenceMap confidence_from_patches(const RowMatrixf& patch_scores, const LayoutDescriptor& layout,
                                      ConfidenceSource source);

/// How flagged groups occupy the merged sequence.
enum class SlotPolicy {
  kShare,  // a flagged group's n tokens share one slot (average, pick-one)
  kDrop,   // a flagged group emits no slot at all (drop-all)
};

/// Per-sample group flags, [sample][group].
using GroupFlags = std::vector<std::vector<std::uint8_t>>;

inline constexpr Index kNoSlot = -1;

struct IndexMap {
  Index merged_length = 0;
  /// Slot of each original token, kNoSlot for dropped tokens. Non-decreasing otherwise.
  std::vector<Index> slot;
  /// Number of original tokens each slot stands for.
  std::vector<Index> counts;

  friend bool operator==(const IndexMap&, const IndexMap&) = default;
};

struct MergeMask {
  LayoutDescriptor layout;
  SlotPolicy policy = SlotPolicy::kShare;
  GroupFlags flags;
  Index merged_count = 0;
  Index merged_length = 0;
  std::vector<IndexMap> maps;  // one per sample

  Index batch() const { return static_cast<Index>(flags.size()); }
  bool empty() const { return merged_count == 0; }
};

/// k = floor(p * G). p must lie in [0, 1).
Index merged_group_count(Index groups, double ratio);

/// Mean confidence of each group's member tokens: (batch, groups).
RowMatrixf group_confidence(const ConfidenceMap& conf, const LayoutDescriptor& layout);

/// Flags the k lowest-scoring groups of every row, ties toward the lower group index.
GroupFlags select_lowest(const RowMatrixf& group_scores, double ratio);

/// Flags the k highest-scoring groups of every row, ties toward the lower group index.
GroupFlags select_highest(const RowMatrixf& group_scores, double ratio);

/// Single-pass exclusive scan over per-token "opens a slot" flags.
IndexMap compile_index_map(std::span<const std::uint8_t> flags, const LayoutDescriptor& layout,
                           SlotPolicy policy = SlotPolicy::kShare);

/// Compiles flags for every sample into a MergeMask.
MergeMask compile_mask(GroupFlags flags, const LayoutDescriptor& layout,
                       SlotPolicy policy = SlotPolicy::kShare);

/// Bottom-p selection on pooled confidence, compiled into a MergeMask.
MergeMask build_mask(const RowMatrixf& group_conf, double ratio, const LayoutDescriptor& layout,
                     SlotPolicy policy = SlotPolicy::kShare);

/// Mean pairwise cosine similarity among each group's members: (batch, groups).
/// Zero-norm tokens have similarity 0 to everything; a single-token group scores 1.
RowMatrixf group_similarity(const TokenSequence& seq);

/// Merge-by-similarity baseline: flags the k most self-similar groups.
MergeMask similarity_mask(const TokenSequence& seq, double ratio,
                          SlotPolicy policy = SlotPolicy::kShare);

/// One line of '0'/'1' group flags per sample.
void write_flags(std::ostream& out, const GroupFlags& flags);
GroupFlags read_flags(std::istream& in);

}  // namespace come
