// Token layout: per frame, `special` non-image tokens followed by the frame's
// image patches in raster order. Image patches are cut into groups of
// `group` consecutive tokens; groups never cross a frame boundary.
#pragma once

#include "come/tensor.hpp"

#include <iosfwd>
#include <string>

namespace come {

/// Half-open token range [begin, end).
struct TokenRange {
  Index begin = 0;
  Index end = 0;
  Index size() const { return end - begin; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

class LayoutDescriptor {
 public:
  LayoutDescriptor() = default;

  /// Throws DimensionError unless patches_per_frame is a multiple of group_size.
  LayoutDescriptor(Index frames, Index special_per_frame, Index patches_per_frame,
                   Index group_size);

  /// Same as above with the patch grid given explicitly (needed by the conv head).
  static LayoutDescriptor grid(Index frames, Index special_per_frame, Index grid_h, Index grid_w,
                               Index group_size);

  Index frames() const { return frames_; }
  Index special_per_frame() const { return special_; }
  Index patches_per_frame() const { return patches_; }
  Index group_size() const { return group_; }
  Index grid_h() const { return grid_h_; }
  Index grid_w() const { return grid_w_; }
  bool has_grid() const { return grid_h_ > 0; }

  Index tokens_per_frame() const { return special_ + patches_; }
  Index total_tokens() const { return frames_ * tokens_per_frame(); }
  Index groups_per_frame() const { return patches_ / group_; }
  Index group_count() const { return frames_ * groups_per_frame(); }
  Index image_tokens() const { return frames_ * patches_; }

  TokenRange group_index(Index group_id) const;
  bool is_special(Index token_id) const;

  /// Token index of image patch `patch` (0-based within frame) of `frame`.
  Index image_token(Index frame, Index patch) const {
    return frame * tokens_per_frame() + special_ + patch;
  }

  /// `frames=.. special=.. patches=.. group=..`
  std::string header() const;
  static LayoutDescriptor parse_header(const std::string& line);

  friend bool operator==(const LayoutDescriptor&, const LayoutDescriptor&) = default;

 private:
  Index frames_ = 0;
  Index special_ = 0;
  Index patches_ = 0;
  Index group_ = 1;
  Index grid_h_ = 0;
  Index grid_w_ = 0;
};

/// Batched tokens of shape (batch, total_tokens, channels) laid out per `layout`.
struct TokenSequence {
  LayoutDescriptor layout;
  Tensor tokens;

  TokenSequence() = default;
  TokenSequence(LayoutDescriptor l, Tensor t);
  TokenSequence(LayoutDescriptor l, Index batch, Index channels);

  Index batch() const { return tokens.dim(0); }
  Index channels() const { return tokens.dim(2); }
  MatrixMap<float> sample(Index b) { return tokens.sample(b); }
  ConstMatrixMap<float> sample(Index b) const { return tokens.sample(b); }
};

}  // namespace come
