#include "come/merge.hpp"

#include "come/rng.hpp"

namespace come {

SlotPolicy slot_policy(Coalesce c) {
  return c == Coalesce::kDropAll ? SlotPolicy::kDrop : SlotPolicy::kShare;
}

const char* to_string(Coalesce c) {
  switch (c) {
    case Coalesce::kAverage: return "average";
    case Coalesce::kPickOne: return "pick-one";
    case Coalesce::kDropAll: return "drop-all";
  }
  return "?";
}

Coalesce parse_coalesce(const std::string& name) {
  if (name == "average" || name == "merge") return Coalesce::kAverage;
  if (name == "pick-one") return Coalesce::kPickOne;
  if (name == "drop-all") return Coalesce::kDropAll;
  throw std::invalid_argument("unknown coalescing strategy: " + name);
}

Index pick_one_member(std::uint64_t seed, Index sample, Index group, Index group_size) {
  const auto h = counter_hash(seed, (static_cast<std::uint64_t>(sample) << 32) ^
                                        static_cast<std::uint64_t>(group));
  return static_cast<Index>(h % static_cast<std::uint64_t>(group_size));
}

void merge_sample(const Eigen::Ref<const RowMatrixf>& x, const MergeMask& mask, Index sample,
                  const MergeOptions& options, Eigen::Ref<RowMatrixf> out) {
  const auto& layout = mask.layout;
  const auto& map = mask.maps.at(static_cast<std::size_t>(sample));
  const auto& flags = mask.flags[static_cast<std::size_t>(sample)];
  if (x.rows() != layout.total_tokens() || out.rows() != map.merged_length ||
      out.cols() != x.cols()) {
    throw DimensionError("merge operands do not match the mask layout");
  }
  if (slot_policy(options.coalesce) != mask.policy) {
    throw std::invalid_argument("mask slot policy does not match coalescing strategy");
  }
  const Index n = layout.group_size();
  const Index special = layout.special_per_frame();
  const Index gpf = layout.groups_per_frame();
  const float* w = nullptr;
  if (options.weights != nullptr) {
    w = options.weights->data().data() + sample * layout.total_tokens();
  }

  for (Index f = 0; f < layout.frames(); ++f) {
    const Index frame_begin = f * layout.tokens_per_frame();
    for (Index t = frame_begin; t < frame_begin + special; ++t) out.row(map.slot[t]) = x.row(t);
    for (Index local = 0; local < gpf; ++local) {
      const Index g = f * gpf + local;
      const Index begin = frame_begin + special + local * n;
      if (!flags[g]) {
        for (Index t = begin; t < begin + n; ++t) out.row(map.slot[t]) = x.row(t);
        continue;
      }
      switch (options.coalesce) {
        case Coalesce::kDropAll:
          break;
        case Coalesce::kPickOne:
          out.row(map.slot[begin]) = x.row(begin + pick_one_member(options.seed, sample, g, n));
          break;
        case Coalesce::kAverage: {
          // Double accumulation makes re-merging replicated tokens exact.
          RowVector<double> acc = RowVector<double>::Zero(x.cols());
          double total = 0.0;
          for (Index t = begin; t < begin + n; ++t) {
            const double wt = w ? static_cast<double>(w[t]) : 1.0;
            acc += wt * x.row(t).cast<double>();
            total += wt;
          }
          if (total <= 0.0) throw DomainError("merge weights of a group sum to zero");
          out.row(map.slot[begin]) = (acc / total).cast<float>();
          break;
        }
      }
    }
  }
}

void split_sample(const Eigen::Ref<const RowMatrixf>& merged, const IndexMap& map,
                  Eigen::Ref<RowMatrixf> out) {
  if (merged.rows() != map.merged_length || out.rows() != static_cast<Index>(map.slot.size()) ||
      out.cols() != merged.cols()) {
    throw DimensionError("split operands do not match the index map");
  }
  for (Index t = 0; t < out.rows(); ++t) {
    const Index s = map.slot[t];
    if (s == kNoSlot) {
      out.row(t).setZero();
    } else {
      out.row(t) = merged.row(s);
    }
  }
}

MergedSequence merge(const TokenSequence& seq, const MergeMask& mask, const MergeOptions& options) {
  if (!(seq.layout == mask.layout) || seq.batch() != mask.batch()) {
    throw DimensionError("mask was compiled for a different layout or batch");
  }
  MergedSequence out{Tensor({seq.batch(), mask.merged_length, seq.channels()}), &mask};
  for (Index b = 0; b < seq.batch(); ++b) {
    merge_sample(seq.sample(b), mask, b, options, out.tokens.sample(b));
  }
  return out;
}

TokenSequence split(const MergedSequence& merged) {
  if (merged.mask == nullptr) throw std::invalid_argument("merged sequence has no mask");
  const auto& mask = *merged.mask;
  TokenSequence out(mask.layout, merged.tokens.dim(0), merged.tokens.dim(2));
  for (Index b = 0; b < out.batch(); ++b) {
    split_sample(merged.tokens.sample(b), mask.maps[static_cast<std::size_t>(b)], out.sample(b));
  }
  return out;
}

}  // namespace come
