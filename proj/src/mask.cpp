#include "come/mask.hpp"

#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

namespace come {
namespace {

void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("merge ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
}

// Order of group indices by score; `descending` flips the score order but
// equal scores always keep ascending group index.
std::vector<Index> rank_groups(const Eigen::Ref<const RowVector<float>>& scores, bool descending) {
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return descending ? scores(a) > scores(b) : scores(a) < scores(b);
  });
  return order;
}

GroupFlags select(const RowMatrixf& scores, double ratio, bool highest) {
  check_ratio(ratio);
  if (scores.cols() < 1) throw DimensionError("mask selection needs at least one group");
  const Index k = merged_group_count(scores.cols(), ratio);
  GroupFlags flags(static_cast<std::size_t>(scores.rows()),
                   std::vector<std::uint8_t>(static_cast<std::size_t>(scores.cols()), 0));
  for (Index b = 0; b < scores.rows(); ++b) {
    const auto order = rank_groups(scores.row(b), highest);
    for (Index i = 0; i < k; ++i) flags[b][order[i]] = 1;
  }
  return flags;
}

}  // namespace

ConfidenceMap confidence_from_patches(const RowMatrixf& patch_scores, const LayoutDescriptor& layout,
                                      ConfidenceSource source) {
  if (patch_scores.cols() != layout.image_tokens()) {
    throw DimensionError("patch score count does not match layout");
  }
  ConfidenceMap conf{Tensor({patch_scores.rows(), layout.total_tokens()}, kSpecialConfidence),
                     source};
  auto out = conf.values.matrix();
  for (Index b = 0; b < patch_scores.rows(); ++b) {
    for (Index f = 0; f < layout.frames(); ++f) {
      for (Index p = 0; p < layout.patches_per_frame(); ++p) {
        out(b, layout.image_token(f, p)) = patch_scores(b, f * layout.patches_per_frame() + p);
      }
    }
  }
  return conf;
}

Index merged_group_count(Index groups, double ratio) {
  check_ratio(ratio);
  // The epsilon absorbs products such as 0.29 * 100 = 28.999999999999996.
  return std::min<Index>(groups - 1,
                         static_cast<Index>(std::floor(ratio * static_cast<double>(groups) + 1e-9)));
}

RowMatrixf group_confidence(const ConfidenceMap& conf, const LayoutDescriptor& layout) {
  if (conf.values.rank() != 2 || conf.values.dim(1) != layout.total_tokens()) {
    throw DimensionError("confidence map shape inconsistent with layout");
  }
  const auto values = conf.values.matrix();
  RowMatrixf out(values.rows(), layout.group_count());
  for (Index b = 0; b < values.rows(); ++b) {
    for (Index g = 0; g < layout.group_count(); ++g) {
      const auto r = layout.group_index(g);
      out(b, g) = static_cast<float>(
          values.row(b).segment(r.begin, r.size()).template cast<double>().mean());
    }
  }
  return out;
}

GroupFlags select_lowest(const RowMatrixf& group_scores, double ratio) {
  return select(group_scores, ratio, false);
}

GroupFlags select_highest(const RowMatrixf& group_scores, double ratio) {
  return select(group_scores, ratio, true);
}

IndexMap compile_index_map(std::span<const std::uint8_t> flags, const LayoutDescriptor& layout,
                           SlotPolicy policy) {
  if (static_cast<Index>(flags.size()) != layout.group_count()) {
    throw DimensionError("flag count does not match layout group count");
  }
  const Index total = layout.total_tokens();
  const Index n = layout.group_size();
  const Index tpf = layout.tokens_per_frame();
  const Index special = layout.special_per_frame();
  const Index gpf = layout.groups_per_frame();

  // opens[t] = 1 when token t starts a new output slot.
  std::vector<Index> opens(static_cast<std::size_t>(total));
  std::vector<std::uint8_t> merged(static_cast<std::size_t>(total), 0);
  for (Index t = 0; t < total; ++t) {
    const Index local = t % tpf;
    if (local < special) {
      opens[t] = 1;
      continue;
    }
    const Index patch = local - special;
    const Index group = (t / tpf) * gpf + patch / n;
    if (!flags[group]) {
      opens[t] = 1;
    } else {
      merged[t] = 1;
      opens[t] = (policy == SlotPolicy::kShare && patch % n == 0) ? 1 : 0;
    }
  }

  IndexMap map;
  map.slot.resize(opens.size());
  std::exclusive_scan(opens.begin(), opens.end(), map.slot.begin(), Index{0});
  map.merged_length = total == 0 ? 0 : map.slot.back() + opens.back();
  map.counts.assign(static_cast<std::size_t>(map.merged_length), 1);
  for (Index t = 0; t < total; ++t) {
    if (opens[t]) continue;
    if (policy == SlotPolicy::kDrop) {
      map.slot[t] = kNoSlot;
    } else {
      // Interior member of a shared group: no slot opened since the group's first token.
      map.slot[t] -= 1;
    }
  }
  if (policy == SlotPolicy::kShare) {
    for (Index t = 0; t < total; ++t) {
      if (merged[t] && opens[t]) map.counts[map.slot[t]] = n;
    }
  }
  return map;
}

MergeMask compile_mask(GroupFlags flags, const LayoutDescriptor& layout, SlotPolicy policy) {
  MergeMask mask;
  mask.layout = layout;
  mask.policy = policy;
  mask.flags = std::move(flags);
  mask.maps.reserve(mask.flags.size());
  for (std::size_t b = 0; b < mask.flags.size(); ++b) {
    const Index k = std::accumulate(mask.flags[b].begin(), mask.flags[b].end(), Index{0});
    if (b == 0) {
      mask.merged_count = k;
    } else if (k != mask.merged_count) {
      throw std::invalid_argument("every sample of a batch must merge the same number of groups");
    }
    mask.maps.push_back(compile_index_map(mask.flags[b], layout, policy));
  }
  mask.merged_length = mask.maps.empty() ? layout.total_tokens() : mask.maps.front().merged_length;
  return mask;
}

MergeMask build_mask(const RowMatrixf& group_conf, double ratio, const LayoutDescriptor& layout,
                     SlotPolicy policy) {
  if (group_conf.cols() != layout.group_count()) {
    throw DimensionError("group confidence width does not match layout");
  }
  return compile_mask(select_lowest(group_conf, ratio), layout, policy);
}

RowMatrixf group_similarity(const TokenSequence& seq) {
  const auto& layout = seq.layout;
  const Index n = layout.group_size();
  RowMatrixf out(seq.batch(), layout.group_count());
  for (Index b = 0; b < seq.batch(); ++b) {
    const RowMatrixd x = seq.sample(b).template cast<double>();
    for (Index g = 0; g < layout.group_count(); ++g) {
      const auto r = layout.group_index(g);
      if (n == 1) {
        out(b, g) = 1.0f;
        continue;
      }
      double sum = 0.0;
      for (Index i = r.begin; i < r.end; ++i) {
        for (Index j = i + 1; j < r.end; ++j) {
          const double ni = x.row(i).norm();
          const double nj = x.row(j).norm();
          if (ni > 0.0 && nj > 0.0) sum += x.row(i).dot(x.row(j)) / (ni * nj);
        }
      }
      out(b, g) = static_cast<float>(sum / static_cast<double>(n * (n - 1) / 2));
    }
  }
  return out;
}

MergeMask similarity_mask(const TokenSequence& seq, double ratio, SlotPolicy policy) {
  if (seq.channels() < 1) throw DimensionError("similarity needs at least one channel");
  return compile_mask(select_highest(group_similarity(seq), ratio), seq.layout, policy);
}

void write_flags(std::ostream& out, const GroupFlags& flags) {
  for (const auto& row : flags) {
    for (auto f : row) out << (f ? '1' : '0');
    out << '\n';
  }
}

GroupFlags read_flags(std::istream& in) {
  GroupFlags flags;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::uint8_t> row;
    for (char c : line) {
      if (c == '0' || c == '1') {
        row.push_back(static_cast<std::uint8_t>(c - '0'));
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        throw std::invalid_argument(std::string("unexpected character in mask dump: ") + c);
      }
    }
    if (!row.empty()) flags.push_back(std::move(row));
  }
  return flags;
}

}  // namespace come
