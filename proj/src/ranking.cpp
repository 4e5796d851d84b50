#include "come/ranking.hpp"

#include <unordered_set>

namespace come {

RankingPairSet all_pairs(std::span<const float> teacher) {
  RankingPairSet set;
  const auto n = static_cast<Index>(teacher.size());
  for (Index a = 0; a < n; ++a) {
    for (Index b = a + 1; b < n; ++b) {
      if (teacher[a] > teacher[b]) set.pairs.emplace_back(a, b);
      else if (teacher[b] > teacher[a]) set.pairs.emplace_back(b, a);
    }
  }
  return set;
}

RankingPairSet sample_pairs(std::span<const float> teacher, std::size_t budget, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(teacher.size());
  if (n < 2) return {};
  if (budget >= n * (n - 1) / 2) return all_pairs(teacher);

  RankingPairSet set;
  set.pairs.reserve(budget);
  std::unordered_set<std::uint64_t> seen;
  // Ties and repeats are rejected; the attempt cap keeps near-constant teachers from spinning.
  for (std::size_t attempts = 0; set.size() < budget && attempts < 8 * budget; ++attempts) {
    auto a = rng.below(n);
    auto b = rng.below(n - 1);
    if (b >= a) ++b;
    if (teacher[a] == teacher[b]) continue;
    if (teacher[a] < teacher[b]) std::swap(a, b);
    if (!seen.insert(a * n + b).second) continue;
    set.pairs.emplace_back(static_cast<Index>(a), static_cast<Index>(b));
  }
  return set;
}

double mask_iou(const GroupFlags& a, const GroupFlags& b) {
  if (a.size() != b.size()) throw DimensionError("masks differ in batch size");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    if (a[s].size() != b[s].size()) throw DimensionError("masks differ in group count");
    for (std::size_t g = 0; g < a[s].size(); ++g) {
      inter += (a[s][g] && b[s][g]) ? 1 : 0;
      uni += (a[s][g] || b[s][g]) ? 1 : 0;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mask_iou(const MergeMask& a, const MergeMask& b) { return mask_iou(a.flags, b.flags); }

}  // namespace come
