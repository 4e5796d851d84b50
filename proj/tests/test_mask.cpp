#include "come/mask.hpp"
#include "come/rng.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace come;

namespace {

// Token-by-token walk, independent of the scan formulation.
IndexMap sequential_map(const std::vector<std::uint8_t>& flags, const LayoutDescriptor& l,
                        SlotPolicy policy) {
  IndexMap m;
  Index next = 0;
  for (Index t = 0; t < l.total_tokens(); ++t) {
    if (l.is_special(t)) {
      m.slot.push_back(next++);
      m.counts.push_back(1);
      continue;
    }
    const Index frame = t / l.tokens_per_frame();
    const Index patch = t % l.tokens_per_frame() - l.special_per_frame();
    const Index g = frame * l.groups_per_frame() + patch / l.group_size();
    if (!flags[static_cast<std::size_t>(g)]) {
      m.slot.push_back(next++);
      m.counts.push_back(1);
    } else if (policy == SlotPolicy::kDrop) {
      m.slot.push_back(kNoSlot);
    } else if (patch % l.group_size() == 0) {
      m.slot.push_back(next++);
      m.counts.push_back(l.group_size());
    } else {
      m.slot.push_back(next - 1);
    }
  }
  m.merged_length = next;
  return m;
}

LayoutDescriptor random_layout(Rng& rng, std::initializer_list<Index> groups) {
  const std::vector<Index> g(groups);
  const Index n = g[rng.below(g.size())];
  return LayoutDescriptor(1 + static_cast<Index>(rng.below(3)), static_cast<Index>(rng.below(3)),
                          n * (1 + static_cast<Index>(rng.below(8))), n);
}

}  // namespace

TEST(Mask, MergedGroupCountFloors) {
  EXPECT_EQ(merged_group_count(10, 0.5), 5);
  EXPECT_EQ(merged_group_count(10, 0.55), 5);
  EXPECT_EQ(merged_group_count(256, 0.5), 128);
  EXPECT_EQ(merged_group_count(3, 0.0), 0);
  EXPECT_EQ(merged_group_count(10, 0.3), 3);  // 0.3 * 10 is 2.9999... in binary
  EXPECT_THROW(merged_group_count(10, 1.0), std::invalid_argument);
  EXPECT_THROW(merged_group_count(10, -0.1), std::invalid_argument);
}

TEST(Mask, IndexMapMatchesSequentialWalk) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto l = random_layout(rng, {1, 2, 4, 6});
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(l.group_count()));
    for (auto& f : flags) f = static_cast<std::uint8_t>(rng.below(2));
    for (auto policy : {SlotPolicy::kShare, SlotPolicy::kDrop}) {
      ASSERT_EQ(compile_index_map(flags, l, policy), sequential_map(flags, l, policy))
          << l.header();
    }
  }
}

TEST(Mask, IndexMapCountsCoverTokens) {
  const LayoutDescriptor l(1, 1, 8, 4);
  const std::vector<std::uint8_t> flags{1, 0};
  const auto m = compile_index_map(flags, l);
  EXPECT_EQ(m.merged_length, 6);
  EXPECT_EQ(m.slot, (std::vector<Index>{0, 1, 1, 1, 1, 2, 3, 4, 5}));
  EXPECT_EQ(m.counts, (std::vector<Index>{1, 4, 1, 1, 1, 1}));
}

TEST(Mask, SelectLowestMatchesFullSort) {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const Index groups = 1 + static_cast<Index>(rng.below(40));
    const double ratio = rng.uniform(0.0, 0.99);
    RowMatrixf scores(2, groups);
    // Coarse values to force ties.
    for (Index i = 0; i < scores.size(); ++i) scores.data()[i] = static_cast<float>(rng.below(5));
    const auto flags = select_lowest(scores, ratio);
    const Index k = merged_group_count(groups, ratio);
    for (Index b = 0; b < 2; ++b) {
      std::vector<std::pair<float, Index>> order;
      for (Index g = 0; g < groups; ++g) order.emplace_back(scores(b, g), g);
      std::sort(order.begin(), order.end());
      std::vector<std::uint8_t> want(static_cast<std::size_t>(groups), 0);
      for (Index i = 0; i < k; ++i) want[static_cast<std::size_t>(order[i].second)] = 1;
      EXPECT_EQ(flags[static_cast<std::size_t>(b)], want);
    }
  }
}

TEST(Mask, TiesBreakTowardLowerGroup) {
  RowMatrixf s = RowMatrixf::Zero(1, 4);
  const auto f = select_lowest(s, 0.5);
  EXPECT_EQ(f[0], (std::vector<std::uint8_t>{1, 1, 0, 0}));
  const auto h = select_highest(s, 0.5);
  EXPECT_EQ(h[0], (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(Mask, FlaggedSetGrowsWithRatio) {
  Rng rng(3);
  RowMatrixf s(1, 64);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = static_cast<float>(rng.normal());
  std::vector<std::uint8_t> prev(64, 0);
  for (double p = 0.0; p < 0.99; p += 0.05) {
    const auto f = select_lowest(s, p)[0];
    for (std::size_t g = 0; g < 64; ++g) EXPECT_GE(f[g], prev[g]);
    prev = f;
  }
}

TEST(Mask, GroupConfidenceIsMemberMean) {
  const LayoutDescriptor l(1, 1, 4, 2);
  RowMatrixf patches(1, 4);
  patches << 1, 3, 10, 20;
  const auto conf = confidence_from_patches(patches, l, ConfidenceSource::kTeacher);
  EXPECT_TRUE(std::isinf(conf.values(0, 0)));
  const auto g = group_confidence(conf, l);
  EXPECT_FLOAT_EQ(g(0, 0), 2.0f);
  EXPECT_FLOAT_EQ(g(0, 1), 15.0f);
}

TEST(Mask, BuildMaskKeepsSpecialsAndEqualLengths) {
  Rng rng(4);
  const LayoutDescriptor l(2, 3, 16, 4);
  RowMatrixf scores(3, l.group_count());
  for (Index i = 0; i < scores.size(); ++i) scores.data()[i] = static_cast<float>(rng.normal());
  const auto m = build_mask(scores, 0.5, l);
  EXPECT_EQ(m.merged_count, 4);
  EXPECT_EQ(m.merged_length, l.total_tokens() - 4 * 3);
  for (const auto& map : m.maps) EXPECT_EQ(map.merged_length, m.merged_length);
}

TEST(Mask, CompileRejectsUnequalCounts) {
  const LayoutDescriptor l(1, 0, 8, 2);
  GroupFlags f{{1, 0, 0, 0}, {1, 1, 0, 0}};
  EXPECT_THROW(compile_mask(f, l), std::invalid_argument);
}

TEST(Mask, SimilarityOfOrthogonalAndParallelGroups) {
  const LayoutDescriptor l(1, 0, 4, 2);
  TokenSequence s(l, 1, 2);
  s.sample(0) << 1, 0, 0, 1,   // orthogonal pair
      2, 2, 1, 1;              // parallel pair
  const auto sim = group_similarity(s);
  EXPECT_NEAR(sim(0, 0), 0.0f, 1e-6);
  EXPECT_NEAR(sim(0, 1), 1.0f, 1e-6);
  const auto m = similarity_mask(s, 0.5);
  EXPECT_EQ(m.flags[0], (std::vector<std::uint8_t>{0, 1}));
}

TEST(Mask, SimilarityMatchesPairwiseLoop) {
  Rng rng(5);
  const LayoutDescriptor l(2, 1, 12, 3);
  TokenSequence s(l, 2, 5);
  for (auto& v : s.tokens.storage()) v = static_cast<float>(rng.normal());
  s.sample(1).row(l.group_index(1).begin).setZero();
  const auto sim = group_similarity(s);
  for (Index b = 0; b < 2; ++b) {
    for (Index g = 0; g < l.group_count(); ++g) {
      const auto r = l.group_index(g);
      double total = 0;
      int pairs = 0;
      for (Index i = r.begin; i < r.end; ++i) {
        for (Index j = i + 1; j < r.end; ++j) {
          const Eigen::RowVectorXd a = s.sample(b).row(i).cast<double>();
          const Eigen::RowVectorXd c = s.sample(b).row(j).cast<double>();
          const double na = a.norm(), nc = c.norm();
          total += (na == 0 || nc == 0) ? 0.0 : a.dot(c) / (na * nc);
          ++pairs;
        }
      }
      EXPECT_NEAR(sim(b, g), total / pairs, 1e-5);
    }
  }
}

TEST(Mask, FlagsTextRoundTrip) {
  GroupFlags f{{1, 0, 1}, {0, 0, 1}};
  std::stringstream buf;
  write_flags(buf, f);
  EXPECT_EQ(buf.str(), "101\n001\n");
  EXPECT_EQ(read_flags(buf), f);
  std::stringstream bad("10x\n");
  EXPECT_THROW(read_flags(bad), std::invalid_argument);
}
