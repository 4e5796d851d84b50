#include "come/layout.hpp"

#include <gtest/gtest.h>

using namespace come;

TEST(Layout, GroupRangesSkipSpecials) {
  const LayoutDescriptor l(2, 1, 8, 4);
  EXPECT_EQ(l.total_tokens(), 18);
  EXPECT_EQ(l.group_count(), 4);
  EXPECT_EQ(l.group_index(0), (TokenRange{1, 5}));
  EXPECT_EQ(l.group_index(1), (TokenRange{5, 9}));
  EXPECT_EQ(l.group_index(2), (TokenRange{10, 14}));
  EXPECT_EQ(l.group_index(3), (TokenRange{14, 18}));
  EXPECT_TRUE(l.is_special(0));
  EXPECT_TRUE(l.is_special(9));
  EXPECT_FALSE(l.is_special(10));
}

TEST(Layout, GroupsPartitionImageTokens) {
  const LayoutDescriptor l(3, 2, 12, 3);
  std::vector<int> hits(static_cast<std::size_t>(l.total_tokens()), 0);
  for (Index g = 0; g < l.group_count(); ++g) {
    const auto r = l.group_index(g);
    EXPECT_EQ(r.size(), 3);
    for (Index t = r.begin; t < r.end; ++t) ++hits[static_cast<std::size_t>(t)];
  }
  for (Index t = 0; t < l.total_tokens(); ++t) {
    EXPECT_EQ(hits[static_cast<std::size_t>(t)], l.is_special(t) ? 0 : 1);
  }
}

TEST(Layout, RejectsIndivisiblePatchCount) {
  EXPECT_THROW(LayoutDescriptor(1, 0, 10, 4), DimensionError);
  EXPECT_THROW(LayoutDescriptor(1, 0, 8, 0), DimensionError);
}

TEST(Layout, OutOfRangeQueriesThrow) {
  const LayoutDescriptor l(1, 0, 4, 2);
  EXPECT_THROW(l.group_index(2), std::out_of_range);
  EXPECT_THROW(l.is_special(4), std::out_of_range);
}

TEST(Layout, HeaderRoundTrip) {
  const auto a = LayoutDescriptor(4, 5, 12, 6);
  EXPECT_EQ(a.header(), "frames=4 special=5 patches=12 group=6");
  EXPECT_EQ(LayoutDescriptor::parse_header(a.header()), a);
  const auto b = LayoutDescriptor::grid(2, 1, 3, 4, 2);
  EXPECT_EQ(LayoutDescriptor::parse_header(b.header()), b);
  EXPECT_EQ(b.patches_per_frame(), 12);
}

TEST(Layout, SequenceShapeChecked) {
  const LayoutDescriptor l(1, 1, 4, 2);
  EXPECT_NO_THROW(TokenSequence(l, Tensor({2, 5, 3})));
  EXPECT_THROW(TokenSequence(l, Tensor({2, 6, 3})), DimensionError);
}
