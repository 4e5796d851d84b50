#include "come/predictor.hpp"
#include "come/ranking.hpp"

#include <gtest/gtest.h>

using namespace come;

namespace {

struct Instance {
  PatchGrid grid;
  RowMatrixd x;
  PredictorParams<double> params;
  Vector<double> upstream;
};

Instance random_instance(Rng& rng) {
  Instance in;
  in.grid = {1 + static_cast<Index>(rng.below(2)), 2 + static_cast<Index>(rng.below(3)),
             2 + static_cast<Index>(rng.below(3))};
  const Index c = 3 + static_cast<Index>(rng.below(3));
  const Index latent = 2 + static_cast<Index>(rng.below(4));
  in.x = RowMatrixd(in.grid.patches(), c);
  for (Index i = 0; i < in.x.size(); ++i) in.x.data()[i] = rng.normal();
  in.params = PredictorParams<double>::random(c, latent, rng, 1.5);
  in.params.proj_bias.setRandom();
  in.params.conv_bias(0, 0) = rng.normal();
  in.upstream = Vector<double>(in.grid.patches());
  for (Index i = 0; i < in.upstream.size(); ++i) in.upstream(i) = rng.normal();
  return in;
}

// Direct loops over patches, latent channels and taps.
Vector<double> scalar_forward(const RowMatrixd& x, const PatchGrid& g, const PredictorParams<double>& p) {
  const Index n = x.rows(), latent = p.latent();
  RowMatrixd z(n, latent);
  for (Index i = 0; i < n; ++i)
    for (Index l = 0; l < latent; ++l) {
      double s = p.proj_bias(0, l);
      for (Index c = 0; c < x.cols(); ++c) s += x(i, c) * p.proj(c, l);
      z(i, l) = s;
    }
  auto project = [&](const RowMatrixd& w) {
    RowMatrixd out = RowMatrixd::Zero(n, latent);
    for (Index i = 0; i < n; ++i)
      for (Index l = 0; l < latent; ++l)
        for (Index m = 0; m < latent; ++m) out(i, l) += z(i, m) * w(m, l);
    return out;
  };
  const auto q = project(p.wq), k = project(p.wk), v = project(p.wv);
  RowMatrixd u = z;
  for (Index i = 0; i < n; ++i) {
    std::vector<double> a(static_cast<std::size_t>(n));
    double sum = 0;
    for (Index j = 0; j < n; ++j) {
      double d = 0;
      for (Index l = 0; l < latent; ++l) d += q(i, l) * k(j, l);
      a[static_cast<std::size_t>(j)] = std::exp(d / std::sqrt(static_cast<double>(latent)));
      sum += a[static_cast<std::size_t>(j)];
    }
    for (Index j = 0; j < n; ++j)
      for (Index l = 0; l < latent; ++l) u(i, l) += a[static_cast<std::size_t>(j)] / sum * v(j, l);
  }
  Vector<double> out(n);
  for (Index f = 0; f < g.frames; ++f)
    for (Index y = 0; y < g.height; ++y)
      for (Index xx = 0; xx < g.width; ++xx) {
        double s = p.conv_bias(0, 0);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const Index yy = y + dy, xc = xx + dx;
            if (yy < 0 || yy >= g.height || xc < 0 || xc >= g.width) continue;
            const Index src = (f * g.height + yy) * g.width + xc;
            for (Index l = 0; l < latent; ++l) s += p.conv((dy + 1) * 3 + dx + 1, l) * u(src, l);
          }
        out((f * g.height + y) * g.width + xx) = s;
      }
  return out;
}

double blockwise_relative_error(const RowMatrixd& analytic, const RowMatrixd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / scale;
}

}  // namespace

TEST(Predictor, ForwardMatchesScalarLoops) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_instance(rng);
    const auto got = predictor_forward(in.x, in.grid, in.params);
    const auto want = scalar_forward(in.x, in.grid, in.params);
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Predictor, ConvBiasGradientIsUpstreamSum) {
  Rng rng(2);
  const auto in = random_instance(rng);
  PredictorCache<double> cache;
  predictor_forward(in.x, in.grid, in.params, &cache);
  const auto g = predictor_backward(cache, in.grid, in.params, in.upstream);
  EXPECT_NEAR(g.conv_bias(0, 0), in.upstream.sum(), 1e-12);
}

TEST(Predictor, EveryBlockMatchesFiniteDifferences) {
  Rng rng(3);
  const double eps = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    auto in = random_instance(rng);
    PredictorCache<double> cache;
    predictor_forward(in.x, in.grid, in.params, &cache);
    const auto grad = predictor_backward(cache, in.grid, in.params, in.upstream);
    auto loss = [&](const PredictorParams<double>& p) {
      return in.upstream.dot(predictor_forward(in.x, in.grid, p));
    };
    std::vector<RowMatrixd> numeric;
    in.params.for_each_block([&](std::string_view, RowMatrixd& block) {
      RowMatrixd fd(block.rows(), block.cols());
      for (Index i = 0; i < block.size(); ++i) {
        const double keep = block.data()[i];
        block.data()[i] = keep + eps;
        const double up = loss(in.params);
        block.data()[i] = keep - eps;
        const double down = loss(in.params);
        block.data()[i] = keep;
        fd.data()[i] = (up - down) / (2 * eps);
      }
      numeric.push_back(fd);
    });
    std::size_t b = 0;
    grad.for_each_block([&](std::string_view name, const RowMatrixd& block) {
      EXPECT_LT(blockwise_relative_error(block, numeric[b++]), 1e-3) << name << " trial " << trial;
    });
  }
}

TEST(Predictor, PatchScoresFollowLayoutOrder) {
  Rng rng(4);
  const auto l = LayoutDescriptor::grid(2, 1, 2, 3, 3);
  TokenSequence s(l, 2, 4);
  for (auto& v : s.tokens.storage()) v = static_cast<float>(rng.normal());
  const auto p = PredictorParams<float>::random(4, 5, rng);
  const auto scores = predict_patches(s, p);
  ASSERT_EQ(scores.rows(), 2);
  ASSERT_EQ(scores.cols(), 12);
  const auto one = predictor_forward(image_features<float>(s, 1), patch_grid(l), p);
  EXPECT_EQ(scores.row(1), one.transpose());
  const auto conf = predictor_confidence(s, p);
  EXPECT_TRUE(std::isinf(conf.values(0, 0)));
  EXPECT_EQ(conf.values(1, 1), scores(1, 0));
}

TEST(Predictor, ArchiveRoundTrip) {
  Rng rng(5);
  const auto p = PredictorParams<float>::random(3, 4, rng);
  const auto q = PredictorParams<float>::from_archive(p.to_archive());
  EXPECT_EQ(q.proj, p.proj);
  EXPECT_EQ(q.conv, p.conv);
  EXPECT_EQ(q.conv_bias, p.conv_bias);
}

TEST(Ranking, LossGradientMatchesFiniteDifferences) {
  Rng rng(6);
  const double eps = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(20));
    std::vector<float> teacher(static_cast<std::size_t>(n));
    for (auto& t : teacher) t = static_cast<float>(rng.below(6));
    const auto pairs = all_pairs(teacher);
    if (pairs.empty()) continue;
    Vector<double> s(n);
    for (Index i = 0; i < n; ++i) s(i) = 3 * rng.normal();
    const auto g = ranking_loss_grad(s, pairs);
    Vector<double> fd(n);
    for (Index i = 0; i < n; ++i) {
      auto up = s, down = s;
      up(i) += eps;
      down(i) -= eps;
      fd(i) = (ranking_loss(up, pairs) - ranking_loss(down, pairs)) / (2 * eps);
    }
    EXPECT_LT((g - fd).norm() / std::max(fd.norm(), 1e-12), 1e-3);
  }
}

TEST(Ranking, LossOfPerfectOrderApproachesZero) {
  const std::vector<float> teacher{3, 2, 1};
  const auto pairs = all_pairs(teacher);
  EXPECT_EQ(pairs.size(), 3u);
  Vector<double> s(3);
  s << 100, 50, 0;
  EXPECT_LT(ranking_loss(s, pairs), 1e-20);
  s << 0, 0, 0;
  EXPECT_NEAR(ranking_loss(s, pairs), std::log(2.0), 1e-12);
}

TEST(Ranking, PairsRespectTeacherOrder) {
  Rng rng(7);
  std::vector<float> teacher(200);
  for (auto& t : teacher) t = static_cast<float>(rng.below(10));
  const auto pairs = sample_pairs(teacher, 500, rng);
  EXPECT_LE(pairs.size(), 500u);
  std::set<std::pair<Index, Index>> seen;
  for (const auto& [i, j] : pairs.pairs) {
    EXPECT_GT(teacher[static_cast<std::size_t>(i)], teacher[static_cast<std::size_t>(j)]);
    EXPECT_TRUE(seen.insert({i, j}).second);
  }
  const auto all = sample_pairs(std::vector<float>{1, 2, 3}, 100, rng);
  EXPECT_EQ(all.size(), 3u);
}

TEST(Ranking, MseGradientMatchesFiniteDifferences) {
  Rng rng(8);
  const double eps = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(30));
    Vector<double> pred(n), teacher(n);
    for (Index i = 0; i < n; ++i) {
      pred(i) = rng.normal();
      teacher(i) = rng.normal();
    }
    const auto lg = mse_loss(pred, teacher);
    Vector<double> fd(n);
    for (Index i = 0; i < n; ++i) {
      auto up = pred, down = pred;
      up(i) += eps;
      down(i) -= eps;
      fd(i) = (mse_loss(up, teacher).loss - mse_loss(down, teacher).loss) / (2 * eps);
    }
    EXPECT_LT((lg.grad - fd).norm() / std::max(fd.norm(), 1e-12), 1e-3);
  }
}

TEST(Ranking, MaskIouExamples) {
  GroupFlags a{{1, 1, 0, 0}}, b{{0, 1, 1, 0}}, none{{0, 0, 0, 0}};
  EXPECT_DOUBLE_EQ(mask_iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(mask_iou(none, none), 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(a, none), 0.0);
}
