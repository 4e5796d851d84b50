#include "come/metrics.hpp"
#include "come/rng.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace come;

namespace {

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

Eigen::Matrix4d homogeneous(const Pose& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = p.rotation;
  m.topRightCorner<3, 1>() = p.translation;
  return m;
}

double objective(double s, const RowMatrixd& p, const RowMatrixd& g) {
  return (s * p - g).squaredNorm();
}

// Golden-section search on a bracket; independent of the closed form.
double golden_min(const RowMatrixd& p, const RowMatrixd& g, double lo, double hi) {
  const double r = (std::sqrt(5.0) - 1) / 2;
  double a = lo, b = hi;
  for (int i = 0; i < 200; ++i) {
    const double c = b - r * (b - a), d = a + r * (b - a);
    if (objective(c, p, g) < objective(d, p, g)) b = d;
    else a = c;
  }
  return (a + b) / 2;
}

}  // namespace

TEST(Depth, ScaleMatchesGoldenSection) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    RowMatrixd p(5, 7), g(5, 7);
    for (Index i = 0; i < p.size(); ++i) {
      p.data()[i] = rng.uniform(0.5, 5);
      g.data()[i] = 2.5 * p.data()[i] + rng.normal(0, 0.3);
    }
    const double s = align_scale(DepthMap(p), DepthMap(g));
    EXPECT_NEAR(s, golden_min(p, g, 0.0, 10.0), 1e-6);
  }
}

TEST(Depth, InvalidPixelsIgnored) {
  RowMatrixd p(1, 3), g(1, 3);
  p << 1, 2, std::nan("");
  g << 2, 0, 5;
  const DepthMap dp(p), dg(g);
  EXPECT_FALSE(dg.valid(0, 1));
  EXPECT_FALSE(dp.valid(0, 2));
  EXPECT_DOUBLE_EQ(align_scale(dp, dg), 2.0);
  const auto m = depth_metrics(dp, dg);
  EXPECT_EQ(m.pixels, 1);
}

TEST(Depth, DeltaBoundaryCases) {
  RowMatrixd p(1, 4), g(1, 4);
  p << 1.2, 1.3, 1.0, 1.0;
  g << 1.0, 1.0, 1.2, 1.3;
  const auto m = depth_metrics(DepthMap(p), DepthMap(g));
  EXPECT_DOUBLE_EQ(m.delta_125, 0.5);
  EXPECT_NEAR(m.l1, (0.2 + 0.3 + 0.2 + 0.3) / 4, 1e-12);
}

TEST(Depth, MetricsMatchPixelLoopWithExclusion) {
  Rng rng(2);
  RowMatrixd p(6, 6), g(6, 6);
  for (Index i = 0; i < p.size(); ++i) {
    p.data()[i] = rng.uniform(0.5, 3);
    g.data()[i] = rng.uniform(0.5, 3);
  }
  g(0, 0) = 0;
  PixelMask ex = PixelMask::Zero(6, 6);
  ex.row(2).setConstant(true);
  const auto m = depth_metrics(DepthMap(p), DepthMap(g), &ex);
  double l1 = 0;
  int in = 0, n = 0;
  for (Index y = 0; y < 6; ++y)
    for (Index x = 0; x < 6; ++x) {
      if (y == 2 || (y == 0 && x == 0)) continue;
      l1 += std::abs(p(y, x) - g(y, x));
      in += std::max(p(y, x) / g(y, x), g(y, x) / p(y, x)) < 1.25;
      ++n;
    }
  EXPECT_EQ(m.pixels, n);
  EXPECT_NEAR(m.l1, l1 / n, 1e-12);
  EXPECT_DOUBLE_EQ(m.delta_125, static_cast<double>(in) / n);
}

TEST(Depth, MergedPixelMaskCoversFlaggedPatches) {
  const auto l = LayoutDescriptor::grid(1, 1, 2, 2, 2);
  const auto mask = compile_mask({{0, 1}}, l);
  const auto px = merged_pixel_mask(mask, 0, 0, 3);
  EXPECT_EQ(px.rows(), 6);
  EXPECT_EQ(px.count(), 18);
  EXPECT_TRUE(px(5, 5));
  EXPECT_FALSE(px(0, 0));
}

TEST(Pose, RelativePoseMatchesHomogeneousProduct) {
  Rng rng(3);
  PoseSet poses(4);
  for (auto& p : poses) {
    p.rotation = random_rotation(rng);
    p.translation = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  }
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      if (i == j) {
        EXPECT_THROW(relative_pose(poses, i, j), std::invalid_argument);
        continue;
      }
      const Eigen::Matrix4d want = homogeneous(poses[i]).inverse() * homogeneous(poses[j]);
      EXPECT_LT((homogeneous(relative_pose(poses, i, j)) - want).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Pose, RotationAngleClampsNearIdentity) {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity() * (1 + 1e-15);
  EXPECT_EQ(rotation_angle_deg(r), 0.0);
  const Eigen::Matrix3d half = Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  EXPECT_NEAR(rotation_angle_deg(half), 180.0, 1e-9);
}

TEST(Pose, AucSinglePairClosedForm) {
  PoseSet gt(2), pred(2);
  pred[1].translation = Eigen::Vector3d(0.15, 0, 0);
  const auto a = auc_at_30(pred, gt);
  EXPECT_NEAR(a.translation, 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(a.rotation, 1.0);
  // An error exactly on a threshold does not count for that threshold.
  pred[1].translation = Eigen::Vector3d(0.10, 0, 0);
  EXPECT_NEAR(auc_at_30(pred, gt).translation, 20.0 / 30.0, 1e-9);
}

TEST(Umeyama, RoundTripRecoversSimilarity) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const double s = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    const auto r = random_rotation(rng);
    const Eigen::Vector3d t(rng.normal(0, 5), rng.normal(0, 5), rng.normal(0, 5));
    PointCloud x(3, 20);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const PointCloud y = ((s * r) * x).colwise() + t;
    const auto sim = umeyama_sim3(x, y);
    EXPECT_NEAR(sim.scale, s, 1e-9 * s);
    EXPECT_LT((sim.apply(x) - y).cwiseAbs().maxCoeff(), 1e-6);
    const Eigen::Matrix4d ref = Eigen::umeyama(x, y, true);
    EXPECT_LT((ref.topLeftCorner<3, 3>() - sim.scale * sim.rotation).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Umeyama, ReflectionIsNotReturned) {
  Rng rng(5);
  PointCloud x(3, 10);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  PointCloud y = x;
  y.row(0) *= -1;  // mirror image
  const auto sim = umeyama_sim3(x, y);
  EXPECT_NEAR(sim.rotation.determinant(), 1.0, 1e-9);
}

TEST(Umeyama, DegenerateInputsThrow) {
  PointCloud x = PointCloud::Zero(3, 5);
  EXPECT_THROW(umeyama_sim3(x, x), DegenerateConfiguration);
  PointCloud line(3, 5);
  for (Index i = 0; i < 5; ++i) line.col(i) = Eigen::Vector3d(i, 0, 0);
  EXPECT_THROW(umeyama_sim3(line, line), DegenerateConfiguration);
  EXPECT_THROW(umeyama_sim3(line, line, {{0, 0}, {1, 1}}), DegenerateConfiguration);
}

TEST(Chamfer, HandEnumeratedCase) {
  PointCloud pred(3, 1), gt(3, 2);
  pred.col(0) = Eigen::Vector3d(0, 0, 0);
  gt.col(0) = Eigen::Vector3d(1, 0, 0);
  gt.col(1) = Eigen::Vector3d(-3, 0, 0);
  const auto c = chamfer(pred, gt);
  EXPECT_DOUBLE_EQ(c.completeness, 2.0);
  EXPECT_DOUBLE_EQ(c.accuracy, 1.0);
}

TEST(Chamfer, GridMatchesBruteForce) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud a(3, 300), b(3, 200);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal(0, 1 + trial);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-2, 2);
    b.col(0) = Eigen::Vector3d(500, -500, 40);  // far outlier
    const auto fast = chamfer(a, b), slow = chamfer_brute_force(a, b);
    EXPECT_NEAR(fast.completeness, slow.completeness, 1e-12);
    EXPECT_NEAR(fast.accuracy, slow.accuracy, 1e-12);
  }
}

TEST(Chamfer, XyzRoundTrip) {
  std::istringstream in("# header\n1 2 3\n\n4 5 6\n");
  const auto c = read_xyz(in);
  ASSERT_EQ(c.cols(), 2);
  EXPECT_EQ(c(2, 1), 6.0);
  std::stringstream buf;
  write_xyz(buf, c);
  EXPECT_EQ(read_xyz(buf), c);
  std::istringstream bad("1 2\n");
  EXPECT_THROW(read_xyz(bad), std::invalid_argument);
}
