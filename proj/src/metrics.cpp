#include "come/metrics.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace come {
namespace {

void require_same_shape(const DepthMap& a, const DepthMap& b) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) {
    throw DimensionError("depth maps differ in shape");
  }
}

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace

DepthMap::DepthMap(RowMatrixd v) : values(std::move(v)) {
  valid = values.unaryExpr([](double d) { return std::isfinite(d) && d > 0.0; });
}

DepthMap::DepthMap(RowMatrixd v, PixelMask m) : values(std::move(v)), valid(std::move(m)) {
  if (valid.rows() != values.rows() || valid.cols() != values.cols()) {
    throw DimensionError("validity mask shape differs from depth map");
  }
}

double align_scale(const DepthMap& pred, const DepthMap& gt) {
  require_same_shape(pred, gt);
  double num = 0.0;
  double den = 0.0;
  for (Index i = 0; i < pred.values.size(); ++i) {
    if (!pred.valid.data()[i] || !gt.valid.data()[i]) continue;
    num += gt.values.data()[i] * pred.values.data()[i];
    den += pred.values.data()[i] * pred.values.data()[i];
  }
  if (den <= 0.0) throw DomainError("no jointly valid pixels for scale alignment");
  return num / den;
}

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const PixelMask* exclude) {
  require_same_shape(pred, gt);
  if (exclude != nullptr && (exclude->rows() != gt.values.rows() || exclude->cols() != gt.values.cols())) {
    throw DimensionError("exclusion mask shape differs from depth map");
  }
  double l1 = 0.0;
  Index inliers = 0;
  Index count = 0;
  for (Index i = 0; i < pred.values.size(); ++i) {
    if (!pred.valid.data()[i] || !gt.valid.data()[i]) continue;
    if (exclude != nullptr && exclude->data()[i]) continue;
    const double p = pred.values.data()[i];
    const double g = gt.values.data()[i];
    l1 += std::abs(p - g);
    if (std::max(p / g, g / p) < 1.25) ++inliers;
    ++count;
  }
  if (count == 0) throw DomainError("depth evaluation set is empty");
  return {l1 / static_cast<double>(count),
          static_cast<double>(inliers) / static_cast<double>(count), count};
}

PixelMask merged_pixel_mask(const MergeMask& mask, Index sample, Index frame, Index patch_size) {
  const auto& l = mask.layout;
  if (!l.has_grid()) throw DimensionError("layout has no patch grid");
  if (frame < 0 || frame >= l.frames()) throw std::out_of_range("frame out of range");
  PixelMask out = PixelMask::Zero(l.grid_h() * patch_size, l.grid_w() * patch_size);
  const auto& flags = mask.flags.at(static_cast<std::size_t>(sample));
  for (Index p = 0; p < l.patches_per_frame(); ++p) {
    const Index g = frame * l.groups_per_frame() + p / l.group_size();
    if (!flags[g]) continue;
    const Index py = p / l.grid_w();
    const Index px = p % l.grid_w();
    out.block(py * patch_size, px * patch_size, patch_size, patch_size).setConstant(true);
  }
  return out;
}

Pose relative_pose(const PoseSet& poses, Index i, Index j) {
  const auto n = static_cast<Index>(poses.size());
  if (i < 0 || j < 0 || i >= n || j >= n) throw std::out_of_range("pose index out of range");
  if (i == j) throw std::invalid_argument("relative pose of a frame with itself is excluded");
  const auto& a = poses[i];
  const auto& b = poses[j];
  return {a.rotation.transpose() * b.rotation,
          a.rotation.transpose() * (b.translation - a.translation)};
}

double rotation_angle_deg(const Eigen::Matrix3d& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * kRadToDeg;
}

PoseAuc auc_at_30(const PoseSet& pred, const PoseSet& gt) {
  if (pred.size() != gt.size()) throw DimensionError("pose sets differ in length");
  if (gt.size() < 2) throw DomainError("AUC needs at least two frames");
  std::vector<double> rot_err;
  std::vector<double> trans_err;
  const auto n = static_cast<Index>(gt.size());
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const auto g = relative_pose(gt, i, j);
      const auto p = relative_pose(pred, i, j);
      rot_err.push_back(rotation_angle_deg(g.rotation.transpose() * p.rotation));
      trans_err.push_back((g.translation - p.translation).norm() * 100.0);
    }
  }
  auto auc = [](const std::vector<double>& err) {
    double area = 0.0;
    for (int x = 1; x <= 30; ++x) {
      const auto hits = std::count_if(err.begin(), err.end(), [x](double e) { return e < x; });
      area += static_cast<double>(hits) / static_cast<double>(err.size());
    }
    return area / 30.0;
  };
  return {auc(rot_err), auc(trans_err)};
}

PointCloud Sim3::apply(const PointCloud& x) const {
  return ((scale * rotation) * x).colwise() + translation;
}

Sim3 umeyama_sim3(const PointCloud& src, const PointCloud& dst, const Correspondences& matches) {
  if (matches.size() < 3) throw DegenerateConfiguration("Sim(3) alignment needs 3 correspondences");
  const auto m = static_cast<Index>(matches.size());
  PointCloud x(3, m);
  PointCloud y(3, m);
  for (Index k = 0; k < m; ++k) {
    const auto [i, j] = matches[static_cast<std::size_t>(k)];
    if (i < 0 || i >= src.cols() || j < 0 || j >= dst.cols()) {
      throw std::out_of_range("correspondence index out of range");
    }
    x.col(k) = src.col(i);
    y.col(k) = dst.col(j);
  }
  const Eigen::Vector3d mx = x.rowwise().mean();
  const Eigen::Vector3d my = y.rowwise().mean();
  const PointCloud xc = x.colwise() - mx;
  const PointCloud yc = y.colwise() - my;
  const double var_x = xc.squaredNorm() / static_cast<double>(m);
  const Eigen::Matrix3d cov = yc * xc.transpose() / static_cast<double>(m);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (var_x <= 0.0 || sv(1) <= 1e-12 * std::max(sv(0), 1e-300)) {
    throw DegenerateConfiguration("rank-deficient covariance: points are collinear or coincident");
  }
  Eigen::Vector3d sign = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2) = -1.0;

  Sim3 t;
  t.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  t.scale = sv.dot(sign) / var_x;
  t.translation = my - t.scale * t.rotation * mx;
  return t;
}

Sim3 umeyama_sim3(const PointCloud& src, const PointCloud& dst) {
  if (src.cols() != dst.cols()) throw DimensionError("point clouds differ in size");
  Correspondences matches;
  for (Index i = 0; i < src.cols(); ++i) matches.emplace_back(i, i);
  return umeyama_sim3(src, dst, matches);
}

PoseSet align_poses(const PoseSet& pred, const PoseSet& gt) {
  if (pred.size() != gt.size()) throw DimensionError("pose sets differ in length");
  PointCloud a(3, static_cast<Index>(pred.size()));
  PointCloud b(3, static_cast<Index>(gt.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    a.col(static_cast<Index>(i)) = pred[i].translation;
    b.col(static_cast<Index>(i)) = gt[i].translation;
  }
  const auto sim = umeyama_sim3(a, b);
  PoseSet out;
  for (const auto& p : pred) {
    out.push_back({sim.rotation * p.rotation,
                   sim.scale * sim.rotation * p.translation + sim.translation});
  }
  return out;
}

std::size_t PointGrid::KeyHash::operator()(const Key& k) const {
  auto h = static_cast<std::size_t>(k.x) * 73856093u;
  h ^= static_cast<std::size_t>(k.y) * 19349663u;
  h ^= static_cast<std::size_t>(k.z) * 83492791u;
  return h;
}

PointGrid::PointGrid(const PointCloud& target) : target_(target) {
  if (target.cols() == 0) throw DomainError("nearest-neighbour grid over an empty cloud");
  const Eigen::Vector3d lo = target.rowwise().minCoeff();
  const Eigen::Vector3d hi = target.rowwise().maxCoeff();
  const Eigen::Vector3d extent = hi - lo;
  // Cell edge ~ mean point spacing: the bounding volume split evenly over the
  // points, computed over the non-flat axes only.
  double volume = 1.0;
  int dims = 0;
  for (int a = 0; a < 3; ++a) {
    if (extent(a) > 0.0) {
      volume *= extent(a);
      ++dims;
    }
  }
  cell_ = dims == 0 ? 1.0
                    : std::pow(volume / static_cast<double>(target.cols()), 1.0 / dims);
  if (!(cell_ > 0.0) || !std::isfinite(cell_)) cell_ = 1.0;
  origin_ = lo;
  for (Index i = 0; i < target.cols(); ++i) cells_[cell_of(target.col(i))].push_back(i);
  lo_ = cell_of(lo);
  hi_ = cell_of(hi);
}

PointGrid::Key PointGrid::cell_of(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d c = ((p - origin_) / cell_).array().floor();
  return {static_cast<Index>(c(0)), static_cast<Index>(c(1)), static_cast<Index>(c(2))};
}

double PointGrid::nearest_distance(const Eigen::Vector3d& q) const {
  // Rings of cells at Chebyshev radius r around the query cell, nearest first.
  // Searching stops once the best hit beats everything outside the rings seen;
  // queries far outside the occupied box fall back to a linear scan.
  constexpr Index kMaxRings = 48;
  const Key qc = cell_of(q);
  auto gap = [](Index v, Index lo, Index hi) { return v < lo ? lo - v : (v > hi ? v - hi : 0); };
  const Index first_ring = std::max({gap(qc.x, lo_.x, hi_.x), gap(qc.y, lo_.y, hi_.y),
                                     gap(qc.z, lo_.z, hi_.z)});
  const Index last_ring = std::max({std::abs(qc.x - lo_.x), std::abs(qc.x - hi_.x),
                                    std::abs(qc.y - lo_.y), std::abs(qc.y - hi_.y),
                                    std::abs(qc.z - lo_.z), std::abs(qc.z - hi_.z)});
  double best = std::numeric_limits<double>::infinity();
  auto visit = [&](const Key& k) {
    auto it = cells_.find(k);
    if (it == cells_.end()) return;
    for (Index i : it->second) best = std::min(best, (target_.col(i) - q).norm());
  };
  if (first_ring > kMaxRings) {
    for (Index i = 0; i < target_.cols(); ++i) best = std::min(best, (target_.col(i) - q).norm());
    return best;
  }
  for (Index r = first_ring; r <= last_ring; ++r) {
    if (r > first_ring + kMaxRings) {
      for (Index i = 0; i < target_.cols(); ++i) best = std::min(best, (target_.col(i) - q).norm());
      return best;
    }
    for (Index dx = -r; dx <= r; ++dx) {
      for (Index dy = -r; dy <= r; ++dy) {
        const bool face = std::abs(dx) == r || std::abs(dy) == r;
        for (Index dz = -r; dz <= r; dz += (face ? 1 : std::max<Index>(2 * r, 1))) {
          visit({qc.x + dx, qc.y + dy, qc.z + dz});
        }
      }
    }
    // Any point in ring r + 1 or beyond is at least r cells away from q.
    if (best <= static_cast<double>(r) * cell_) break;
  }
  return best;
}

ChamferResult chamfer_brute_force(const PointCloud& pred, const PointCloud& gt) {
  if (pred.cols() == 0 || gt.cols() == 0) throw DomainError("chamfer over an empty cloud");
  auto directed = [](const PointCloud& from, const PointCloud& to) {
    double sum = 0.0;
    for (Index i = 0; i < from.cols(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < to.cols(); ++j) best = std::min(best, (to.col(j) - from.col(i)).norm());
      sum += best;
    }
    return sum / static_cast<double>(from.cols());
  };
  return {directed(gt, pred), directed(pred, gt)};
}

ChamferResult chamfer(const PointCloud& pred, const PointCloud& gt) {
  if (pred.cols() == 0 || gt.cols() == 0) throw DomainError("chamfer over an empty cloud");
  auto directed = [](const PointCloud& from, const PointCloud& to) {
    const PointGrid grid(to);
    double sum = 0.0;
    for (Index i = 0; i < from.cols(); ++i) sum += grid.nearest_distance(from.col(i));
    return sum / static_cast<double>(from.cols());
  };
  return {directed(gt, pred), directed(pred, gt)};
}

PointCloud read_xyz(std::istream& in) {
  std::vector<Eigen::Vector3d> pts;
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream s(line);
    Eigen::Vector3d p;
    if (!(s >> p(0))) continue;
    if (!(s >> p(1) >> p(2)) || !p.allFinite()) {
      throw std::invalid_argument("malformed point on line " + std::to_string(lineno));
    }
    pts.push_back(p);
  }
  PointCloud cloud(3, static_cast<Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) cloud.col(static_cast<Index>(i)) = pts[i];
  return cloud;
}

void write_xyz(std::ostream& out, const PointCloud& cloud) {
  out.precision(17);
  for (Index i = 0; i < cloud.cols(); ++i) {
    out << cloud(0, i) << ' ' << cloud(1, i) << ' ' << cloud(2, i) << '\n';
  }
}

}  // namespace come
