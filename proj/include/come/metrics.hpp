// Evaluation metrics: scale-aligned depth L1 / delta_1.25, relative-pose
// AUC@30 after Sim(3) alignment, and Chamfer completeness / accuracy.
#pragma once

#include "come/mask.hpp"

#include <Eigen/Geometry>

#include <iosfwd>
#include <unordered_map>
#include <utility>
#include <vector>

namespace come {

using PixelMask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Depth in meters; only entries with `valid` set take part in any metric.
struct DepthMap {
  RowMatrixd values;
  PixelMask valid;

  DepthMap() = default;
  /// Marks every positive, finite entry valid.
  explicit DepthMap(RowMatrixd v);
  DepthMap(RowMatrixd v, PixelMask m);
};

/// Least-squares scale s minimising sum (s * pred - gt)^2 over jointly valid pixels.
double align_scale(const DepthMap& pred, const DepthMap& gt);

struct DepthMetrics {
  double l1 = 0.0;
  double delta_125 = 0.0;
  Index pixels = 0;
};

/// L1 and delta_1.25 over jointly valid pixels not set in `exclude`.
DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt,
                           const PixelMask* exclude = nullptr);

/// Pixels covered by merged groups of one frame; each patch spans patch_size^2 pixels.
PixelMask merged_pixel_mask(const MergeMask& mask, Index sample, Index frame, Index patch_size);

/// Camera-to-world pose: x_world = rotation * x_cam + translation (meters).
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};
using PoseSet = std::vector<Pose>;

/// Frame j expressed in frame i's coordinates: inverse(T_i) * T_j.
Pose relative_pose(const PoseSet& poses, Index i, Index j);

/// Geodesic angle of a rotation, degrees. The cosine is clamped to [-1, 1].
double rotation_angle_deg(const Eigen::Matrix3d& r);

struct PoseAuc {
  double rotation = 0.0;     // AUC^r_30, degrees
  double translation = 0.0;  // AUC^t_30, centimeters
};

/// Inlier fraction over unordered pairs, averaged at thresholds 1..30 (error < x).
PoseAuc auc_at_30(const PoseSet& pred, const PoseSet& gt);

/// 3 x N point cloud, meters.
using PointCloud = Eigen::Matrix3Xd;

class DegenerateConfiguration : public DomainError {
 public:
  using DomainError::DomainError;
};

struct Sim3 {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  PointCloud apply(const PointCloud& x) const;
};

using Correspondences = std::vector<std::pair<Index, Index>>;

/// Closed-form similarity minimising sum |s R x + t - y|^2 over the correspondences.
Sim3 umeyama_sim3(const PointCloud& src, const PointCloud& dst, const Correspondences& matches);
/// Column i of src corresponds to column i of dst.
Sim3 umeyama_sim3(const PointCloud& src, const PointCloud& dst);

/// Aligns predicted camera centres onto ground truth and re-expresses every predicted pose.
PoseSet align_poses(const PoseSet& pred, const PoseSet& gt);

struct ChamferResult {
  double completeness = 0.0;  // mean over gt of the nearest prediction
  double accuracy = 0.0;      // mean over pred of the nearest ground-truth point
};

/// Nearest-neighbour distances via a uniform hash grid over `target`.
class PointGrid {
 public:
  explicit PointGrid(const PointCloud& target);
  /// Distance from q to the closest target point.
  double nearest_distance(const Eigen::Vector3d& q) const;

 private:
  struct Key {
    Index x, y, z;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  Key cell_of(const Eigen::Vector3d& p) const;

  const PointCloud& target_;
  double cell_ = 1.0;
  Eigen::Vector3d origin_;
  Key lo_{}, hi_{};
  std::unordered_map<Key, std::vector<Index>, KeyHash> cells_;
};

ChamferResult chamfer(const PointCloud& pred, const PointCloud& gt);
ChamferResult chamfer_brute_force(const PointCloud& pred, const PointCloud& gt);

/// Whitespace-separated "x y z" per line; blank lines and '#' comments skipped.
PointCloud read_xyz(std::istream& in);
void write_xyz(std::ostream& out, const PointCloud& cloud);

}  // namespace come
