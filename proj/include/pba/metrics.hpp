#pragma once

#include <optional>
#include <vector>

#include "pba/scene.hpp"

namespace pba {

struct TriangulationView {
  Pose pose;
  Intrinsics intrinsics;
  Vector2d uv = Vector2d::Zero();
};

// Linear least-squares intersection followed by a few Gauss-Newton steps on
// the pixel residuals. Returns nullopt for fewer than two views or a
// degenerate intersection.
std::optional<Vector3d> triangulate_point(const std::vector<TriangulationView>& views);

struct ReprojectionStats {
  double rms = 0.0;
  int n_observations = 0;
  int excluded = 0;  // cheirality violations and untriangulatable points
};

// RMS reprojection error of the scene's observations under the given poses
// (aligned with scene.cameras). Points are re-triangulated under the
// evaluated poses first, so point-free methods are measured on equal terms.
ReprojectionStats rms_reprojection(const Scene& scene, const std::vector<Pose>& poses);

// RMS reprojection over features shared by held-out camera pairs only:
// each point is triangulated from the cameras near one end of the trajectory
// and projected into the other end. Throws NoHoldoutFeatures when nothing
// can be evaluated.
double loop_closure_error(const Scene& scene, const std::vector<Pose>& poses,
                          const std::vector<std::pair<int, int>>& holdout_edges);

struct PoseErrors {
  double max_rot_rad = 0.0;
  double max_center = 0.0;
  double rms_rot_rad = 0.0;
  double rms_center = 0.0;
};

// Pose error after the best similarity alignment of the estimates onto the
// references (gauge-free comparison).
PoseErrors compare_poses_aligned(const std::vector<Pose>& estimated,
                                 const std::vector<Pose>& reference);

// Pose error without any alignment (for GCP-anchored solutions).
PoseErrors compare_poses(const std::vector<Pose>& estimated, const std::vector<Pose>& reference);

}  // namespace pba
