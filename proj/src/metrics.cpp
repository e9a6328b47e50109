#include "pba/metrics.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <map>
#include <unordered_map>

namespace pba {

std::optional<Vector3d> triangulate_point(const std::vector<TriangulationView>& views) {
  if (views.size() < 2) return std::nullopt;

  // Linear stage: each view contributes two planes through its ray.
  Matrix3d ata = Matrix3d::Zero();
  Vector3d atb = Vector3d::Zero();
  for (const auto& v : views) {
    const Matrix3d& r = v.pose.r.matrix();
    const double xn = (v.uv.x() - v.intrinsics.principal_point.x()) / v.intrinsics.focal;
    const double yn = (v.uv.y() - v.intrinsics.principal_point.y()) / v.intrinsics.focal;
    const Vector3d a1 = r.row(0).transpose() - xn * r.row(2).transpose();
    const Vector3d a2 = r.row(1).transpose() - yn * r.row(2).transpose();
    ata += a1 * a1.transpose() + a2 * a2.transpose();
    atb += a1 * (a1.dot(v.pose.c)) + a2 * (a2.dot(v.pose.c));
  }
  Eigen::LDLT<Matrix3d> ldlt(ata);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  Vector3d p = ldlt.solve(atb);
  if (!p.allFinite()) return std::nullopt;

  // Refinement on pixel residuals; falls back to the linear solution if a
  // step goes sour.
  for (int iter = 0; iter < 3; ++iter) {
    Matrix3d h = Matrix3d::Zero();
    Vector3d g = Vector3d::Zero();
    bool usable = true;
    for (const auto& v : views) {
      const Vector3d q = v.pose.r * (p - v.pose.c);
      if (q.z() <= 1e-12) {
        usable = false;
        break;
      }
      const double inv_z = 1.0 / q.z();
      Eigen::Matrix<double, 2, 3> d_uv;
      d_uv << inv_z, 0, -q.x() * inv_z * inv_z, 0, inv_z, -q.y() * inv_z * inv_z;
      d_uv *= v.intrinsics.focal;
      const Eigen::Matrix<double, 2, 3> j = d_uv * v.pose.r.matrix();
      const Vector2d res =
          v.intrinsics.focal * Vector2d(q.x() * inv_z, q.y() * inv_z) +
          v.intrinsics.principal_point - v.uv;
      h += j.transpose() * j;
      g += j.transpose() * res;
    }
    if (!usable) break;
    h.diagonal().array() += 1e-12 * h.trace();
    const Vector3d step = h.ldlt().solve(-g);
    if (!step.allFinite()) break;
    p += step;
  }
  return p;
}

namespace {

struct IndexedScene {
  std::unordered_map<int, int> cam_index;
  std::map<int, std::vector<const Observation*>> by_point;

  IndexedScene(const Scene& scene) {
    for (size_t i = 0; i < scene.cameras.size(); ++i) cam_index[scene.cameras[i].id] = int(i);
    for (const auto& obs : scene.observations) by_point[obs.point_id].push_back(&obs);
  }
};

}  // namespace

ReprojectionStats rms_reprojection(const Scene& scene, const std::vector<Pose>& poses) {
  if (poses.size() != scene.cameras.size()) {
    throw ValidationError("rms_reprojection: poses must align with scene.cameras");
  }
  const IndexedScene idx(scene);

  ReprojectionStats stats;
  double sum_sq = 0.0;
  for (const auto& [pt_id, obs_list] : idx.by_point) {
    std::vector<TriangulationView> views;
    views.reserve(obs_list.size());
    for (const Observation* obs : obs_list) {
      const int ci = idx.cam_index.at(obs->camera_id);
      views.push_back({poses[ci], scene.cameras[ci].intrinsics, obs->uv});
    }
    const auto p = triangulate_point(views);
    if (!p) {
      stats.excluded += static_cast<int>(obs_list.size());
      continue;
    }
    for (const Observation* obs : obs_list) {
      const int ci = idx.cam_index.at(obs->camera_id);
      const Vector3d q = poses[ci].r * (*p - poses[ci].c);
      if (q.z() <= 0.0) {
        ++stats.excluded;
        continue;
      }
      const Vector2d uv = scene.cameras[ci].intrinsics.focal * Vector2d(q.x() / q.z(), q.y() / q.z()) +
                          scene.cameras[ci].intrinsics.principal_point;
      sum_sq += (uv - obs->uv).squaredNorm();
      ++stats.n_observations;
    }
  }
  // Per-coordinate RMS: equals the injected pixel noise at ground truth.
  stats.rms = stats.n_observations > 0 ? std::sqrt(sum_sq / (2.0 * stats.n_observations)) : 0.0;
  return stats;
}

double loop_closure_error(const Scene& scene, const std::vector<Pose>& poses,
                          const std::vector<std::pair<int, int>>& holdout_edges) {
  if (holdout_edges.empty()) {
    throw NoHoldoutFeatures("loop_closure_error: no holdout edges");
  }
  if (poses.size() != scene.cameras.size()) {
    throw ValidationError("loop_closure_error: poses must align with scene.cameras");
  }
  const IndexedScene idx(scene);
  constexpr int kSideWindow = 3;  // cameras used to triangulate one side

  double sum_sq = 0.0;
  int count = 0;
  auto accumulate_direction = [&](int side_cam_idx, int target_cam_idx) {
    // Features common to both cameras, triangulated from the side camera's
    // neighbourhood and reprojected into the target.
    for (const auto& [pt_id, obs_list] : idx.by_point) {
      const Observation* target_obs = nullptr;
      bool seen_by_side = false;
      for (const Observation* obs : obs_list) {
        const int ci = idx.cam_index.at(obs->camera_id);
        if (ci == target_cam_idx) target_obs = obs;
        if (ci == side_cam_idx) seen_by_side = true;
      }
      if (!target_obs || !seen_by_side) continue;

      std::vector<TriangulationView> views;
      for (const Observation* obs : obs_list) {
        const int ci = idx.cam_index.at(obs->camera_id);
        if (std::abs(ci - side_cam_idx) <= kSideWindow) {
          views.push_back({poses[ci], scene.cameras[ci].intrinsics, obs->uv});
        }
      }
      if (views.size() < 2) continue;
      const auto p = triangulate_point(views);
      if (!p) continue;
      const Vector3d q = poses[target_cam_idx].r * (*p - poses[target_cam_idx].c);
      if (q.z() <= 0.0) continue;
      const auto& intr = scene.cameras[target_cam_idx].intrinsics;
      const Vector2d uv =
          intr.focal * Vector2d(q.x() / q.z(), q.y() / q.z()) + intr.principal_point;
      sum_sq += (uv - target_obs->uv).squaredNorm();
      ++count;
    }
  };

  for (const auto& [a, b] : holdout_edges) {
    const int ia = idx.cam_index.at(a);
    const int ib = idx.cam_index.at(b);
    accumulate_direction(ia, ib);
    accumulate_direction(ib, ia);
  }
  if (count == 0) {
    throw NoHoldoutFeatures("loop_closure_error: holdout edges share no usable features");
  }
  return std::sqrt(sum_sq / (2.0 * count));
}

namespace {

PoseErrors pose_errors(const std::vector<Pose>& est, const std::vector<Pose>& ref) {
  PoseErrors e;
  double sr = 0.0, sc = 0.0;
  for (size_t k = 0; k < est.size(); ++k) {
    const Matrix3d rel = est[k].r.matrix().transpose() * ref[k].r.matrix();
    const double rot = log_so3(rel).norm();
    const double cen = (est[k].c - ref[k].c).norm();
    e.max_rot_rad = std::max(e.max_rot_rad, rot);
    e.max_center = std::max(e.max_center, cen);
    sr += rot * rot;
    sc += cen * cen;
  }
  e.rms_rot_rad = std::sqrt(sr / est.size());
  e.rms_center = std::sqrt(sc / est.size());
  return e;
}

}  // namespace

PoseErrors compare_poses(const std::vector<Pose>& estimated, const std::vector<Pose>& reference) {
  if (estimated.size() != reference.size() || estimated.empty()) {
    throw ValidationError("compare_poses: pose lists must match");
  }
  return pose_errors(estimated, reference);
}

PoseErrors compare_poses_aligned(const std::vector<Pose>& estimated,
                                 const std::vector<Pose>& reference) {
  if (estimated.size() != reference.size() || estimated.size() < 2) {
    throw ValidationError("compare_poses_aligned: need >= 2 pose pairs");
  }
  const Similarity g = fit_similarity_from_poses(estimated, reference);
  std::vector<Pose> aligned;
  aligned.reserve(estimated.size());
  for (const auto& p : estimated) {
    Pose q = apply_similarity(g, p);
    q.frame = Frame::global();
    aligned.push_back(q);
  }
  return pose_errors(aligned, reference);
}

}  // namespace pba
