#pragma once

#include <array>
#include <string>
#include <vector>

#include "pba/geometry.hpp"

namespace pba {

struct Camera {
  int id = 0;
  Intrinsics intrinsics;
  Pose pose;  // ground truth, global frame
};

struct ScenePoint {
  int id = 0;
  Vector3d xyz = Vector3d::Zero();
};

struct Observation {
  int camera_id = 0;
  int point_id = 0;
  Vector2d uv = Vector2d::Zero();
};

struct Scene {
  std::vector<Camera> cameras;
  std::vector<ScenePoint> points;
  std::vector<Observation> observations;

  const Camera& camera(int id) const;
  const ScenePoint& point(int id) const;
  // Largest distance between two camera centers.
  double diameter() const;
};

// One image feature inside a relative motion: view index in {0,1,2}, index
// into local_points, observed pixel.
struct MotionFeature {
  int view = 0;
  int point = 0;
  Vector2d uv = Vector2d::Zero();
};

// Three-view relative motion in its own gauge-fixed local frame (first
// camera at identity, unit base between the first two centers).
struct RelativeMotion {
  int id = 0;
  std::array<int, 3> view_ids = {0, 0, 0};
  std::array<Pose, 3> local_poses;  // tagged local(id)
  std::array<Intrinsics, 3> view_intrinsics;
  std::vector<MotionFeature> features;
  std::vector<Vector3d> local_points;
  std::vector<int> global_point_ids;  // same indexing as local_points
  Similarity d_init;                  // initial global -> local transform

  int feature_count() const { return static_cast<int>(local_points.size()); }
};

struct TripletGraph {
  std::vector<int> nodes;  // camera ids
  std::vector<RelativeMotion> motions;
  std::vector<std::pair<int, int>> holdout_edges;  // loop-closure evaluation only

  const RelativeMotion& motion(int id) const;
};

enum class SceneLayout { kRing, kGrid, kLoop };

struct SceneSpec {
  SceneLayout layout = SceneLayout::kRing;
  int n_cameras = 10;
  int n_points = 200;
  double noise_px = 0.0;
  uint64_t seed = 1;
  // Ring/loop focal length. Longer focals tighten the field of view, which
  // couples rotation and translation the way long-focal acquisitions do.
  double focal_px = 1200.0;
};

// Deterministic synthetic scene. Ring: cameras on a circle looking inward at
// a point cloud. Grid: nadir-looking aerial block in serpentine order with an
// 80/60% along-/across-track overlap pattern. Loop: the ring geometry whose
// wrap-around connections are meant to be withheld (see extract_triplets).
Scene generate_scene(const SceneSpec& spec);

// Camera pairs to withhold from triplet extraction for a loop scene:
// every pair linking the first `window` and last `window` cameras.
std::vector<std::pair<int, int>> loop_holdout_pairs(int n_cameras, int window = 2);

enum class TripletStrategy { kSequential, kAllOverlapping };

struct ExtractOptions {
  TripletStrategy strategy = TripletStrategy::kSequential;
  int max_per_edge = 2;  // cap on triplets per camera pair (all-overlapping)
  // Optional perturbation of the local poses away from ground truth.
  double init_rot_noise_deg = 0.0;
  double init_center_noise_frac = 0.0;  // fraction of the local base length
  uint64_t seed = 1;
  std::vector<std::pair<int, int>> holdout_pairs;  // excluded from motions
  int min_features = 30;
};

// Builds the triplet graph. Local poses are the ground-truth poses mapped
// into the per-triplet frame plus optional init noise; d_init comes from
// closed-form alignment of the local onto the global poses. Triplets with
// fewer than min_features points seen in >= 2 of the 3 views are skipped.
TripletGraph extract_triplets(const Scene& scene, const ExtractOptions& opts);

// Ground-truth poses perturbed by a random rotation of angle <= rot_deg and
// a center shift <= trans_frac * scene diameter.
std::vector<Pose> perturb_global_init(const Scene& scene, double rot_deg, double trans_frac,
                                      uint64_t seed);

// Copies per-view intrinsics from the scene into each motion (graph files do
// not carry calibration; the scene does).
void attach_intrinsics(TripletGraph& graph, const Scene& scene);

}  // namespace pba
