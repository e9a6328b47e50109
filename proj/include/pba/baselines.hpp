#pragma once

#include <vector>

#include "pba/global_ba.hpp"
#include "pba/local_ba.hpp"
#include "pba/scene.hpp"
#include "pba/solver.hpp"

namespace pba {

// Classical point-based global bundle adjustment: all cameras and all
// triangulatable points in one problem, Huber-weighted reprojection
// residuals, gauge fixed by the first pose plus one camera-to-camera
// distance. This is the precision oracle the pointless method is measured
// against.
struct ClassicalBAOptions {
  double huber_delta_px = 1.0;
  int max_iter = 150;
  double cost_tol = 1e-12;
  double grad_tol = 1e-12;
};

struct ClassicalBAResult {
  std::vector<Pose> poses;  // aligned with scene.cameras
  SolveReport report;
  int n_points = 0;  // triangulated points that entered the problem
  int n_params = 0;  // 6 n_cameras + 3 n_points
};

ClassicalBAResult classical_global_ba(const Scene& scene, const std::vector<Pose>& init_poses,
                                      const ClassicalBAOptions& opts = {});

// Pairwise relative rotation constraint r_rel ~= R_j R_i^T.
struct PairRotationConstraint {
  int i = 0;
  int j = 0;
  Rotation r_rel;
  double weight = 1.0;
};

struct RotationAveragingOptions {
  double loss_delta = 0.05;  // radians; IRLS weight is delta / max(delta, ||r||)
  int max_iter = 50;
};

// IRLS rotation averaging: minimizes sum w_ij ||log(r_rel^T R_j R_i^T)||^2
// with Huber IRLS weights, the first camera's rotation held fixed.
// `camera_ids` defines the block order; init aligns with it.
std::vector<Rotation> irls_rotation_averaging(const std::vector<PairRotationConstraint>& constraints,
                                              const std::vector<int>& camera_ids,
                                              const std::vector<Rotation>& init,
                                              const RotationAveragingOptions& opts = {});

// Baseline constraint for translation averaging: C_j - C_i ~= s_g * w where
// w is the relative baseline rotated into the global frame and s_g an
// unknown per-group (per-motion) scale.
struct PairBaselineConstraint {
  int i = 0;
  int j = 0;
  Vector3d w = Vector3d::Zero();
  int scale_group = 0;
  double weight = 1.0;
};

struct TranslationAveragingOptions {
  double huber_delta = 0.0;  // 0 = adaptive (3 x median initial block norm)
  int max_iter = 50;
  int fix_scale_group = 0;  // scale gauge; must exist among the constraints
};

std::vector<Vector3d> translation_averaging(const std::vector<PairBaselineConstraint>& pairs,
                                            const std::vector<int>& camera_ids,
                                            const std::vector<Rotation>& rotations,
                                            const std::vector<Vector3d>& init_centers,
                                            const TranslationAveragingOptions& opts = {});

// Derives the averaging inputs from the same triplets the pointless method
// consumes: each motion contributes its three relative-rotation pairs and,
// given current global rotations, its three rotated baselines (one scale
// group per motion).
std::vector<PairRotationConstraint> rotation_constraints_from_locals(
    const TripletGraph& graph, const std::vector<LocalBAResult>& locals);
std::vector<PairBaselineConstraint> baseline_constraints_from_locals(
    const TripletGraph& graph, const std::vector<LocalBAResult>& locals,
    const std::vector<int>& camera_ids, const std::vector<Rotation>& rotations);

struct AveragingResult {
  std::vector<Pose> poses;  // aligned with graph.nodes
  int n_params = 0;         // 6 n_cameras + S scale unknowns
};

// The Aver_BA comparator: IRLS rotation averaging, then translation
// averaging, no structure refinement.
AveragingResult averaging_ba(const TripletGraph& graph, const std::vector<LocalBAResult>& locals,
                             const std::vector<Pose>& init_poses,
                             const RotationAveragingOptions& rot_opts = {},
                             const TranslationAveragingOptions& trans_opts = {});

}  // namespace pba
