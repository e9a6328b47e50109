#pragma once

#include <Eigen/Core>
#include <array>
#include <limits>

#include "pba/scene.hpp"

namespace pba {

// Weight that simulates a fictitious feature count Q regardless of the real
// count M: gamma = M Q / (M + Q). Each observation is weighted by gamma / M
// so the total observation weight of a motion tends to Q, harmonising
// triplets with very different feature counts.
double attenuation_gamma(int feature_count, int fictitious_count);

struct LocalBAOptions {
  int iterations = 1;  // LM iterations; the pipeline default is a single one
  double huber_delta_px = 1.0;
  int q_fictitious = 10;
  // Soft prior on all 18 extrinsic coordinates (gauge fixing by treating the
  // extrinsics as observed). Infinity disables the priors. The prior weight
  // 1/sigma^2 must clear eigen_floor * lambda_max of the reduced matrix, or
  // the gauge directions get floored away and the global stage inherits a
  // slack direction per motion.
  double prior_sigma = 1e1;
  double eigen_floor = 1e-10;  // eigenvalues below floor * max are zeroed
};

struct LocalBAResult {
  int motion_id = 0;
  std::array<Pose, 3> refined_poses;  // local frame
  Eigen::MatrixXd h;  // 18x18 camera reduced matrix, ordered [w0 c0 w1 c1 w2 c2]
  Eigen::MatrixXd V;  // rows are eigenvectors: h = V^T diag(D^2) V
  Eigen::VectorXd D;  // sqrt eigenvalues, descending, floored at zero
  Eigen::VectorXd gradient;  // reduced gradient (2 J^T W r convention), diagnostic
  double m_const = 0.0;      // constant of the reduced quadratic, diagnostic
  int feature_count = 0;
  double gamma = 0.0;
  int dropped_points = 0;  // points skipped in the Schur reduction
};

struct SchurLayout {
  int camera_dim = 18;
  int num_points = 0;  // 3 coordinates each, stored after the camera block
};

struct SchurReduced {
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  double m = 0.0;
  int dropped_points = 0;
};

// Schur complement onto the camera block, point block by point block:
// h = H_cc - H_cp H_pp^-1 H_pc. Per-point damping eps * I with
// eps = 1e-10 trace(H_pp) / (3 num_points) guards near-degenerate points;
// blocks that stay singular are dropped from the reduction and counted.
SchurReduced reduce_to_camera_hessian(const Eigen::MatrixXd& H_full, const SchurLayout& layout,
                                      const Eigen::VectorXd* G_full = nullptr, double F0 = 0.0);

struct EigenFactors {
  Eigen::MatrixXd V;  // rows are eigenvectors
  Eigen::VectorXd D;  // sqrt eigenvalues, descending
};

// Symmetric eigendecomposition with h = V^T diag(D^2) V; eigenvalues below
// eps_floor * max are floored to zero so their rows contribute nothing.
EigenFactors eigendecompose(const Eigen::MatrixXd& h, double eps_floor = 1e-10);

// Per-triplet bundle adjustment (3 extrinsic blocks + one block per point,
// reprojection residuals weighted by gamma/M and a Huber loss, soft extrinsic
// priors), followed by the Schur reduction and eigendecomposition.
LocalBAResult run_local_ba(const RelativeMotion& motion, const LocalBAOptions& opts = {});

// Runs all motions of a graph on `workers` threads; results in motion order.
std::vector<LocalBAResult> run_local_ba_parallel(const TripletGraph& graph,
                                                 const LocalBAOptions& opts, int workers);

}  // namespace pba
