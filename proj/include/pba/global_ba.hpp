#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <optional>

#include "pba/local_ba.hpp"
#include "pba/scene.hpp"
#include "pba/solver.hpp"

namespace pba {

// One relative-motion observation of the global adjustment: the refined
// local extrinsics x0 and the eigen-factors of the camera reduced matrix.
struct MotionObservation {
  int motion_id = 0;
  std::array<int, 3> view_ids = {0, 0, 0};
  std::array<Matrix3d, 3> r0;  // refined local rotations
  std::array<Vector3d, 3> c0;  // refined local centers
  Eigen::MatrixXd DV;          // D * V, the residual whitening (18x18)
  Eigen::VectorXd D;

  // Raw 18-vector [log(r0^T r_pred); c_pred - c0] per view for d applied to
  // the given global poses; before whitening.
  Eigen::VectorXd raw_delta(const std::array<Pose, 3>& global_poses, const Similarity& d) const;
};

std::vector<MotionObservation> make_motion_observations(const TripletGraph& graph,
                                                        const std::vector<LocalBAResult>& locals);

// Eq.-style whitened residual D V (d(X) - x0); throws NearPiAngle when a
// predicted rotation is half a turn away from its observation.
Eigen::VectorXd motion_residual(const MotionObservation& obs,
                                const std::array<Pose, 3>& global_poses, const Similarity& d);

// Sum of squared motion residual norms over all motions (the plain global
// cost, no robust loss); used for gauge-invariance checks.
double evaluate_global_cost(const std::vector<MotionObservation>& motions,
                            const std::map<int, Pose>& poses,
                            const std::map<int, Similarity>& similarities);

// Parameterized evaluation used inside the solver: pose blocks are
// [omega, C] around rotation bases, similarity blocks [log lambda,
// omega_alpha, beta] around a rotation base for alpha.
struct MotionParamJacobians {
  std::array<Eigen::MatrixXd, 3> d_pose;  // 18x6 each
  Eigen::MatrixXd d_sim;                  // 18x7
};
Eigen::VectorXd motion_residual_param(const MotionObservation& obs,
                                      const std::array<Matrix3d, 3>& pose_bases,
                                      const std::array<Eigen::VectorXd, 3>& pose_params,
                                      const Matrix3d& alpha_base,
                                      const Eigen::VectorXd& sim_params,
                                      MotionParamJacobians* jac = nullptr);

struct GroundControlPoint {
  struct Sighting {
    int motion_id = 0;
    Vector3d p_local = Vector3d::Zero();
  };
  int id = 0;
  Vector3d p_global = Vector3d::Zero();
  std::vector<Sighting> sightings;
  double weight = 1.0;  // rho_gcp
};

// sqrt(rho) (P_global - d^-1(p_local)): zero when the similarity maps the
// global GCP onto its local sighting.
Vector3d gcp_residual(const GroundControlPoint& gcp, const GroundControlPoint::Sighting& s,
                      const Similarity& d);

Vector3d gcp_residual_param(const Vector3d& p_global, const Vector3d& p_local, double rho,
                            const Matrix3d& alpha_base, const Eigen::VectorXd& sim_params,
                            Eigen::MatrixXd* jac = nullptr);

enum class GaugeMode {
  kFirstPoseAndScale,  // hold the first pose and one similarity's scale
  kSevenSoftPriors,    // soft priors on the same seven coordinates
  kNone,               // gauge must come from GCP residuals
};

struct GlobalBAOptions {
  double huber_delta = 0.0;  // 0 = adaptive: 3 x median initial block norm
  int max_iter = 100;
  GaugeMode gauge = GaugeMode::kFirstPoseAndScale;
  // Compose the Huber loss with the IRLS fit-error reweighting (weight is
  // the squared Huber weight); matches the robust scheme of the averaging
  // comparison.
  bool fit_reweighting = true;
  std::vector<GroundControlPoint> gcps;
  double cost_tol = 1e-14;
  double grad_tol = 1e-14;
  double gauge_prior_sigma = 1e-3;
};

struct GlobalSolveResult {
  std::vector<Pose> poses;  // aligned with graph.nodes
  std::map<int, Similarity> similarities;
  SolveReport report;
  int residual_dim = 0;  // 18 S + 3 per GCP sighting
  double huber_delta_used = 0.0;
};

// The pointless global bundle adjustment: one 18-dim residual block per
// motion over the three global poses and that motion's similarity, plus
// optional GCP blocks. Similarities are re-fit to the init poses at start.
// Throws DisconnectedGraph / GaugeUnfixed.
GlobalSolveResult solve_global(const TripletGraph& graph,
                               const std::vector<LocalBAResult>& locals,
                               const std::vector<Pose>& init_poses,  // aligned with graph.nodes
                               const GlobalBAOptions& opts = {});

}  // namespace pba
