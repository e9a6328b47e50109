#include "pba/local_ba.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <memory>
#include <thread>

#include "pba/solver.hpp"

namespace pba {

double attenuation_gamma(int feature_count, int fictitious_count) {
  if (feature_count < 1 || fictitious_count < 1) {
    throw ValidationError("attenuation_gamma: counts must be >= 1");
  }
  const double m = feature_count, q = fictitious_count;
  return m * q / (m + q);
}

SchurReduced reduce_to_camera_hessian(const Eigen::MatrixXd& H_full, const SchurLayout& layout,
                                      const Eigen::VectorXd* G_full, double F0) {
  const int cd = layout.camera_dim;
  const int np = layout.num_points;
  if (H_full.rows() != cd + 3 * np || H_full.cols() != H_full.rows()) {
    throw ValidationError("reduce_to_camera_hessian: layout does not match H");
  }

  SchurReduced out;
  out.h = H_full.topLeftCorner(cd, cd);
  out.g = G_full ? G_full->head(cd).eval() : Eigen::VectorXd::Zero(cd).eval();
  out.m = F0;

  double trace_pp = 0.0;
  for (int p = 0; p < np; ++p) trace_pp += H_full.block(cd + 3 * p, cd + 3 * p, 3, 3).trace();
  const double eps = np > 0 ? 1e-10 * trace_pp / (3.0 * np) : 0.0;

  for (int p = 0; p < np; ++p) {
    const int o = cd + 3 * p;
    Matrix3d hpp = H_full.block(o, o, 3, 3);
    hpp.diagonal().array() += eps;
    Eigen::LLT<Matrix3d> llt(hpp);
    if (llt.info() != Eigen::Success) {
      ++out.dropped_points;  // point held fixed instead of eliminated
      continue;
    }
    const Eigen::MatrixXd hcp = H_full.block(0, o, cd, 3);
    const Eigen::MatrixXd hpp_inv_hpc = llt.solve(hcp.transpose());
    out.h -= hcp * hpp_inv_hpc;
    if (G_full) {
      const Vector3d gp = G_full->segment(o, 3);
      const Vector3d hpp_inv_gp = llt.solve(gp);
      out.g -= hcp * hpp_inv_gp;
      out.m -= 0.25 * gp.dot(hpp_inv_gp);
    }
  }
  out.h = 0.5 * (out.h + out.h.transpose()).eval();
  return out;
}

EigenFactors eigendecompose(const Eigen::MatrixXd& h, double eps_floor) {
  if ((h - h.transpose()).norm() > 1e-9 * std::max(1.0, h.norm())) {
    throw ValidationError("eigendecompose: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
  const int n = static_cast<int>(h.rows());
  EigenFactors out;
  out.V.resize(n, n);
  out.D.resize(n);
  const double max_ev = std::max(0.0, es.eigenvalues().maxCoeff());
  // Eigen returns ascending eigenvalues; store descending, rows as vectors.
  for (int i = 0; i < n; ++i) {
    const int src = n - 1 - i;
    double ev = es.eigenvalues()(src);
    if (ev < eps_floor * max_ev) ev = 0.0;
    out.D(i) = std::sqrt(std::max(0.0, ev));
    out.V.row(i) = es.eigenvectors().col(src).transpose();
  }
  return out;
}

namespace {

struct PoseState {
  std::array<Matrix3d, 3> base;  // current rotation base per view
};

}  // namespace

LocalBAResult run_local_ba(const RelativeMotion& motion, const LocalBAOptions& opts) {
  if (motion.feature_count() < 30) {
    throw TooFewFeatures("run_local_ba: motion " + std::to_string(motion.id) + " has " +
                         std::to_string(motion.feature_count()) +
                         " features; triplets with fewer than 30 are ignored");
  }

  // Observations that already violate cheirality are skipped up front;
  // points left with fewer than two views drop out of the problem.
  const int raw_points = motion.feature_count();
  std::vector<std::vector<const MotionFeature*>> per_point(raw_points);
  for (const auto& f : motion.features) {
    const Vector3d q =
        motion.local_poses[f.view].r * (motion.local_points[f.point] - motion.local_poses[f.view].c);
    if (q.z() <= 0.0) continue;
    per_point[f.point].push_back(&f);
  }
  std::vector<int> active_points;
  for (int p = 0; p < raw_points; ++p) {
    if (per_point[p].size() >= 2) active_points.push_back(p);
  }
  const int m_eff = static_cast<int>(active_points.size());
  if (m_eff < 30) {
    throw TooFewFeatures("run_local_ba: motion " + std::to_string(motion.id) +
                         " has fewer than 30 usable features after cheirality filtering");
  }

  const double gamma = attenuation_gamma(m_eff, opts.q_fictitious);
  const double obs_weight = gamma / m_eff;
  const bool with_priors = std::isfinite(opts.prior_sigma);

  auto state = std::make_shared<PoseState>();
  Problem problem;
  std::array<int, 3> pose_blocks;
  for (int k = 0; k < 3; ++k) {
    state->base[k] = motion.local_poses[k].r.matrix();
    Eigen::VectorXd init(6);
    init.head(3).setZero();
    init.tail(3) = motion.local_poses[k].c;
    pose_blocks[k] = problem.add_block(6, init);
    problem.set_rebase(pose_blocks[k], [state, k](Eigen::VectorXd& v) {
      state->base[k] = small_rotation_update(state->base[k], v.head(3));
      v.head(3).setZero();
    });
  }
  std::vector<int> point_blocks(raw_points, -1);
  for (int p : active_points) {
    point_blocks[p] = problem.add_block(3, motion.local_points[p]);
  }

  for (int p : active_points) {
    for (const MotionFeature* f : per_point[p]) {
      const int k = f->view;
      const Intrinsics intr = motion.view_intrinsics[k];
      const Vector2d uv_obs = f->uv;
      problem.add_residual(
          {pose_blocks[k], point_blocks[p]}, 2,
          [state, k, intr, uv_obs](const std::vector<const Eigen::VectorXd*>& params,
                                   Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* jac) {
            ProjectionJacobians pj;
            const Vector2d uv = project_with_jacobians(intr, state->base[k], params[0]->head(3),
                                                       params[0]->tail(3), *params[1],
                                                       jac ? &pj : nullptr);
            r = uv - uv_obs;
            if (jac) {
              (*jac)[0].leftCols(3) = pj.d_omega;
              (*jac)[0].rightCols(3) = pj.d_center;
              (*jac)[1] = pj.d_point;
            }
            return true;
          },
          RobustLoss::huber(opts.huber_delta_px), obs_weight);
    }
  }

  if (with_priors) {
    const double inv_sigma = 1.0 / opts.prior_sigma;
    for (int k = 0; k < 3; ++k) {
      const Matrix3d r_init = state->base[k];
      const Vector3d c_init = motion.local_poses[k].c;
      problem.add_residual(
          {pose_blocks[k]}, 6,
          [state, k, r_init, c_init, inv_sigma](const std::vector<const Eigen::VectorXd*>& params,
                                                Eigen::VectorXd& r,
                                                std::vector<Eigen::MatrixXd>* jac) {
            // Accumulated tangent deviation from the initial extrinsics;
            // exactly linear in the block values.
            r.head(3) = inv_sigma * (log_so3(r_init.transpose() * state->base[k]) +
                                     params[0]->head(3));
            r.tail(3) = inv_sigma * (params[0]->tail(3) - c_init);
            if (jac) (*jac)[0] = inv_sigma * Eigen::MatrixXd::Identity(6, 6);
            return true;
          });
    }
  }

  if (opts.iterations > 0) {
    SolveOptions sopts;
    sopts.max_iter = opts.iterations;
    sopts.cost_tol = 1e-14;
    sopts.grad_tol = 1e-16;
    solve(problem, sopts);
  }

  LocalBAResult result;
  result.motion_id = motion.id;
  result.feature_count = m_eff;
  result.gamma = gamma;
  for (int k = 0; k < 3; ++k) {
    result.refined_poses[k].r = Rotation::project(state->base[k]);
    result.refined_poses[k].c = problem.values(pose_blocks[k]).tail(3);
    result.refined_poses[k].frame = Frame::local(motion.id);
  }

  const HessianEval he = evaluate_hessian(problem);
  SchurLayout layout{18, m_eff};
  const SchurReduced red = reduce_to_camera_hessian(he.H, layout, &he.G, he.F0);
  if (red.dropped_points > 0.1 * m_eff) {
    throw DegenerateGeometry("run_local_ba: motion " + std::to_string(motion.id) + ": " +
                             std::to_string(red.dropped_points) +
                             " of " + std::to_string(m_eff) + " point blocks are singular");
  }
  result.h = red.h;
  result.gradient = red.g;
  result.m_const = red.m;
  result.dropped_points = red.dropped_points;

  const EigenFactors ef = eigendecompose(result.h, opts.eigen_floor);
  result.V = ef.V;
  result.D = ef.D;
  return result;
}

std::vector<LocalBAResult> run_local_ba_parallel(const TripletGraph& graph,
                                                 const LocalBAOptions& opts, int workers) {
  const int n = static_cast<int>(graph.motions.size());
  std::vector<LocalBAResult> results(n);
  std::vector<std::string> errors(n);
  workers = std::max(1, std::min(workers, n));

  std::atomic<int> next(0);
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        results[i] = run_local_ba(graph.motions[i], opts);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (int i = 0; i < n; ++i) {
    if (!errors[i].empty()) {
      throw DegenerateGeometry("run_local_ba_parallel: motion " +
                               std::to_string(graph.motions[i].id) + ": " + errors[i]);
    }
  }
  return results;
}

}  // namespace pba
