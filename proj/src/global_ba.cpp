#include "pba/global_ba.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <unordered_map>

namespace pba {

Eigen::VectorXd MotionObservation::raw_delta(const std::array<Pose, 3>& global_poses,
                                             const Similarity& d) const {
  Eigen::VectorXd raw(18);
  for (int k = 0; k < 3; ++k) {
    const Pose pred = apply_similarity(d, global_poses[k], motion_id);
    raw.segment(6 * k, 3) = log_so3(r0[k].transpose() * pred.r.matrix());
    raw.segment(6 * k + 3, 3) = pred.c - c0[k];
  }
  return raw;
}

std::vector<MotionObservation> make_motion_observations(
    const TripletGraph& graph, const std::vector<LocalBAResult>& locals) {
  std::unordered_map<int, const LocalBAResult*> by_id;
  for (const auto& l : locals) by_id[l.motion_id] = &l;
  std::vector<MotionObservation> out;
  out.reserve(graph.motions.size());
  for (const auto& m : graph.motions) {
    auto it = by_id.find(m.id);
    if (it == by_id.end()) {
      throw ValidationError("make_motion_observations: no local result for motion " +
                            std::to_string(m.id));
    }
    const LocalBAResult& l = *it->second;
    MotionObservation obs;
    obs.motion_id = m.id;
    obs.view_ids = m.view_ids;
    for (int k = 0; k < 3; ++k) {
      obs.r0[k] = l.refined_poses[k].r.matrix();
      obs.c0[k] = l.refined_poses[k].c;
    }
    obs.DV = l.D.asDiagonal() * l.V;
    obs.D = l.D;
    out.push_back(std::move(obs));
  }
  return out;
}

Eigen::VectorXd motion_residual(const MotionObservation& obs,
                                const std::array<Pose, 3>& global_poses, const Similarity& d) {
  return obs.DV * obs.raw_delta(global_poses, d);
}

double evaluate_global_cost(const std::vector<MotionObservation>& motions,
                            const std::map<int, Pose>& poses,
                            const std::map<int, Similarity>& similarities) {
  double cost = 0.0;
  for (const auto& obs : motions) {
    std::array<Pose, 3> g;
    for (int k = 0; k < 3; ++k) g[k] = poses.at(obs.view_ids[k]);
    cost += motion_residual(obs, g, similarities.at(obs.motion_id)).squaredNorm();
  }
  return cost;
}

Eigen::VectorXd motion_residual_param(const MotionObservation& obs,
                                      const std::array<Matrix3d, 3>& pose_bases,
                                      const std::array<Eigen::VectorXd, 3>& pose_params,
                                      const Matrix3d& alpha_base,
                                      const Eigen::VectorXd& sim_params,
                                      MotionParamJacobians* jac) {
  const double lambda = std::exp(sim_params[0]);
  const Vector3d omega_alpha = sim_params.segment(1, 3);
  const Vector3d beta = sim_params.tail(3);
  const Matrix3d alpha_hat = alpha_base * exp_so3(omega_alpha);
  const Matrix3d jr_alpha = so3_right_jacobian(omega_alpha);

  Eigen::VectorXd raw(18);
  std::array<Eigen::MatrixXd, 3> raw_dpose;
  Eigen::MatrixXd raw_dsim;
  if (jac) {
    raw_dsim = Eigen::MatrixXd::Zero(18, 7);
    for (auto& m : raw_dpose) m = Eigen::MatrixXd::Zero(18, 6);
  }

  for (int k = 0; k < 3; ++k) {
    const Vector3d omega = pose_params[k].head(3);
    const Vector3d center = pose_params[k].tail(3);
    const Matrix3d r_hat = pose_bases[k] * exp_so3(omega);

    // Rotation part: log(r0^T R alpha^T) in the right-tangent coordinates the
    // local Hessian was built in.
    const Matrix3d rel = obs.r0[k].transpose() * r_hat * alpha_hat.transpose();
    const Vector3d phi = log_so3(rel);
    raw.segment(6 * k, 3) = phi;

    // Translation part: lambda alpha C + beta - c0.
    const Vector3d rotated = alpha_hat * center;
    raw.segment(6 * k + 3, 3) = lambda * rotated + beta - obs.c0[k];

    if (jac) {
      const Matrix3d jr_inv_phi = so3_right_jacobian_inv(phi);
      const Matrix3d jr_omega = so3_right_jacobian(omega);
      raw_dpose[k].block(6 * k, 0, 3, 3) = jr_inv_phi * alpha_hat * jr_omega;
      raw_dpose[k].block(6 * k + 3, 3, 3, 3) = lambda * alpha_hat;
      raw_dsim.block(6 * k, 1, 3, 3) = -jr_inv_phi * alpha_hat * jr_alpha;
      raw_dsim.block(6 * k + 3, 0, 3, 1) = lambda * rotated;
      raw_dsim.block(6 * k + 3, 1, 3, 3) = -lambda * alpha_hat * skew(center) * jr_alpha;
      raw_dsim.block(6 * k + 3, 4, 3, 3) = Matrix3d::Identity();
    }
  }

  if (jac) {
    for (int k = 0; k < 3; ++k) jac->d_pose[k] = obs.DV * raw_dpose[k];
    jac->d_sim = obs.DV * raw_dsim;
  }
  return obs.DV * raw;
}

Vector3d gcp_residual(const GroundControlPoint& gcp, const GroundControlPoint::Sighting& s,
                      const Similarity& d) {
  return std::sqrt(gcp.weight) * (gcp.p_global - d.apply_point_inverse(s.p_local));
}

Vector3d gcp_residual_param(const Vector3d& p_global, const Vector3d& p_local, double rho,
                            const Matrix3d& alpha_base, const Eigen::VectorXd& sim_params,
                            Eigen::MatrixXd* jac) {
  const double inv_lambda = std::exp(-sim_params[0]);
  const Vector3d omega_alpha = sim_params.segment(1, 3);
  const Vector3d beta = sim_params.tail(3);
  const Matrix3d alpha_hat = alpha_base * exp_so3(omega_alpha);
  const double sr = std::sqrt(rho);

  const Vector3d g = inv_lambda * (alpha_hat.transpose() * (p_local - beta));
  if (jac) {
    jac->setZero(3, 7);
    jac->col(0) = sr * g;  // d/d log lambda of -g is +g
    jac->block(0, 1, 3, 3) = -sr * skew(g) * so3_right_jacobian(omega_alpha);
    jac->block(0, 4, 3, 3) = sr * inv_lambda * alpha_hat.transpose();
  }
  return sr * (p_global - g);
}

namespace {

struct GlobalState {
  std::vector<Matrix3d> pose_base;           // per node
  std::vector<Matrix3d> alpha_base;          // per motion
};

}  // namespace

GlobalSolveResult solve_global(const TripletGraph& graph,
                               const std::vector<LocalBAResult>& locals,
                               const std::vector<Pose>& init_poses,
                               const GlobalBAOptions& opts) {
  const int n = static_cast<int>(graph.nodes.size());
  const int s_motions = static_cast<int>(graph.motions.size());
  if (init_poses.size() != graph.nodes.size()) {
    throw ValidationError("solve_global: init_poses must align with graph.nodes");
  }
  if (s_motions == 0) throw DisconnectedGraph("solve_global: graph has no motions");

  std::unordered_map<int, int> node_index;
  for (int i = 0; i < n; ++i) node_index[graph.nodes[i]] = i;

  // Connectivity over motions.
  {
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
      return parent[x] == x ? x : parent[x] = find(parent[x]);
    };
    std::vector<uint8_t> covered(n, 0);
    for (const auto& m : graph.motions) {
      const int a = node_index.at(m.view_ids[0]);
      const int b = node_index.at(m.view_ids[1]);
      const int c = node_index.at(m.view_ids[2]);
      covered[a] = covered[b] = covered[c] = 1;
      parent[find(a)] = find(b);
      parent[find(a)] = find(c);
    }
    for (int i = 0; i < n; ++i) {
      if (!covered[i] || find(i) != find(0)) {
        throw DisconnectedGraph("solve_global: motion graph does not connect all cameras");
      }
    }
  }

  const std::vector<MotionObservation> observations = make_motion_observations(graph, locals);

  auto state = std::make_shared<GlobalState>();
  state->pose_base.resize(n);
  state->alpha_base.resize(s_motions);

  Problem problem;
  std::vector<int> pose_blocks(n);
  for (int i = 0; i < n; ++i) {
    if (init_poses[i].frame.kind != Frame::kGlobal) {
      throw ValidationError("solve_global: init poses must be tagged global");
    }
    state->pose_base[i] = init_poses[i].r.matrix();
    Eigen::VectorXd v(6);
    v.head(3).setZero();
    v.tail(3) = init_poses[i].c;
    pose_blocks[i] = problem.add_block(6, v);
    problem.set_rebase(pose_blocks[i], [state, i](Eigen::VectorXd& v) {
      state->pose_base[i] = small_rotation_update(state->pose_base[i], v.head(3));
      v.head(3).setZero();
    });
  }

  // Similarities re-fit to the init poses (falls back to the stored d_init
  // when the fit is degenerate).
  std::vector<int> sim_blocks(s_motions);
  for (int si = 0; si < s_motions; ++si) {
    const auto& obs = observations[si];
    Similarity d0;
    try {
      std::vector<Pose> gl(3), lo(3);
      for (int k = 0; k < 3; ++k) {
        gl[k] = init_poses[node_index.at(obs.view_ids[k])];
        lo[k].r = Rotation::project(obs.r0[k]);
        lo[k].c = obs.c0[k];
      }
      d0 = fit_similarity_from_poses(gl, lo);
    } catch (const Error&) {
      d0 = graph.motions[si].d_init;
    }
    state->alpha_base[si] = d0.rot().matrix();
    Eigen::VectorXd v(7);
    v[0] = std::log(d0.scale());
    v.segment(1, 3).setZero();
    v.tail(3) = d0.trans();
    sim_blocks[si] = problem.add_block(7, v);
    problem.set_rebase(sim_blocks[si], [state, si](Eigen::VectorXd& v) {
      state->alpha_base[si] = small_rotation_update(state->alpha_base[si], v.segment(1, 3));
      v.segment(1, 3).setZero();
    });
  }

  // Adaptive Huber scale from the initial residual block norms; the units
  // mix radians and lengths through V, so an absolute default is arbitrary.
  double delta = opts.huber_delta;
  if (!(delta > 0.0)) {
    std::vector<double> norms;
    norms.reserve(observations.size());
    for (int si = 0; si < s_motions; ++si) {
      const auto& obs = observations[si];
      std::array<Eigen::VectorXd, 3> pose_params;
      std::array<Matrix3d, 3> bases;
      for (int k = 0; k < 3; ++k) {
        const int ni = node_index.at(obs.view_ids[k]);
        bases[k] = state->pose_base[ni];
        pose_params[k] = problem.values(pose_blocks[ni]);
      }
      norms.push_back(motion_residual_param(obs, bases, pose_params, state->alpha_base[si],
                                            problem.values(sim_blocks[si]))
                          .norm());
    }
    std::sort(norms.begin(), norms.end());
    const double median = norms[norms.size() / 2];
    delta = std::max(3.0 * median, 1e-12);
  }
  const RobustLoss motion_loss =
      opts.fit_reweighting ? RobustLoss::huber_fit(delta) : RobustLoss::huber(delta);

  int residual_dim = 0;
  for (int si = 0; si < s_motions; ++si) {
    const auto& obs = observations[si];
    std::array<int, 3> nodes;
    for (int k = 0; k < 3; ++k) nodes[k] = node_index.at(obs.view_ids[k]);
    problem.add_residual(
        {pose_blocks[nodes[0]], pose_blocks[nodes[1]], pose_blocks[nodes[2]], sim_blocks[si]}, 18,
        [state, obs, nodes, si](const std::vector<const Eigen::VectorXd*>& params,
                                Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* jac) {
          std::array<Matrix3d, 3> bases;
          std::array<Eigen::VectorXd, 3> pose_params;
          for (int k = 0; k < 3; ++k) {
            bases[k] = state->pose_base[nodes[k]];
            pose_params[k] = *params[k];
          }
          MotionParamJacobians mj;
          r = motion_residual_param(obs, bases, pose_params, state->alpha_base[si], *params[3],
                                    jac ? &mj : nullptr);
          if (jac) {
            for (int k = 0; k < 3; ++k) (*jac)[k] = mj.d_pose[k];
            (*jac)[3] = mj.d_sim;
          }
          return true;
        },
        motion_loss);
    residual_dim += 18;
  }

  // GCP residuals constrain the sighted motions' similarities and through
  // them the whole gauge.
  std::unordered_map<int, int> motion_to_sim;
  for (int si = 0; si < s_motions; ++si) motion_to_sim[observations[si].motion_id] = si;
  for (const auto& gcp : opts.gcps) {
    if (gcp.sightings.empty()) {
      throw ValidationError("solve_global: GCP " + std::to_string(gcp.id) + " has no sightings");
    }
    for (const auto& sight : gcp.sightings) {
      auto it = motion_to_sim.find(sight.motion_id);
      if (it == motion_to_sim.end()) {
        throw ValidationError("solve_global: GCP sighting references unknown motion " +
                              std::to_string(sight.motion_id));
      }
      const int si = it->second;
      const Vector3d pg = gcp.p_global;
      const Vector3d pl = sight.p_local;
      const double rho = gcp.weight;
      problem.add_residual(
          {sim_blocks[si]}, 3,
          [state, si, pg, pl, rho](const std::vector<const Eigen::VectorXd*>& params,
                                   Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* jac) {
            Eigen::MatrixXd j;
            r = gcp_residual_param(pg, pl, rho, state->alpha_base[si], *params[0],
                                   jac ? &j : nullptr);
            if (jac) (*jac)[0] = j;
            return true;
          });
      residual_dim += 3;
    }
  }

  switch (opts.gauge) {
    case GaugeMode::kFirstPoseAndScale:
      problem.set_constant(pose_blocks[0]);
      problem.set_constant_coords(sim_blocks[0], {0});
      break;
    case GaugeMode::kSevenSoftPriors: {
      const double w = 1.0 / opts.gauge_prior_sigma;
      const Eigen::VectorXd pose_target = problem.values(pose_blocks[0]);
      problem.add_residual({pose_blocks[0]}, 6,
                           [pose_target, w](const std::vector<const Eigen::VectorXd*>& params,
                                            Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* jac) {
                             r = w * (*params[0] - pose_target);
                             if (jac) (*jac)[0] = w * Eigen::MatrixXd::Identity(6, 6);
                             return true;
                           });
      const double scale_target = problem.values(sim_blocks[0])[0];
      problem.add_residual({sim_blocks[0]}, 1,
                           [scale_target, w](const std::vector<const Eigen::VectorXd*>& params,
                                             Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* jac) {
                             r.resize(1);
                             r[0] = w * ((*params[0])[0] - scale_target);
                             if (jac) {
                               (*jac)[0].setZero(1, 7);
                               (*jac)[0](0, 0) = w;
                             }
                             return true;
                           });
      break;
    }
    case GaugeMode::kNone:
      break;
  }

  SolveOptions sopts;
  sopts.max_iter = opts.max_iter;
  sopts.cost_tol = opts.cost_tol;
  sopts.grad_tol = opts.grad_tol;
  GlobalSolveResult result;
  try {
    result.report = solve(problem, sopts);
  } catch (const NumericalFailure& e) {
    throw GaugeUnfixed(std::string(e.what()) +
                       " (hold the first pose and a scale, add gauge priors, or provide GCPs)");
  }

  result.poses.resize(n);
  for (int i = 0; i < n; ++i) {
    result.poses[i].r = Rotation::project(state->pose_base[i]);
    result.poses[i].c = problem.values(pose_blocks[i]).tail(3);
    result.poses[i].frame = Frame::global();
  }
  for (int si = 0; si < s_motions; ++si) {
    const Eigen::VectorXd v = problem.values(sim_blocks[si]);
    result.similarities.emplace(
        observations[si].motion_id,
        Similarity(std::exp(v[0]), Rotation::project(state->alpha_base[si]), v.tail(3)));
  }
  result.residual_dim = residual_dim;
  result.huber_delta_used = delta;
  return result;
}

}  // namespace pba
