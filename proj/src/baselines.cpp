#include "pba/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <unordered_map>

#include "pba/metrics.hpp"

namespace pba {

namespace {

struct RotationBases {
  std::vector<Matrix3d> base;
};

void check_pair_connectivity(const std::vector<int>& ids, const std::vector<std::pair<int, int>>& edges,
                             const char* who) {
  std::unordered_map<int, int> index;
  for (size_t i = 0; i < ids.size(); ++i) index[ids[i]] = static_cast<int>(i);
  std::vector<int> parent(ids.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  std::vector<uint8_t> touched(ids.size(), 0);
  for (const auto& [a, b] : edges) {
    auto ia = index.find(a), ib = index.find(b);
    if (ia == index.end() || ib == index.end()) {
      throw ValidationError(std::string(who) + ": constraint references unknown camera");
    }
    touched[ia->second] = touched[ib->second] = 1;
    parent[find(ia->second)] = find(ib->second);
  }
  for (size_t i = 0; i < ids.size(); ++i) {
    if (!touched[i] || find(static_cast<int>(i)) != find(0)) {
      throw DisconnectedGraph(std::string(who) + ": constraint graph does not connect all cameras");
    }
  }
}

}  // namespace

ClassicalBAResult classical_global_ba(const Scene& scene, const std::vector<Pose>& init_poses,
                                      const ClassicalBAOptions& opts) {
  const int n = static_cast<int>(scene.cameras.size());
  if (init_poses.size() != scene.cameras.size()) {
    throw ValidationError("classical_global_ba: init_poses must align with scene.cameras");
  }

  std::unordered_map<int, int> cam_index;
  for (int i = 0; i < n; ++i) cam_index[scene.cameras[i].id] = i;

  // Triangulate every point under the init poses; points that fail or end
  // behind a camera are left out of the problem.
  std::map<int, std::vector<const Observation*>> by_point;
  for (const auto& obs : scene.observations) by_point[obs.point_id].push_back(&obs);

  auto state = std::make_shared<RotationBases>();
  state->base.resize(n);
  Problem problem;
  std::vector<int> pose_blocks(n);
  for (int i = 0; i < n; ++i) {
    state->base[i] = init_poses[i].r.matrix();
    Eigen::VectorXd v(6);
    v.head(3).setZero();
    v.tail(3) = init_poses[i].c;
    pose_blocks[i] = problem.add_block(6, v);
    problem.set_rebase(pose_blocks[i], [state, i](Eigen::VectorXd& v) {
      state->base[i] = small_rotation_update(state->base[i], v.head(3));
      v.head(3).setZero();
    });
  }

  int n_points = 0;
  for (const auto& [pt_id, obs_list] : by_point) {
    std::vector<TriangulationView> views;
    for (const Observation* obs : obs_list) {
      const int ci = cam_index.at(obs->camera_id);
      views.push_back({init_poses[ci], scene.cameras[ci].intrinsics, obs->uv});
    }
    const auto p = triangulate_point(views);
    if (!p) continue;

    // Keep only observations with positive depth at the init state.
    std::vector<const Observation*> usable;
    for (const Observation* obs : obs_list) {
      const int ci = cam_index.at(obs->camera_id);
      if ((init_poses[ci].r * (*p - init_poses[ci].c)).z() > 1e-9) usable.push_back(obs);
    }
    if (usable.size() < 2) continue;

    const int pt_block = problem.add_block(3, *p);
    ++n_points;
    for (const Observation* obs : usable) {
      const int ci = cam_index.at(obs->camera_id);
      const Intrinsics intr = scene.cameras[ci].intrinsics;
      const Vector2d uv_obs = obs->uv;
      problem.add_residual(
          {pose_blocks[ci], pt_block}, 2,
          [state, ci, intr, uv_obs](const std::vector<const Eigen::VectorXd*>& params,
                                    Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* jac) {
            ProjectionJacobians pj;
            const Vector2d uv = project_with_jacobians(intr, state->base[ci], params[0]->head(3),
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
          RobustLoss::huber(opts.huber_delta_px));
    }
  }
  if (n_points < 3) {
    throw DegenerateGeometry("classical_global_ba: fewer than 3 triangulatable points");
  }

  // Gauge: first pose constant plus the distance to the farthest camera.
  problem.set_constant(pose_blocks[0]);
  int far_cam = 1;
  double far_d = 0.0;
  for (int i = 1; i < n; ++i) {
    const double d = (init_poses[i].c - init_poses[0].c).norm();
    if (d > far_d) {
      far_d = d;
      far_cam = i;
    }
  }
  if (far_d < 1e-12) throw DegenerateGeometry("classical_global_ba: coincident camera centers");
  {
    const Vector3d c0 = init_poses[0].c;
    const double d0 = far_d;
    const double w = 1e4;
    problem.add_residual({pose_blocks[far_cam]}, 1,
                         [c0, d0, w](const std::vector<const Eigen::VectorXd*>& params,
                                     Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* jac) {
                           const Vector3d c = params[0]->tail(3);
                           const double d = (c - c0).norm();
                           r.resize(1);
                           r[0] = w * (d - d0);
                           if (jac) {
                             (*jac)[0].setZero(1, 6);
                             if (d > 1e-12) {
                               (*jac)[0].block(0, 3, 1, 3) = w * (c - c0).transpose() / d;
                             }
                           }
                           return true;
                         });
  }

  SolveOptions sopts;
  sopts.max_iter = opts.max_iter;
  sopts.cost_tol = opts.cost_tol;
  sopts.grad_tol = opts.grad_tol;

  ClassicalBAResult result;
  result.report = solve(problem, sopts);
  result.n_points = n_points;
  result.n_params = 6 * n + 3 * n_points;
  result.poses.resize(n);
  for (int i = 0; i < n; ++i) {
    result.poses[i].r = Rotation::project(state->base[i]);
    result.poses[i].c = problem.values(pose_blocks[i]).tail(3);
    result.poses[i].frame = Frame::global();
  }
  return result;
}

std::vector<Rotation> irls_rotation_averaging(const std::vector<PairRotationConstraint>& constraints,
                                              const std::vector<int>& camera_ids,
                                              const std::vector<Rotation>& init,
                                              const RotationAveragingOptions& opts) {
  if (camera_ids.size() != init.size() || camera_ids.empty()) {
    throw ValidationError("irls_rotation_averaging: ids and init must align");
  }
  std::vector<std::pair<int, int>> edges;
  edges.reserve(constraints.size());
  for (const auto& c : constraints) edges.emplace_back(c.i, c.j);
  check_pair_connectivity(camera_ids, edges, "irls_rotation_averaging");

  std::unordered_map<int, int> index;
  for (size_t i = 0; i < camera_ids.size(); ++i) index[camera_ids[i]] = static_cast<int>(i);

  auto state = std::make_shared<RotationBases>();
  state->base.resize(camera_ids.size());
  Problem problem;
  std::vector<int> blocks(camera_ids.size());
  for (size_t i = 0; i < camera_ids.size(); ++i) {
    state->base[i] = init[i].matrix();
    blocks[i] = problem.add_block(3, Eigen::Vector3d::Zero());
    problem.set_rebase(blocks[i], [state, i](Eigen::VectorXd& v) {
      state->base[i] = small_rotation_update(state->base[i], v);
      v.setZero();
    });
  }
  problem.set_constant(blocks[0]);  // gauge

  for (const auto& c : constraints) {
    const int bi = index.at(c.i);
    const int bj = index.at(c.j);
    const Matrix3d r_rel_t = c.r_rel.matrix().transpose();
    problem.add_residual(
        {blocks[bi], blocks[bj]}, 3,
        [state, bi, bj, r_rel_t](const std::vector<const Eigen::VectorXd*>& params,
                                 Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* jac) {
          const Vector3d wi = *params[0];
          const Vector3d wj = *params[1];
          const Matrix3d ri_hat = state->base[bi] * exp_so3(wi);
          const Matrix3d rj_hat = state->base[bj] * exp_so3(wj);
          const Vector3d phi = log_so3(r_rel_t * rj_hat * ri_hat.transpose());
          r = phi;
          if (jac) {
            const Matrix3d jr_inv = so3_right_jacobian_inv(phi);
            (*jac)[1] = jr_inv * ri_hat * so3_right_jacobian(wj);
            (*jac)[0] = -jr_inv * ri_hat * so3_right_jacobian(wi);
          }
          return true;
        },
        RobustLoss::huber(opts.loss_delta), c.weight);
  }

  SolveOptions sopts;
  sopts.max_iter = opts.max_iter;
  sopts.cost_tol = 1e-14;
  sopts.grad_tol = 1e-14;
  solve(problem, sopts);

  std::vector<Rotation> out;
  out.reserve(camera_ids.size());
  for (size_t i = 0; i < camera_ids.size(); ++i) out.push_back(Rotation::project(state->base[i]));
  return out;
}

std::vector<Vector3d> translation_averaging(const std::vector<PairBaselineConstraint>& pairs,
                                            const std::vector<int>& camera_ids,
                                            const std::vector<Rotation>& rotations,
                                            const std::vector<Vector3d>& init_centers,
                                            const TranslationAveragingOptions& opts) {
  (void)rotations;  // rotations fix the constraint directions upstream
  if (camera_ids.size() != init_centers.size() || camera_ids.empty()) {
    throw ValidationError("translation_averaging: ids and init must align");
  }
  if (pairs.empty()) throw ValidationError("translation_averaging: no constraints");
  std::vector<std::pair<int, int>> edges;
  for (const auto& p : pairs) edges.emplace_back(p.i, p.j);
  check_pair_connectivity(camera_ids, edges, "translation_averaging");

  std::unordered_map<int, int> index;
  for (size_t i = 0; i < camera_ids.size(); ++i) index[camera_ids[i]] = static_cast<int>(i);

  std::map<int, int> group_block;  // scale group -> block id (filled later)
  std::map<int, std::vector<const PairBaselineConstraint*>> by_group;
  for (const auto& p : pairs) by_group[p.scale_group].push_back(&p);
  if (!by_group.count(opts.fix_scale_group)) {
    throw ScaleUnfixed("translation_averaging: fix_scale_group " +
                       std::to_string(opts.fix_scale_group) + " has no constraints");
  }

  Problem problem;
  std::vector<int> center_blocks(camera_ids.size());
  for (size_t i = 0; i < camera_ids.size(); ++i) {
    center_blocks[i] = problem.add_block(3, init_centers[i]);
  }
  problem.set_constant(center_blocks[0]);  // translation gauge

  // Per-group scale initialised from the init centers (median ratio).
  for (const auto& [group, members] : by_group) {
    std::vector<double> ratios;
    for (const auto* p : members) {
      const double wn = p->w.norm();
      if (wn < 1e-12) continue;
      ratios.push_back((init_centers[index.at(p->j)] - init_centers[index.at(p->i)]).norm() / wn);
    }
    if (ratios.empty()) throw ScaleUnfixed("translation_averaging: degenerate scale group");
    std::sort(ratios.begin(), ratios.end());
    Eigen::VectorXd s(1);
    s[0] = ratios[ratios.size() / 2];
    group_block[group] = problem.add_block(1, s);
  }
  problem.set_constant(group_block.at(opts.fix_scale_group));  // scale gauge

  double delta = opts.huber_delta;
  if (!(delta > 0.0)) {
    std::vector<double> norms;
    for (const auto& p : pairs) {
      const double s = problem.values(group_block.at(p.scale_group))[0];
      norms.push_back((init_centers[index.at(p.j)] - init_centers[index.at(p.i)] - s * p.w).norm());
    }
    std::sort(norms.begin(), norms.end());
    delta = std::max(3.0 * norms[norms.size() / 2], 1e-12);
  }

  for (const auto& p : pairs) {
    const int bi = center_blocks[index.at(p.i)];
    const int bj = center_blocks[index.at(p.j)];
    const int bs = group_block.at(p.scale_group);
    const Vector3d w = p.w;
    problem.add_residual(
        {bi, bj, bs}, 3,
        [w](const std::vector<const Eigen::VectorXd*>& params, Eigen::VectorXd& r,
            std::vector<Eigen::MatrixXd>* jac) {
          const double s = (*params[2])[0];
          r = *params[1] - *params[0] - s * w;
          if (jac) {
            (*jac)[0] = -Matrix3d::Identity();
            (*jac)[1] = Matrix3d::Identity();
            (*jac)[2] = -w;
          }
          return true;
        },
        RobustLoss::huber(delta), p.weight);
  }

  SolveOptions sopts;
  sopts.max_iter = opts.max_iter;
  sopts.cost_tol = 1e-14;
  sopts.grad_tol = 1e-14;
  solve(problem, sopts);

  std::vector<Vector3d> out(camera_ids.size());
  for (size_t i = 0; i < camera_ids.size(); ++i) out[i] = problem.values(center_blocks[i]);
  return out;
}

std::vector<PairRotationConstraint> rotation_constraints_from_locals(
    const TripletGraph& graph, const std::vector<LocalBAResult>& locals) {
  std::unordered_map<int, const LocalBAResult*> by_id;
  for (const auto& l : locals) by_id[l.motion_id] = &l;
  std::vector<PairRotationConstraint> out;
  for (const auto& m : graph.motions) {
    const LocalBAResult* l = by_id.count(m.id) ? by_id.at(m.id) : nullptr;
    if (!l) continue;
    // Local and global relative rotations coincide: r_b r_a^T = R_b R_a^T.
    for (const auto& [ka, kb] : {std::pair<int, int>{0, 1}, {1, 2}, {0, 2}}) {
      PairRotationConstraint c;
      c.i = m.view_ids[ka];
      c.j = m.view_ids[kb];
      c.r_rel = Rotation::project(l->refined_poses[kb].r.matrix() *
                                  l->refined_poses[ka].r.matrix().transpose());
      out.push_back(c);
    }
  }
  return out;
}

std::vector<PairBaselineConstraint> baseline_constraints_from_locals(
    const TripletGraph& graph, const std::vector<LocalBAResult>& locals,
    const std::vector<int>& camera_ids, const std::vector<Rotation>& rotations) {
  std::unordered_map<int, int> index;
  for (size_t i = 0; i < camera_ids.size(); ++i) index[camera_ids[i]] = static_cast<int>(i);
  std::unordered_map<int, const LocalBAResult*> by_id;
  for (const auto& l : locals) by_id[l.motion_id] = &l;

  std::vector<PairBaselineConstraint> out;
  int group = 0;
  for (const auto& m : graph.motions) {
    const LocalBAResult* l = by_id.count(m.id) ? by_id.at(m.id) : nullptr;
    if (!l) continue;
    // Frame rotation alpha from the current global rotations: r_k = R_k a^T.
    Matrix3d acc = Matrix3d::Zero();
    for (int k = 0; k < 3; ++k) {
      acc += l->refined_poses[k].r.matrix().transpose() * rotations[index.at(m.view_ids[k])].matrix();
    }
    Matrix3d alpha;
    try {
      alpha = project_to_so3(acc);
    } catch (const SingularInput&) {
      ++group;
      continue;  // wildly inconsistent motion; skip its baselines
    }
    for (const auto& [ka, kb] : {std::pair<int, int>{0, 1}, {1, 2}, {0, 2}}) {
      PairBaselineConstraint c;
      c.i = m.view_ids[ka];
      c.j = m.view_ids[kb];
      c.w = alpha.transpose() * (l->refined_poses[kb].c - l->refined_poses[ka].c);
      c.scale_group = group;
      out.push_back(c);
    }
    ++group;
  }
  return out;
}

AveragingResult averaging_ba(const TripletGraph& graph, const std::vector<LocalBAResult>& locals,
                             const std::vector<Pose>& init_poses,
                             const RotationAveragingOptions& rot_opts,
                             const TranslationAveragingOptions& trans_opts) {
  if (init_poses.size() != graph.nodes.size()) {
    throw ValidationError("averaging_ba: init_poses must align with graph.nodes");
  }
  std::vector<Rotation> init_rot;
  std::vector<Vector3d> init_centers;
  for (const auto& p : init_poses) {
    init_rot.push_back(p.r);
    init_centers.push_back(p.c);
  }

  const auto rot_constraints = rotation_constraints_from_locals(graph, locals);
  const auto rotations = irls_rotation_averaging(rot_constraints, graph.nodes, init_rot, rot_opts);

  const auto base_constraints =
      baseline_constraints_from_locals(graph, locals, graph.nodes, rotations);
  const auto centers =
      translation_averaging(base_constraints, graph.nodes, rotations, init_centers, trans_opts);

  AveragingResult result;
  result.poses.resize(graph.nodes.size());
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    result.poses[i].r = rotations[i];
    result.poses[i].c = centers[i];
    result.poses[i].frame = Frame::global();
  }
  result.n_params = 6 * static_cast<int>(graph.nodes.size()) +
                    static_cast<int>(graph.motions.size());
  return result;
}

}  // namespace pba
