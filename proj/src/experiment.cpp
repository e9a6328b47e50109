#include "pba/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <unordered_map>

#include "pba/io.hpp"
#include "pba/rng.hpp"
#include "pba/solver.hpp"

namespace pba {

const char* method_name(Method m) {
  switch (m) {
    case Method::kOurs:
      return "ours";
    case Method::kClassical:
      return "classical";
    case Method::kAveraging:
      return "averaging";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "ours") return Method::kOurs;
  if (name == "classical") return Method::kClassical;
  if (name == "averaging") return Method::kAveraging;
  throw InvalidSpec("unknown method '" + name + "' (ours|classical|averaging)");
}

InfusionResult infuse_outliers(const TripletGraph& graph, double fraction, uint64_t seed) {
  if (fraction < 0.0 || fraction > 0.22) {
    throw InvalidSpec("infuse_outliers: fraction must be in [0, 0.22]");
  }
  InfusionResult out;
  out.graph = graph;
  const int s = static_cast<int>(graph.motions.size());
  if (s == 0 || fraction == 0.0) return out;

  const int n_add = static_cast<int>(std::ceil(fraction * s));

  // Fixed permutation per seed; taking a prefix keeps corruption sets nested
  // across fractions.
  Rng rng(seed ^ 0x0071a1e55ull);
  std::vector<int> order(s);
  std::iota(order.begin(), order.end(), 0);
  for (int i = s - 1; i > 0; --i) {
    std::swap(order[i], order[rng.uniform_int(i + 1)]);
  }

  int max_id = 0;
  for (const auto& m : graph.motions) max_id = std::max(max_id, m.id);

  for (int k = 0; k < n_add; ++k) {
    const RelativeMotion& src = graph.motions[order[k % s]];
    RelativeMotion bad = src;
    bad.id = max_id + 1 + k;
    Rng mrng = rng.fork(uint64_t(k) * 1315423911ull + 17);
    for (int v = 0; v < 3; ++v) {
      bad.local_poses[v].r = Rotation::from_matrix(mrng.rotation());
      bad.local_poses[v].frame = Frame::local(bad.id);
    }
    out.added.emplace_back(bad.id, src.id);
    out.graph.motions.push_back(std::move(bad));
  }
  return out;
}

std::vector<LocalBAResult> clone_locals_for_infusion(const std::vector<LocalBAResult>& locals,
                                                     const InfusionResult& infusion) {
  std::unordered_map<int, const LocalBAResult*> by_id;
  for (const auto& l : locals) by_id[l.motion_id] = &l;
  std::unordered_map<int, const RelativeMotion*> motion_by_id;
  for (const auto& m : infusion.graph.motions) motion_by_id[m.id] = &m;

  std::vector<LocalBAResult> out = locals;
  for (const auto& [new_id, src_id] : infusion.added) {
    auto it = by_id.find(src_id);
    if (it == by_id.end()) {
      throw ValidationError("clone_locals_for_infusion: missing local result for motion " +
                            std::to_string(src_id));
    }
    LocalBAResult clone = *it->second;
    clone.motion_id = new_id;
    const RelativeMotion& bad = *motion_by_id.at(new_id);
    for (int k = 0; k < 3; ++k) {
      clone.refined_poses[k].r = bad.local_poses[k].r;  // corrupted rotations
      clone.refined_poses[k].frame = Frame::local(new_id);
    }
    out.push_back(std::move(clone));
  }
  return out;
}

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.outlier_fraction < 0.0 || cfg.outlier_fraction > 0.22) {
    throw InvalidSpec("run_experiment: outlier_fraction must be in [0, 0.22]");
  }
  if (cfg.methods.empty()) throw InvalidSpec("run_experiment: no methods selected");

  ExperimentResult result;
  result.scene = generate_scene(cfg.scene);
  const Scene& scene = result.scene;
  const int n = static_cast<int>(scene.cameras.size());

  ExtractOptions ex;
  ex.strategy = cfg.strategy;
  ex.max_per_edge = cfg.max_per_edge;
  ex.seed = cfg.seed;
  if (cfg.scene.layout == SceneLayout::kLoop) {
    ex.holdout_pairs = loop_holdout_pairs(n, cfg.loop_holdout_window);
  }
  TripletGraph graph = extract_triplets(scene, ex);

  result.init_poses = perturb_global_init(scene, cfg.init_rot_deg, cfg.init_trans_frac,
                                          cfg.seed + 7919);

  LocalBAOptions lopts;
  lopts.iterations = cfg.local_iterations;
  std::vector<LocalBAResult> locals = run_local_ba_parallel(graph, lopts, cfg.workers);

  if (cfg.outlier_fraction > 0.0) {
    InfusionResult infusion = infuse_outliers(graph, cfg.outlier_fraction, cfg.seed);
    locals = clone_locals_for_infusion(locals, infusion);
    graph = std::move(infusion.graph);
  }
  result.graph = graph;

  const double sigma_init = rms_reprojection(scene, result.init_poses).rms;
  const bool has_holdout = !graph.holdout_edges.empty();
  const int s_motions = static_cast<int>(graph.motions.size());

  // graph.nodes carries the same camera ids as scene.cameras (in order) for
  // generated scenes; keep an explicit mapping anyway.
  std::unordered_map<int, int> node_to_cam;
  for (size_t i = 0; i < scene.cameras.size(); ++i) node_to_cam[scene.cameras[i].id] = int(i);
  auto to_camera_order = [&](const std::vector<Pose>& node_poses) {
    std::vector<Pose> out(scene.cameras.size());
    for (size_t i = 0; i < graph.nodes.size(); ++i) {
      out[node_to_cam.at(graph.nodes[i])] = node_poses[i];
    }
    return out;
  };
  std::vector<Pose> init_by_nodes(graph.nodes.size());
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    init_by_nodes[i] = result.init_poses[node_to_cam.at(graph.nodes[i])];
  }

  for (Method m : cfg.methods) {
    MethodRow row;
    row.method = m;
    row.sigma_init = sigma_init;
    const double t0 = now_seconds();
    std::vector<Pose> poses;
    switch (m) {
      case Method::kOurs: {
        GlobalBAOptions gopts;
        gopts.max_iter = cfg.global_max_iter;
        GlobalSolveResult g = solve_global(graph, locals, init_by_nodes, gopts);
        poses = to_camera_order(g.poses);
        row.report = g.report;
        row.n_params = 6 * n + 7 * s_motions;
        break;
      }
      case Method::kClassical: {
        ClassicalBAOptions copts;
        ClassicalBAResult c = classical_global_ba(scene, result.init_poses, copts);
        poses = c.poses;
        row.report = c.report;
        row.n_params = c.n_params;
        break;
      }
      case Method::kAveraging: {
        AveragingResult a = averaging_ba(graph, locals, init_by_nodes);
        poses = to_camera_order(a.poses);
        row.n_params = a.n_params;
        break;
      }
    }
    row.wall_time_s = now_seconds() - t0;
    row.sigma_final = rms_reprojection(scene, poses).rms;
    row.loop_closure = has_holdout ? loop_closure_error(scene, poses, graph.holdout_edges) : 0.0;
    result.rows.push_back(row);
    result.poses.push_back(std::move(poses));
  }

  if (!cfg.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string dir = cfg.out_dir + "/";
    write_results_csv(result.rows, dir + "results.csv");
    write_timings_csv(result.rows, dir + "timings.csv");
    write_scene(scene, dir + "scene.txt");
    write_graph(graph, dir + "graph.txt");
    std::vector<int> cam_ids;
    for (const auto& c : scene.cameras) cam_ids.push_back(c.id);
    for (size_t i = 0; i < result.rows.size(); ++i) {
      const std::string name = method_name(result.rows[i].method);
      write_poses(cam_ids, result.poses[i], dir + "poses_" + name + ".txt");
      write_report_csv(result.rows[i].report, dir + "convergence_" + name + ".csv");
    }
  }
  return result;
}

void write_results_csv(const std::vector<MethodRow>& rows, const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ValidationError("write_results_csv: cannot open " + path);
  std::fprintf(f, "method,sigma_init_px,sigma_final_px,n_params,loop_closure_px\n");
  for (const auto& r : rows) {
    std::fprintf(f, "%s,%.17g,%.17g,%d,%.17g\n", method_name(r.method), r.sigma_init,
                 r.sigma_final, r.n_params, r.loop_closure);
  }
  std::fclose(f);
}

void write_timings_csv(const std::vector<MethodRow>& rows, const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ValidationError("write_timings_csv: cannot open " + path);
  std::fprintf(f, "method,wall_time_s\n");
  for (const auto& r : rows) {
    std::fprintf(f, "%s,%.6f\n", method_name(r.method), r.wall_time_s);
  }
  std::fclose(f);
}

}  // namespace pba
