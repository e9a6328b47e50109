// Command-line driver for the pointless bundle adjustment pipeline.
//
//   pba synth       synthetic scene generation
//   pba triplets    triplet graph extraction
//   pba localba     per-triplet bundle adjustments -> camera reduced matrices
//   pba globalba    pointless global adjustment
//   pba baseline    classical BA / motion averaging comparators
//   pba eval        reprojection + loop-closure metrics for a pose file
//   pba experiment  full pipeline with all methods and a results.csv
//
// Exit codes: 0 success, 2 validation error, 3 numerical failure.

#include <CLI11.hpp>
#include <cstdio>
#include <unordered_map>

#include "pba/baselines.hpp"
#include "pba/experiment.hpp"
#include "pba/global_ba.hpp"
#include "pba/io.hpp"
#include "pba/local_ba.hpp"
#include "pba/metrics.hpp"
#include "pba/scene.hpp"

namespace {

pba::SceneLayout parse_layout(const std::string& s) {
  if (s == "ring") return pba::SceneLayout::kRing;
  if (s == "grid") return pba::SceneLayout::kGrid;
  if (s == "loop") return pba::SceneLayout::kLoop;
  throw pba::InvalidSpec("unknown layout '" + s + "' (ring|grid|loop)");
}

std::vector<pba::Pose> poses_for_nodes(const std::vector<std::pair<int, pba::Pose>>& file_poses,
                                       const std::vector<int>& nodes) {
  std::unordered_map<int, pba::Pose> by_id;
  for (const auto& [id, p] : file_poses) by_id[id] = p;
  std::vector<pba::Pose> out;
  out.reserve(nodes.size());
  for (int id : nodes) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw pba::ValidationError("pose file is missing camera " + std::to_string(id));
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pointless global bundle adjustment toolkit"};
  app.require_subcommand(1);

  // --- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
  std::string synth_layout = "ring", synth_out = "scene.txt";
  int synth_cams = 20, synth_points = 300;
  double synth_noise = 0.0;
  uint64_t synth_seed = 1;
  synth->add_option("--layout", synth_layout, "ring|grid|loop");
  synth->add_option("--n-cameras", synth_cams);
  synth->add_option("--n-points", synth_points);
  synth->add_option("--noise-px", synth_noise);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out);

  // --- triplets ------------------------------------------------------------
  auto* triplets = app.add_subcommand("triplets", "extract the triplet graph");
  std::string tri_scene = "scene.txt", tri_out = "graph.txt", tri_strategy = "sequential";
  int tri_max_per_edge = 2, tri_holdout_window = 0;
  double tri_rot_noise = 0.0, tri_center_noise = 0.0;
  uint64_t tri_seed = 1;
  triplets->add_option("--scene", tri_scene);
  triplets->add_option("--strategy", tri_strategy, "sequential|all-overlapping");
  triplets->add_option("--max-per-edge", tri_max_per_edge);
  triplets->add_option("--holdout-window", tri_holdout_window,
                       "withhold pairs linking the first/last k cameras");
  triplets->add_option("--init-rot-noise-deg", tri_rot_noise);
  triplets->add_option("--init-center-noise", tri_center_noise);
  triplets->add_option("--seed", tri_seed);
  triplets->add_option("--out", tri_out);

  // --- localba ---------------------------------------------------------------
  auto* localba = app.add_subcommand("localba", "run the per-triplet bundle adjustments");
  std::string lba_scene = "scene.txt", lba_graph = "graph.txt", lba_out = "hessians.txt";
  int lba_iters = 1, lba_q = 10, lba_workers = 2;
  double lba_huber = 1.0, lba_prior_sigma = 1e1;
  localba->add_option("--scene", lba_scene, "scene file (for the intrinsics)");
  localba->add_option("--graph", lba_graph);
  localba->add_option("--iterations", lba_iters);
  localba->add_option("--huber-px", lba_huber);
  localba->add_option("--q", lba_q, "fictitious feature count Q");
  localba->add_option("--prior-sigma", lba_prior_sigma);
  localba->add_option("--workers", lba_workers);
  localba->add_option("--out", lba_out);

  // --- globalba --------------------------------------------------------------
  auto* globalba = app.add_subcommand("globalba", "pointless global bundle adjustment");
  std::string gba_scene = "scene.txt", gba_graph = "graph.txt", gba_hess = "hessians.txt";
  std::string gba_out = "poses_out.txt", gba_report = "report.csv", gba_init_poses;
  int gba_max_iter = 100;
  double gba_init_rot = 2.0, gba_init_trans = 0.02;
  uint64_t gba_seed = 1;
  globalba->add_option("--scene", gba_scene, "scene file (init poses + metrics)");
  globalba->add_option("--graph", gba_graph);
  globalba->add_option("--hessians", gba_hess);
  globalba->add_option("--init-poses", gba_init_poses,
                       "pose file to start from (default: perturbed ground truth)");
  globalba->add_option("--init-rot-deg", gba_init_rot);
  globalba->add_option("--init-trans-frac", gba_init_trans);
  globalba->add_option("--seed", gba_seed);
  globalba->add_option("--max-iter", gba_max_iter);
  globalba->add_option("--out", gba_out);
  globalba->add_option("--report", gba_report);

  // --- baseline --------------------------------------------------------------
  auto* baseline = app.add_subcommand("baseline", "classical BA or motion averaging");
  std::string bl_method = "classical", bl_scene = "scene.txt", bl_graph = "graph.txt";
  std::string bl_hess = "hessians.txt", bl_out = "poses_out.txt", bl_report = "report.csv";
  std::string bl_init_poses;
  int bl_max_iter = 60;
  double bl_init_rot = 2.0, bl_init_trans = 0.02;
  uint64_t bl_seed = 1;
  baseline->add_option("--method", bl_method, "classical|averaging");
  baseline->add_option("--scene", bl_scene);
  baseline->add_option("--graph", bl_graph, "needed for averaging");
  baseline->add_option("--hessians", bl_hess, "needed for averaging");
  baseline->add_option("--init-poses", bl_init_poses);
  baseline->add_option("--init-rot-deg", bl_init_rot);
  baseline->add_option("--init-trans-frac", bl_init_trans);
  baseline->add_option("--seed", bl_seed);
  baseline->add_option("--max-iter", bl_max_iter);
  baseline->add_option("--out", bl_out);
  baseline->add_option("--report", bl_report);

  // --- eval ------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "metrics for a pose file");
  std::string ev_scene = "scene.txt", ev_poses = "poses_out.txt", ev_graph, ev_out;
  eval->add_option("--scene", ev_scene);
  eval->add_option("--poses", ev_poses);
  eval->add_option("--graph", ev_graph, "holdout edges for the loop-closure metric");
  eval->add_option("--out", ev_out, "optional metrics.csv");

  // --- experiment --------------------------------------------------------------
  auto* experiment = app.add_subcommand("experiment", "full pipeline + results.csv");
  std::string xp_layout = "ring", xp_out = "out", xp_methods = "ours,classical,averaging";
  int xp_cams = 40, xp_points = 300, xp_workers = 2, xp_max_iter = 100, xp_local_iters = 3;
  double xp_noise = 0.5, xp_outliers = 0.0, xp_init_rot = 2.0, xp_init_trans = 0.02;
  uint64_t xp_seed = 1;
  experiment->add_option("--layout", xp_layout, "ring|grid|loop");
  experiment->add_option("--n-cameras", xp_cams);
  experiment->add_option("--n-points", xp_points);
  experiment->add_option("--noise-px", xp_noise);
  experiment->add_option("--outlier-frac", xp_outliers);
  experiment->add_option("--init-rot-deg", xp_init_rot);
  experiment->add_option("--init-trans-frac", xp_init_trans);
  experiment->add_option("--seed", xp_seed);
  experiment->add_option("--method", xp_methods, "comma-separated subset of ours,classical,averaging");
  experiment->add_option("--workers", xp_workers);
  experiment->add_option("--max-iter", xp_max_iter);
  experiment->add_option("--local-iterations", xp_local_iters);
  experiment->add_option("--out", xp_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      pba::SceneSpec spec;
      spec.layout = parse_layout(synth_layout);
      spec.n_cameras = synth_cams;
      spec.n_points = synth_points;
      spec.noise_px = synth_noise;
      spec.seed = synth_seed;
      const pba::Scene scene = pba::generate_scene(spec);
      pba::write_scene(scene, synth_out);
      std::printf("wrote %s: %zu cameras, %zu points, %zu observations\n", synth_out.c_str(),
                  scene.cameras.size(), scene.points.size(), scene.observations.size());
    } else if (*triplets) {
      const pba::Scene scene = pba::read_scene(tri_scene);
      pba::ExtractOptions opts;
      if (tri_strategy == "sequential") {
        opts.strategy = pba::TripletStrategy::kSequential;
      } else if (tri_strategy == "all-overlapping") {
        opts.strategy = pba::TripletStrategy::kAllOverlapping;
      } else {
        throw pba::InvalidSpec("unknown strategy '" + tri_strategy + "'");
      }
      opts.max_per_edge = tri_max_per_edge;
      opts.init_rot_noise_deg = tri_rot_noise;
      opts.init_center_noise_frac = tri_center_noise;
      opts.seed = tri_seed;
      if (tri_holdout_window > 0) {
        opts.holdout_pairs =
            pba::loop_holdout_pairs(static_cast<int>(scene.cameras.size()), tri_holdout_window);
      }
      const pba::TripletGraph graph = pba::extract_triplets(scene, opts);
      pba::write_graph(graph, tri_out);
      std::printf("wrote %s: %zu motions over %zu cameras, %zu holdout edges\n", tri_out.c_str(),
                  graph.motions.size(), graph.nodes.size(), graph.holdout_edges.size());
    } else if (*localba) {
      const pba::Scene scene = pba::read_scene(lba_scene);
      pba::TripletGraph graph = pba::read_graph(lba_graph);
      pba::attach_intrinsics(graph, scene);
      pba::LocalBAOptions opts;
      opts.iterations = lba_iters;
      opts.huber_delta_px = lba_huber;
      opts.q_fictitious = lba_q;
      opts.prior_sigma = lba_prior_sigma;
      const auto results = pba::run_local_ba_parallel(graph, opts, lba_workers);
      pba::write_hessians(results, lba_out);
      std::printf("wrote %s: %zu camera reduced matrices\n", lba_out.c_str(), results.size());
    } else if (*globalba) {
      const pba::Scene scene = pba::read_scene(gba_scene);
      pba::TripletGraph graph = pba::read_graph(gba_graph);
      pba::attach_intrinsics(graph, scene);
      const auto locals = pba::read_hessians(gba_hess);
      std::vector<pba::Pose> init;
      if (!gba_init_poses.empty()) {
        init = poses_for_nodes(pba::read_poses(gba_init_poses), graph.nodes);
      } else {
        const auto perturbed = pba::perturb_global_init(scene, gba_init_rot, gba_init_trans,
                                                        gba_seed + 7919);
        std::vector<std::pair<int, pba::Pose>> with_ids;
        for (size_t i = 0; i < scene.cameras.size(); ++i) {
          with_ids.emplace_back(scene.cameras[i].id, perturbed[i]);
        }
        init = poses_for_nodes(with_ids, graph.nodes);
      }
      pba::GlobalBAOptions opts;
      opts.max_iter = gba_max_iter;
      const auto result = pba::solve_global(graph, locals, init, opts);
      pba::write_poses(graph.nodes, result.poses, gba_out);
      pba::write_report_csv(result.report, gba_report);
      std::printf("wrote %s (%d residual dims, final cost %.6g)\n", gba_out.c_str(),
                  result.residual_dim, result.report.final_cost);
    } else if (*baseline) {
      const pba::Scene scene = pba::read_scene(bl_scene);
      std::vector<pba::Pose> init;
      if (!bl_init_poses.empty()) {
        std::vector<int> cam_ids;
        for (const auto& c : scene.cameras) cam_ids.push_back(c.id);
        init = poses_for_nodes(pba::read_poses(bl_init_poses), cam_ids);
      } else {
        init = pba::perturb_global_init(scene, bl_init_rot, bl_init_trans, bl_seed + 7919);
      }
      std::vector<int> cam_ids;
      for (const auto& c : scene.cameras) cam_ids.push_back(c.id);
      if (bl_method == "classical") {
        pba::ClassicalBAOptions opts;
        opts.max_iter = bl_max_iter;
        const auto result = pba::classical_global_ba(scene, init, opts);
        pba::write_poses(cam_ids, result.poses, bl_out);
        pba::write_report_csv(result.report, bl_report);
        std::printf("wrote %s (%d params, final cost %.6g)\n", bl_out.c_str(), result.n_params,
                    result.report.final_cost);
      } else if (bl_method == "averaging") {
        pba::TripletGraph graph = pba::read_graph(bl_graph);
        pba::attach_intrinsics(graph, scene);
        const auto locals = pba::read_hessians(bl_hess);
        std::vector<std::pair<int, pba::Pose>> with_ids;
        for (size_t i = 0; i < scene.cameras.size(); ++i) {
          with_ids.emplace_back(scene.cameras[i].id, init[i]);
        }
        const auto node_init = poses_for_nodes(with_ids, graph.nodes);
        const auto result = pba::averaging_ba(graph, locals, node_init);
        pba::write_poses(graph.nodes, result.poses, bl_out);
        std::printf("wrote %s (%d params)\n", bl_out.c_str(), result.n_params);
      } else {
        throw pba::InvalidSpec("unknown baseline method '" + bl_method + "'");
      }
    } else if (*eval) {
      const pba::Scene scene = pba::read_scene(ev_scene);
      std::vector<int> cam_ids;
      for (const auto& c : scene.cameras) cam_ids.push_back(c.id);
      const auto poses = poses_for_nodes(pba::read_poses(ev_poses), cam_ids);
      const auto stats = pba::rms_reprojection(scene, poses);
      double loop = 0.0;
      bool has_loop = false;
      if (!ev_graph.empty()) {
        const auto graph = pba::read_graph(ev_graph);
        if (!graph.holdout_edges.empty()) {
          loop = pba::loop_closure_error(scene, poses, graph.holdout_edges);
          has_loop = true;
        }
      }
      std::printf("rms_px %.17g over %d observations (%d excluded)\n", stats.rms,
                  stats.n_observations, stats.excluded);
      if (has_loop) std::printf("loop_closure_px %.17g\n", loop);
      if (!ev_out.empty()) {
        FILE* f = std::fopen(ev_out.c_str(), "w");
        if (!f) throw pba::ValidationError("cannot open " + ev_out);
        std::fprintf(f, "rms_px,n_observations,excluded,loop_closure_px\n");
        std::fprintf(f, "%.17g,%d,%d,%.17g\n", stats.rms, stats.n_observations, stats.excluded,
                     loop);
        std::fclose(f);
      }
    } else if (*experiment) {
      pba::ExperimentConfig cfg;
      cfg.scene.layout = parse_layout(xp_layout);
      cfg.scene.n_cameras = xp_cams;
      cfg.scene.n_points = xp_points;
      cfg.scene.noise_px = xp_noise;
      cfg.scene.seed = xp_seed;
      cfg.seed = xp_seed;
      cfg.outlier_fraction = xp_outliers;
      cfg.init_rot_deg = xp_init_rot;
      cfg.init_trans_frac = xp_init_trans;
      cfg.workers = xp_workers;
      cfg.global_max_iter = xp_max_iter;
      cfg.local_iterations = xp_local_iters;
      cfg.out_dir = xp_out;
      cfg.methods.clear();
      std::string rest = xp_methods;
      while (!rest.empty()) {
        const size_t comma = rest.find(',');
        cfg.methods.push_back(pba::parse_method(rest.substr(0, comma)));
        rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
      }
      const auto result = pba::run_experiment(cfg);
      for (const auto& row : result.rows) {
        std::printf("%-10s sigma_init %8.3f  sigma_final %10.6f  n_params %7d  loop %10.6f  "
                    "%.2fs\n",
                    pba::method_name(row.method), row.sigma_init, row.sigma_final, row.n_params,
                    row.loop_closure, row.wall_time_s);
      }
      std::printf("results in %s/results.csv\n", xp_out.c_str());
    }
  } catch (const pba::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const pba::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
