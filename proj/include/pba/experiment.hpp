#pragma once

#include <string>
#include <vector>

#include "pba/baselines.hpp"
#include "pba/global_ba.hpp"
#include "pba/local_ba.hpp"
#include "pba/metrics.hpp"
#include "pba/scene.hpp"

namespace pba {

enum class Method { kOurs, kClassical, kAveraging };
const char* method_name(Method m);
Method parse_method(const std::string& name);

struct ExperimentConfig {
  SceneSpec scene;
  double init_rot_deg = 2.0;
  double init_trans_frac = 0.02;
  std::vector<Method> methods = {Method::kOurs, Method::kClassical, Method::kAveraging};
  double outlier_fraction = 0.0;  // must stay in [0, 0.22]
  uint64_t seed = 1;
  std::string out_dir;  // empty = no files written
  int workers = 2;
  int local_iterations = 3;
  int global_max_iter = 100;
  int loop_holdout_window = 2;
  // Rings get the redundant graph (several triplets per pair); the serpentine
  // grid keeps the lean sequential chain.
  TripletStrategy strategy = TripletStrategy::kAllOverlapping;
  int max_per_edge = 2;
};

struct InfusionResult {
  TripletGraph graph;
  std::vector<std::pair<int, int>> added;  // (new motion id, source motion id)
};

// Adds ceil(fraction * S) corrupted copies of randomly chosen motions to the
// graph, their local rotations replaced by uniform random rotations. The
// corrupted set is nested across fractions for a fixed seed: raising the
// fraction only appends outliers.
InfusionResult infuse_outliers(const TripletGraph& graph, double fraction, uint64_t seed);

// Clones the local results for the motions added by infuse_outliers and
// swaps in the corrupted rotations, so outlier motions carry the confident
// Hessians of the geometry they were cloned from.
std::vector<LocalBAResult> clone_locals_for_infusion(const std::vector<LocalBAResult>& locals,
                                                     const InfusionResult& infusion);

struct MethodRow {
  Method method = Method::kOurs;
  double sigma_init = 0.0;
  double sigma_final = 0.0;
  int n_params = 0;
  double loop_closure = 0.0;  // 0 when the scene has no holdout edges
  double wall_time_s = 0.0;
  SolveReport report;  // empty for averaging (two inner solves)
};

struct ExperimentResult {
  std::vector<MethodRow> rows;
  Scene scene;
  TripletGraph graph;  // after infusion
  std::vector<Pose> init_poses;
  std::vector<std::vector<Pose>> poses;  // per row, aligned with scene.cameras
};

// Full pipeline: generate, extract triplets, parallel local BAs, optional
// outlier infusion, one global solve per method, metrics. Writes results.csv,
// timings.csv, convergence_<method>.csv, poses_<method>.txt, scene.txt and
// graph.txt into out_dir when set. Everything except wall time is
// deterministic in the seed; wall times therefore live in timings.csv.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

void write_results_csv(const std::vector<MethodRow>& rows, const std::string& path);
void write_timings_csv(const std::vector<MethodRow>& rows, const std::string& path);

}  // namespace pba
