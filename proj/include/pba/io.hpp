#pragma once

#include <string>
#include <vector>

#include "pba/local_ba.hpp"
#include "pba/scene.hpp"

namespace pba {

// Plain-text, versioned, one record per line, 17 significant digits.
//
// scene.txt   header "PBA-SCENE v1"
//   CAM id f px py r00..r22 cx cy cz
//   PT id x y z
//   OBS cam pt u v
//
// graph.txt   header "PBA-GRAPH v1"; LPOSE/LPT/FEAT/SIM belong to the
//             preceding MOTION record
//   MOTION id v0 v1 v2
//   LPOSE k r00..r22 cx cy cz
//   LPT idx gid x y z
//   FEAT view ptidx u v
//   SIM lambda a00..a22 b0 b1 b2
//   HOLDOUT a b
//
// hessians.txt header "PBA-HESS v1"
//   MOT id M gamma m dropped
//   XV0 k r00..r22 cx cy cz
//   HROW i v0..v17
//   EIGV i v0..v17
//   EIGD v0..v17
//   GRAD v0..v17
//
// poses.txt   header "PBA-POSES v1"
//   POSE id r00..r22 cx cy cz

void write_scene(const Scene& scene, const std::string& path);
Scene read_scene(const std::string& path);

void write_graph(const TripletGraph& graph, const std::string& path);
TripletGraph read_graph(const std::string& path);

void write_hessians(const std::vector<LocalBAResult>& results, const std::string& path);
std::vector<LocalBAResult> read_hessians(const std::string& path);

void write_poses(const std::vector<int>& camera_ids, const std::vector<Pose>& poses,
                 const std::string& path);
std::vector<std::pair<int, Pose>> read_poses(const std::string& path);

}  // namespace pba
