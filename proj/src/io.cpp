#include "pba/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace pba {

namespace {

class LineWriter {
 public:
  explicit LineWriter(const std::string& path) : f_(std::fopen(path.c_str(), "w")), path_(path) {
    if (!f_) throw ValidationError("cannot open for writing: " + path);
  }
  ~LineWriter() {
    if (f_) std::fclose(f_);
  }
  LineWriter(const LineWriter&) = delete;
  LineWriter& operator=(const LineWriter&) = delete;

  void header(const char* magic) { std::fprintf(f_, "%s v1\n", magic); }
  void tag(const char* t) { std::fprintf(f_, "%s", t); }
  void num(double v) { std::fprintf(f_, " %.17g", v); }
  void num(int v) { std::fprintf(f_, " %d", v); }
  void mat(const Matrix3d& m) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) num(m(r, c));
    }
  }
  void vec(const Vector3d& v) {
    num(v.x());
    num(v.y());
    num(v.z());
  }
  void end() { std::fprintf(f_, "\n"); }

 private:
  FILE* f_;
  std::string path_;
};

class LineReader {
 public:
  LineReader(const std::string& path, const std::string& magic) : in_(path), path_(path) {
    if (!in_) throw ValidationError("cannot open for reading: " + path);
    std::string header;
    if (!std::getline(in_, header)) throw ParseError(path + ": empty file");
    ++line_no_;
    std::istringstream hs(header);
    std::string m, v;
    hs >> m >> v;
    if (m != magic) throw ParseError(path + ":1: expected header " + magic);
    if (v != "v1") throw VersionMismatch(path + ": unsupported " + magic + " version '" + v + "'");
  }

  // Returns false at end of input; skips blank lines.
  bool next_record(std::string* tag) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      fields_ = std::istringstream(line);
      if (!(fields_ >> *tag)) continue;
      return true;
    }
    return false;
  }

  double num() {
    double v;
    if (!(fields_ >> v)) fail("missing or malformed numeric field");
    return v;
  }
  int integer() {
    int v;
    if (!(fields_ >> v)) fail("missing or malformed integer field");
    return v;
  }
  Matrix3d mat() {
    Matrix3d m;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m(r, c) = num();
    }
    return m;
  }
  Vector3d vec() {
    Vector3d v;  // field reads must be sequenced, not packed into a ctor call
    v.x() = num();
    v.y() = num();
    v.z() = num();
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(path_ + ":" + std::to_string(line_no_) + ": " + msg);
  }

 private:
  std::ifstream in_;
  std::string path_;
  std::istringstream fields_;
  int line_no_ = 0;
};

}  // namespace

void write_scene(const Scene& scene, const std::string& path) {
  LineWriter w(path);
  w.header("PBA-SCENE");
  for (const auto& cam : scene.cameras) {
    w.tag("CAM");
    w.num(cam.id);
    w.num(cam.intrinsics.focal);
    w.num(cam.intrinsics.principal_point.x());
    w.num(cam.intrinsics.principal_point.y());
    w.mat(cam.pose.r.matrix());
    w.vec(cam.pose.c);
    w.end();
  }
  for (const auto& pt : scene.points) {
    w.tag("PT");
    w.num(pt.id);
    w.vec(pt.xyz);
    w.end();
  }
  for (const auto& obs : scene.observations) {
    w.tag("OBS");
    w.num(obs.camera_id);
    w.num(obs.point_id);
    w.num(obs.uv.x());
    w.num(obs.uv.y());
    w.end();
  }
}

Scene read_scene(const std::string& path) {
  LineReader r(path, "PBA-SCENE");
  Scene scene;
  std::set<int> cam_ids, pt_ids;
  std::string tag;
  while (r.next_record(&tag)) {
    if (tag == "CAM") {
      Camera cam;
      cam.id = r.integer();
      const double f = r.num();
      const double px = r.num();
      const double py = r.num();
      cam.intrinsics = Intrinsics(f, Vector2d(px, py));
      cam.pose.r = Rotation::from_matrix(r.mat());
      cam.pose.c = r.vec();
      if (!cam_ids.insert(cam.id).second) r.fail("duplicate CAM id");
      scene.cameras.push_back(cam);
    } else if (tag == "PT") {
      ScenePoint pt;
      pt.id = r.integer();
      pt.xyz = r.vec();
      if (!pt_ids.insert(pt.id).second) r.fail("duplicate PT id");
      scene.points.push_back(pt);
    } else if (tag == "OBS") {
      Observation obs;
      obs.camera_id = r.integer();
      obs.point_id = r.integer();
      obs.uv.x() = r.num();
      obs.uv.y() = r.num();
      if (!cam_ids.count(obs.camera_id)) r.fail("OBS references unknown camera");
      if (!pt_ids.count(obs.point_id)) r.fail("OBS references unknown point");
      scene.observations.push_back(obs);
    } else {
      r.fail("unknown record '" + tag + "'");
    }
  }
  return scene;
}

void write_graph(const TripletGraph& graph, const std::string& path) {
  LineWriter w(path);
  w.header("PBA-GRAPH");
  for (const auto& m : graph.motions) {
    w.tag("MOTION");
    w.num(m.id);
    for (int k = 0; k < 3; ++k) w.num(m.view_ids[k]);
    w.end();
    for (int k = 0; k < 3; ++k) {
      w.tag("LPOSE");
      w.num(k);
      w.mat(m.local_poses[k].r.matrix());
      w.vec(m.local_poses[k].c);
      w.end();
    }
    for (size_t i = 0; i < m.local_points.size(); ++i) {
      w.tag("LPT");
      w.num(static_cast<int>(i));
      w.num(m.global_point_ids[i]);
      w.vec(m.local_points[i]);
      w.end();
    }
    for (const auto& f : m.features) {
      w.tag("FEAT");
      w.num(f.view);
      w.num(f.point);
      w.num(f.uv.x());
      w.num(f.uv.y());
      w.end();
    }
    w.tag("SIM");
    w.num(m.d_init.scale());
    w.mat(m.d_init.rot().matrix());
    w.vec(m.d_init.trans());
    w.end();
  }
  for (const auto& [a, b] : graph.holdout_edges) {
    w.tag("HOLDOUT");
    w.num(a);
    w.num(b);
    w.end();
  }
}

TripletGraph read_graph(const std::string& path) {
  LineReader r(path, "PBA-GRAPH");
  TripletGraph graph;
  RelativeMotion* cur = nullptr;
  int lpose_count = 0;
  bool sim_seen = false;
  std::set<int> node_set, motion_ids;

  auto finish_motion = [&]() {
    if (!cur) return;
    if (lpose_count != 3) r.fail("motion " + std::to_string(cur->id) + " has != 3 LPOSE records");
    if (!sim_seen) r.fail("motion " + std::to_string(cur->id) + " is missing its SIM record");
    for (const auto& f : cur->features) {
      if (f.view < 0 || f.view > 2 || f.point < 0 || f.point >= cur->feature_count()) {
        r.fail("FEAT record out of range in motion " + std::to_string(cur->id));
      }
    }
  };

  std::string tag;
  while (r.next_record(&tag)) {
    if (tag == "MOTION") {
      finish_motion();
      RelativeMotion m;
      m.id = r.integer();
      if (!motion_ids.insert(m.id).second) r.fail("duplicate MOTION id");
      for (int k = 0; k < 3; ++k) {
        m.view_ids[k] = r.integer();
        node_set.insert(m.view_ids[k]);
      }
      graph.motions.push_back(std::move(m));
      cur = &graph.motions.back();
      lpose_count = 0;
      sim_seen = false;
    } else if (tag == "LPOSE") {
      if (!cur) r.fail("LPOSE before MOTION");
      const int k = r.integer();
      if (k < 0 || k > 2) r.fail("LPOSE view index out of range");
      cur->local_poses[k].r = Rotation::from_matrix(r.mat());
      cur->local_poses[k].c = r.vec();
      cur->local_poses[k].frame = Frame::local(cur->id);
      ++lpose_count;
    } else if (tag == "LPT") {
      if (!cur) r.fail("LPT before MOTION");
      const int idx = r.integer();
      if (idx != cur->feature_count()) r.fail("LPT indices must be consecutive");
      cur->global_point_ids.push_back(r.integer());
      cur->local_points.push_back(r.vec());
    } else if (tag == "FEAT") {
      if (!cur) r.fail("FEAT before MOTION");
      MotionFeature f;
      f.view = r.integer();
      f.point = r.integer();
      f.uv.x() = r.num();
      f.uv.y() = r.num();
      cur->features.push_back(f);
    } else if (tag == "SIM") {
      if (!cur) r.fail("SIM before MOTION");
      const double lambda = r.num();
      const Matrix3d a = r.mat();
      const Vector3d b = r.vec();
      if (!(lambda > 0)) r.fail("SIM scale must be positive");
      cur->d_init = Similarity(lambda, Rotation::from_matrix(a), b);
      sim_seen = true;
    } else if (tag == "HOLDOUT") {
      const int a = r.integer();
      const int b = r.integer();
      graph.holdout_edges.emplace_back(a, b);
    } else {
      r.fail("unknown record '" + tag + "'");
    }
  }
  finish_motion();
  graph.nodes.assign(node_set.begin(), node_set.end());
  return graph;
}

void write_hessians(const std::vector<LocalBAResult>& results, const std::string& path) {
  LineWriter w(path);
  w.header("PBA-HESS");
  for (const auto& res : results) {
    w.tag("MOT");
    w.num(res.motion_id);
    w.num(res.feature_count);
    w.num(res.gamma);
    w.num(res.m_const);
    w.num(res.dropped_points);
    w.end();
    for (int k = 0; k < 3; ++k) {
      w.tag("XV0");
      w.num(k);
      w.mat(res.refined_poses[k].r.matrix());
      w.vec(res.refined_poses[k].c);
      w.end();
    }
    for (int i = 0; i < 18; ++i) {
      w.tag("HROW");
      w.num(i);
      for (int j = 0; j < 18; ++j) w.num(res.h(i, j));
      w.end();
    }
    for (int i = 0; i < 18; ++i) {
      w.tag("EIGV");
      w.num(i);
      for (int j = 0; j < 18; ++j) w.num(res.V(i, j));
      w.end();
    }
    w.tag("EIGD");
    for (int i = 0; i < 18; ++i) w.num(res.D(i));
    w.end();
    w.tag("GRAD");
    for (int i = 0; i < 18; ++i) w.num(res.gradient(i));
    w.end();
  }
}

std::vector<LocalBAResult> read_hessians(const std::string& path) {
  LineReader r(path, "PBA-HESS");
  std::vector<LocalBAResult> out;
  LocalBAResult* cur = nullptr;
  std::string tag;
  while (r.next_record(&tag)) {
    if (tag == "MOT") {
      LocalBAResult res;
      res.motion_id = r.integer();
      res.feature_count = r.integer();
      res.gamma = r.num();
      res.m_const = r.num();
      res.dropped_points = r.integer();
      res.h = Eigen::MatrixXd::Zero(18, 18);
      res.V = Eigen::MatrixXd::Zero(18, 18);
      res.D = Eigen::VectorXd::Zero(18);
      res.gradient = Eigen::VectorXd::Zero(18);
      out.push_back(std::move(res));
      cur = &out.back();
    } else if (!cur) {
      r.fail("record '" + tag + "' before MOT");
    } else if (tag == "XV0") {
      const int k = r.integer();
      if (k < 0 || k > 2) r.fail("XV0 view index out of range");
      cur->refined_poses[k].r = Rotation::from_matrix(r.mat());
      cur->refined_poses[k].c = r.vec();
      cur->refined_poses[k].frame = Frame::local(cur->motion_id);
    } else if (tag == "HROW") {
      const int i = r.integer();
      if (i < 0 || i > 17) r.fail("HROW index out of range");
      for (int j = 0; j < 18; ++j) cur->h(i, j) = r.num();
    } else if (tag == "EIGV") {
      const int i = r.integer();
      if (i < 0 || i > 17) r.fail("EIGV index out of range");
      for (int j = 0; j < 18; ++j) cur->V(i, j) = r.num();
    } else if (tag == "EIGD") {
      for (int i = 0; i < 18; ++i) cur->D(i) = r.num();
    } else if (tag == "GRAD") {
      for (int i = 0; i < 18; ++i) cur->gradient(i) = r.num();
    } else {
      r.fail("unknown record '" + tag + "'");
    }
  }
  return out;
}

void write_poses(const std::vector<int>& camera_ids, const std::vector<Pose>& poses,
                 const std::string& path) {
  if (camera_ids.size() != poses.size()) {
    throw ValidationError("write_poses: id/pose count mismatch");
  }
  LineWriter w(path);
  w.header("PBA-POSES");
  for (size_t i = 0; i < poses.size(); ++i) {
    w.tag("POSE");
    w.num(camera_ids[i]);
    w.mat(poses[i].r.matrix());
    w.vec(poses[i].c);
    w.end();
  }
}

std::vector<std::pair<int, Pose>> read_poses(const std::string& path) {
  LineReader r(path, "PBA-POSES");
  std::vector<std::pair<int, Pose>> out;
  std::string tag;
  while (r.next_record(&tag)) {
    if (tag != "POSE") r.fail("unknown record '" + tag + "'");
    const int id = r.integer();
    Pose p;
    p.r = Rotation::from_matrix(r.mat());
    p.c = r.vec();
    out.emplace_back(id, p);
  }
  return out;
}

}  // namespace pba
