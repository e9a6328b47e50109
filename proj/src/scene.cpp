#include "pba/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "pba/rng.hpp"

namespace pba {

namespace {
constexpr double kGridFocal = 800.0;
constexpr double kImageSize = 1000.0;
constexpr double kMinDepth = 0.5;

bool in_image(const Vector2d& uv) {
  return uv.x() >= 0.0 && uv.x() <= kImageSize && uv.y() >= 0.0 && uv.y() <= kImageSize;
}

Pose look_at(const Vector3d& center, const Vector3d& target, const Vector3d& up) {
  const Vector3d z = (target - center).normalized();
  Vector3d x = up.cross(z);
  if (x.norm() < 1e-9) x = Vector3d(1, 0, 0);
  x.normalize();
  const Vector3d y = z.cross(x);
  Matrix3d r;
  r.row(0) = x;
  r.row(1) = y;
  r.row(2) = z;
  Pose p;
  p.r = Rotation::from_matrix(r);
  p.c = center;
  return p;
}
}  // namespace

const Camera& Scene::camera(int id) const {
  for (const auto& c : cameras) {
    if (c.id == id) return c;
  }
  throw ValidationError("Scene::camera: unknown id " + std::to_string(id));
}

const ScenePoint& Scene::point(int id) const {
  for (const auto& p : points) {
    if (p.id == id) return p;
  }
  throw ValidationError("Scene::point: unknown id " + std::to_string(id));
}

double Scene::diameter() const {
  double d2 = 0.0;
  for (size_t i = 0; i < cameras.size(); ++i) {
    for (size_t j = i + 1; j < cameras.size(); ++j) {
      d2 = std::max(d2, (cameras[i].pose.c - cameras[j].pose.c).squaredNorm());
    }
  }
  return std::sqrt(d2);
}

const RelativeMotion& TripletGraph::motion(int id) const {
  for (const auto& m : motions) {
    if (m.id == id) return m;
  }
  throw ValidationError("TripletGraph::motion: unknown id " + std::to_string(id));
}

Scene generate_scene(const SceneSpec& spec) {
  if (spec.n_cameras < 3) throw InvalidSpec("generate_scene: need at least 3 cameras");
  if (spec.n_points < 1) throw InvalidSpec("generate_scene: need at least 1 point");
  if (spec.noise_px < 0.0) throw InvalidSpec("generate_scene: noise_px must be >= 0");

  Rng rng(spec.seed);
  Rng point_rng = rng.fork(1);
  Rng noise_rng = rng.fork(2);

  Scene scene;
  const bool is_ring = spec.layout == SceneLayout::kRing || spec.layout == SceneLayout::kLoop;
  if (is_ring && !(spec.focal_px > 0.0)) throw InvalidSpec("generate_scene: focal must be > 0");
  const Intrinsics intr(is_ring ? spec.focal_px : kGridFocal,
                        Vector2d(kImageSize / 2, kImageSize / 2));

  if (is_ring) {
    // Outward-looking ring inside a point cylinder. The cylinder radius is
    // chosen so a point stays visible for roughly 3.6 consecutive cameras:
    // short feature tracks, like a trajectory moving through a scene (long
    // tracks would make naive motion averaging look artificially good).
    const double cam_radius = 10.0;
    const double fov = std::atan2(kImageSize / 2, spec.focal_px);
    const double spacing = 2.0 * M_PI / spec.n_cameras;
    const double half_track = std::min(2.6 * spacing, fov - 2.0 * M_PI / 180.0);
    const double pt_radius = cam_radius * std::sin(fov) / std::sin(fov - half_track);
    for (int i = 0; i < spec.n_cameras; ++i) {
      const double a = spacing * i;
      const Vector3d center = cam_radius * Vector3d(std::cos(a), std::sin(a), 0.0);
      Camera cam;
      cam.id = i;
      cam.intrinsics = intr;
      cam.pose = look_at(center, 2.0 * center, Vector3d(0, 0, 1));  // radially outward
      scene.cameras.push_back(cam);
    }
    // Mixed texture: a uniform backdrop plus tight clusters, so triplet
    // feature count and parallax diversity vary around the ring the way they
    // do across real scenes.
    const int n_clusters = 8;
    std::vector<double> cluster_psi(n_clusters);
    for (int c = 0; c < n_clusters; ++c) cluster_psi[c] = point_rng.uniform(0.0, 2.0 * M_PI);
    const double mean_depth = pt_radius - cam_radius;
    for (int i = 0; i < spec.n_points; ++i) {
      double psi;
      if (point_rng.uniform() < 0.7) {
        psi = point_rng.uniform(0.0, 2.0 * M_PI);
      } else {
        const int c = point_rng.uniform_int(n_clusters);
        psi = cluster_psi[c] + (3.0 * M_PI / 180.0) * point_rng.normal();
      }
      const double r = pt_radius * point_rng.uniform(0.9, 1.1);
      Vector3d p;
      p.x() = r * std::cos(psi);
      p.y() = r * std::sin(psi);
      p.z() = point_rng.uniform(-0.35 * mean_depth, 0.35 * mean_depth);
      scene.points.push_back({i, p});
    }
  } else {  // kGrid: nadir block, serpentine order
    const double height = 10.0;
    const double half_fp = height * (kImageSize / 2) / kGridFocal;
    const double along_step = 0.2 * 2.0 * half_fp;   // 80% forward overlap
    const double across_step = 0.4 * 2.0 * half_fp;  // 60% side overlap
    const int cols = static_cast<int>(std::ceil(std::sqrt(double(spec.n_cameras))));
    const int rows = (spec.n_cameras + cols - 1) / cols;
    int placed = 0;
    for (int r = 0; r < rows && placed < spec.n_cameras; ++r) {
      for (int k = 0; k < cols && placed < spec.n_cameras; ++k) {
        const int c = (r % 2 == 0) ? k : cols - 1 - k;  // serpentine
        Camera cam;
        cam.id = placed;
        cam.intrinsics = intr;
        const Vector3d center(c * along_step, r * across_step, height);
        cam.pose = look_at(center, center - Vector3d(0, 0, height), Vector3d(0, 1, 0));
        scene.cameras.push_back(cam);
        ++placed;
      }
    }
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& cam : scene.cameras) {
      xmin = std::min(xmin, cam.pose.c.x());
      xmax = std::max(xmax, cam.pose.c.x());
      ymin = std::min(ymin, cam.pose.c.y());
      ymax = std::max(ymax, cam.pose.c.y());
    }
    for (int i = 0; i < spec.n_points; ++i) {
      Vector3d p;  // sequence the draws explicitly
      p.x() = point_rng.uniform(xmin - 0.6 * half_fp, xmax + 0.6 * half_fp);
      p.y() = point_rng.uniform(ymin - 0.6 * half_fp, ymax + 0.6 * half_fp);
      p.z() = point_rng.uniform(0.0, 0.05 * height);
      scene.points.push_back({i, p});
    }
  }

  // Exact projections, then pixel noise (resampled if it leaves the image;
  // pixel noise cannot move a point behind the camera).
  std::vector<int> views_per_point(scene.points.size(), 0);
  for (const auto& cam : scene.cameras) {
    for (const auto& pt : scene.points) {
      const Vector3d q = cam.pose.r * (pt.xyz - cam.pose.c);
      if (q.z() < kMinDepth) continue;
      Vector2d uv = intr.focal * Vector2d(q.x() / q.z(), q.y() / q.z()) + intr.principal_point;
      if (!in_image(uv)) continue;
      if (spec.noise_px > 0.0) {
        Vector2d noisy;
        int tries = 0;
        do {
          Vector2d n;
          n.x() = noise_rng.normal();
          n.y() = noise_rng.normal();
          noisy = uv + spec.noise_px * n;
        } while (!in_image(noisy) && ++tries < 64);
        uv = in_image(noisy) ? noisy : uv;
      }
      scene.observations.push_back({cam.id, pt.id, uv});
      ++views_per_point[pt.id];
    }
  }

  // Points seen in fewer than two views cannot be triangulated; drop them
  // and compact the ids.
  std::vector<int> remap(scene.points.size(), -1);
  {
    Scene compact;
    compact.cameras = scene.cameras;
    int next = 0;
    for (const auto& pt : scene.points) {
      if (views_per_point[pt.id] >= 2) {
        remap[pt.id] = next;
        compact.points.push_back({next, pt.xyz});
        ++next;
      }
    }
    for (auto obs : scene.observations) {
      if (remap[obs.point_id] >= 0) {
        obs.point_id = remap[obs.point_id];
        compact.observations.push_back(obs);
      }
    }
    scene = std::move(compact);
  }
  return scene;
}

std::vector<std::pair<int, int>> loop_holdout_pairs(int n_cameras, int window) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < window; ++i) {
    for (int j = n_cameras - window; j < n_cameras; ++j) {
      if (i < j) pairs.emplace_back(i, j);
    }
  }
  return pairs;
}

namespace {

// Per-camera point visibility as a bitset for fast pair/triple intersections.
struct Visibility {
  int words = 0;
  std::vector<std::vector<uint64_t>> bits;  // [camera][word]

  Visibility(const Scene& scene, const std::unordered_map<int, int>& cam_index) {
    words = static_cast<int>((scene.points.size() + 63) / 64);
    bits.assign(scene.cameras.size(), std::vector<uint64_t>(words, 0));
    for (const auto& obs : scene.observations) {
      const int ci = cam_index.at(obs.camera_id);
      bits[ci][obs.point_id / 64] |= uint64_t(1) << (obs.point_id % 64);
    }
  }

  int count_pair(int a, int b) const {
    int n = 0;
    for (int w = 0; w < words; ++w) n += __builtin_popcountll(bits[a][w] & bits[b][w]);
    return n;
  }

  // Points visible in at least two of the three cameras.
  int count_two_of_three(int a, int b, int c) const {
    int n = 0;
    for (int w = 0; w < words; ++w) {
      const uint64_t ab = bits[a][w] & bits[b][w];
      const uint64_t ac = bits[a][w] & bits[c][w];
      const uint64_t bc = bits[b][w] & bits[c][w];
      n += __builtin_popcountll(ab | ac | bc);
    }
    return n;
  }
};

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

TripletGraph extract_triplets(const Scene& scene, const ExtractOptions& opts) {
  const int n = static_cast<int>(scene.cameras.size());
  if (n < 3) throw DisconnectedScene("extract_triplets: fewer than 3 cameras");

  std::unordered_map<int, int> cam_index;
  for (int i = 0; i < n; ++i) cam_index[scene.cameras[i].id] = i;
  const Visibility vis(scene, cam_index);

  // (camera index, point id) -> observation uv
  std::unordered_map<int64_t, const Observation*> obs_map;
  for (const auto& obs : scene.observations) {
    obs_map[int64_t(cam_index.at(obs.camera_id)) * int64_t(scene.points.size()) + obs.point_id] =
        &obs;
  }

  auto is_holdout_hit = [&](int a, int b, int c) {
    for (const auto& [ha, hb] : opts.holdout_pairs) {
      const bool has_a = (a == ha || b == ha || c == ha);
      const bool has_b = (a == hb || b == hb || c == hb);
      if (has_a && has_b) return true;
    }
    return false;
  };

  std::vector<std::array<int, 3>> candidates;  // camera indices
  if (opts.strategy == TripletStrategy::kSequential) {
    for (int i = 0; i < n; ++i) {
      candidates.push_back({i, (i + 1) % n, (i + 2) % n});
    }
  } else {
    std::set<std::array<int, 3>> seen;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (vis.count_pair(i, j) < opts.min_features) continue;
        std::vector<std::pair<int, int>> thirds;  // (-count, k) for stable order
        for (int k = 0; k < n; ++k) {
          if (k == i || k == j) continue;
          const int m = vis.count_two_of_three(i, j, k);
          if (m >= opts.min_features && vis.count_pair(i, k) >= opts.min_features / 2 &&
              vis.count_pair(j, k) >= opts.min_features / 2) {
            thirds.emplace_back(-m, k);
          }
        }
        std::sort(thirds.begin(), thirds.end());
        int taken = 0;
        for (const auto& [neg, k] : thirds) {
          if (taken >= opts.max_per_edge) break;
          std::array<int, 3> t = {i, j, k};
          std::sort(t.begin(), t.end());
          if (seen.insert(t).second) ++taken;
        }
      }
    }
    candidates.assign(seen.begin(), seen.end());
  }

  Rng rng(opts.seed);
  TripletGraph graph;
  for (const auto& cam : scene.cameras) graph.nodes.push_back(cam.id);
  graph.holdout_edges = opts.holdout_pairs;

  int next_id = 0;
  for (const auto& tri : candidates) {
    const int a = tri[0], b = tri[1], c = tri[2];
    const int ida = scene.cameras[a].id, idb = scene.cameras[b].id, idc = scene.cameras[c].id;
    if (is_holdout_hit(ida, idb, idc)) continue;
    if (vis.count_two_of_three(a, b, c) < opts.min_features) continue;

    const Pose& pa = scene.cameras[a].pose;
    const Pose& pb = scene.cameras[b].pose;
    const Pose& pc = scene.cameras[c].pose;
    const double base = (pb.c - pa.c).norm();
    if (base < 1e-12) continue;

    // Local frame: first camera at identity, unit base. Point map is
    // p_local = s0 * Ra * (P - Ca).
    const double s0 = 1.0 / base;
    const Matrix3d ra = pa.r.matrix();
    const Similarity d_true(s0, pa.r, -s0 * (ra * pa.c));

    RelativeMotion motion;
    motion.id = next_id;
    motion.view_ids = {ida, idb, idc};
    const std::array<const Pose*, 3> global_poses = {&pa, &pb, &pc};
    const std::array<int, 3> cam_idx = {a, b, c};
    for (int k = 0; k < 3; ++k) {
      motion.local_poses[k] = apply_similarity(d_true, *global_poses[k], motion.id);
      motion.view_intrinsics[k] = scene.cameras[cam_idx[k]].intrinsics;
    }

    // Points visible in at least two of the three views, with their
    // observations.
    for (const auto& pt : scene.points) {
      int seen_in = 0;
      std::array<const Observation*, 3> obs = {nullptr, nullptr, nullptr};
      for (int k = 0; k < 3; ++k) {
        auto it = obs_map.find(int64_t(cam_idx[k]) * int64_t(scene.points.size()) + pt.id);
        if (it != obs_map.end()) {
          obs[k] = it->second;
          ++seen_in;
        }
      }
      if (seen_in < 2) continue;
      const int local_idx = static_cast<int>(motion.local_points.size());
      motion.local_points.push_back(d_true.apply_point(pt.xyz));
      motion.global_point_ids.push_back(pt.id);
      for (int k = 0; k < 3; ++k) {
        if (obs[k]) motion.features.push_back({k, local_idx, obs[k]->uv});
      }
    }
    if (motion.feature_count() < opts.min_features) continue;

    // Optional init noise on the non-gauge views.
    if (opts.init_rot_noise_deg > 0.0 || opts.init_center_noise_frac > 0.0) {
      Rng mrng = rng.fork(uint64_t(motion.id) + 1000);
      for (int k = 1; k < 3; ++k) {
        Pose& lp = motion.local_poses[k];
        if (opts.init_rot_noise_deg > 0.0) {
          const double ang = mrng.uniform(0.0, opts.init_rot_noise_deg * M_PI / 180.0);
          lp.r = Rotation::from_matrix(
              (lp.r.matrix() * exp_so3(ang * mrng.unit_vector())).eval());
        }
        if (opts.init_center_noise_frac > 0.0) {
          lp.c += mrng.uniform(0.0, opts.init_center_noise_frac) * mrng.unit_vector();
        }
      }
    }

    std::vector<Pose> gl(3), lo(3);
    for (int k = 0; k < 3; ++k) {
      gl[k] = *global_poses[k];
      lo[k] = motion.local_poses[k];
    }
    motion.d_init = fit_similarity_from_poses(gl, lo);

    graph.motions.push_back(std::move(motion));
    ++next_id;
  }

  if (graph.motions.empty()) {
    throw DisconnectedScene("extract_triplets: no triplet meets the feature threshold");
  }

  // The motion hyper-graph (minus holdouts, which never became motions) must
  // connect every camera.
  UnionFind uf(n);
  std::vector<uint8_t> covered(n, 0);
  for (const auto& m : graph.motions) {
    const int a = cam_index.at(m.view_ids[0]);
    const int b = cam_index.at(m.view_ids[1]);
    const int c = cam_index.at(m.view_ids[2]);
    covered[a] = covered[b] = covered[c] = 1;
    uf.unite(a, b);
    uf.unite(a, c);
  }
  for (int i = 0; i < n; ++i) {
    if (!covered[i] || uf.find(i) != uf.find(0)) {
      throw DisconnectedScene("extract_triplets: triplet graph does not connect all cameras");
    }
  }
  return graph;
}

void attach_intrinsics(TripletGraph& graph, const Scene& scene) {
  for (auto& m : graph.motions) {
    for (int k = 0; k < 3; ++k) {
      m.view_intrinsics[k] = scene.camera(m.view_ids[k]).intrinsics;
    }
  }
}

std::vector<Pose> perturb_global_init(const Scene& scene, double rot_deg, double trans_frac,
                                      uint64_t seed) {
  if (rot_deg < 0.0 || trans_frac < 0.0) {
    throw InvalidSpec("perturb_global_init: noise magnitudes must be >= 0");
  }
  Rng rng(seed);
  const double diam = scene.diameter();
  std::vector<Pose> out;
  out.reserve(scene.cameras.size());
  for (const auto& cam : scene.cameras) {
    Pose p = cam.pose;
    if (rot_deg > 0.0) {
      const double ang = rng.uniform(0.0, rot_deg * M_PI / 180.0);
      p.r = Rotation::from_matrix((p.r.matrix() * exp_so3(ang * rng.unit_vector())).eval());
    }
    if (trans_frac > 0.0) {
      p.c += rng.uniform(0.0, trans_frac * diam) * rng.unit_vector();
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace pba
