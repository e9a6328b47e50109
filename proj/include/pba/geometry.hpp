#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pba/errors.hpp"

namespace pba {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

Matrix3d skew(const Vector3d& v);

// Rodrigues exponential map, exact for any angle.
Matrix3d exp_so3(const Vector3d& omega);

// Axis-angle logarithm. Throws NearPiAngle for angles within 1e-6 of pi.
Vector3d log_so3(const Matrix3d& r);

// Right Jacobian of SO(3) and its inverse; d exp(phi + d) = exp(phi) exp((Jr(phi) d)x).
Matrix3d so3_right_jacobian(const Vector3d& phi);
Matrix3d so3_right_jacobian_inv(const Vector3d& phi);

// Frobenius-nearest rotation via SVD. Throws SingularInput when the smallest
// singular value is below 1e-12.
Matrix3d project_to_so3(const Matrix3d& m);

// Paper-style incremental rotation: SO(3) projection of r0 (I + [omega]x).
Matrix3d small_rotation_update(const Matrix3d& r0, const Vector3d& omega);

// Validated member of SO(3). The raw Matrix3d is used in solver internals;
// this wrapper guards module boundaries and file I/O.
class Rotation {
 public:
  Rotation() : m_(Matrix3d::Identity()) {}

  // Validates orthonormality and det(+1) to 1e-9 (Frobenius).
  static Rotation from_matrix(const Matrix3d& m);
  // Projects m to SO(3) first; use for matrices assembled from updates.
  static Rotation project(const Matrix3d& m) { return Rotation(project_to_so3(m)); }
  static Rotation identity() { return Rotation(); }

  const Matrix3d& matrix() const { return m_; }
  Rotation transposed() const { return Rotation(m_.transpose().eval()); }
  Vector3d operator*(const Vector3d& v) const { return m_ * v; }
  Rotation operator*(const Rotation& o) const { return Rotation((m_ * o.m_).eval()); }

 private:
  explicit Rotation(const Matrix3d& m) : m_(m) {}
  Matrix3d m_;
};

struct Frame {
  enum Kind { kGlobal, kLocal };
  Kind kind = kGlobal;
  int motion_id = -1;

  static Frame global() { return {kGlobal, -1}; }
  static Frame local(int motion_id) { return {kLocal, motion_id}; }
  bool operator==(const Frame& o) const { return kind == o.kind && motion_id == o.motion_id; }
};

// Camera extrinsics: world-to-camera rotation r and perspective center c.
// A point p in the pose's frame maps to camera coordinates r (p - c).
struct Pose {
  Rotation r;
  Vector3d c = Vector3d::Zero();
  Frame frame = Frame::global();
};

// 3D similarity {lambda, alpha, beta} acting on points as
//   p_local = lambda * alpha * P + beta.
// On a pose {R, C} the induced action is
//   c_local = lambda * alpha * C + beta,   r_local = R * alpha^T,
// which is the unique pose map consistent with the r(p - c) projection
// convention (projections of transformed points through the transformed
// pose match the originals).
class Similarity {
 public:
  Similarity() = default;
  Similarity(double scale, const Rotation& rot, const Vector3d& trans);

  static Similarity identity() { return {}; }

  double scale() const { return scale_; }
  const Rotation& rot() const { return rot_; }
  const Vector3d& trans() const { return trans_; }

  Vector3d apply_point(const Vector3d& p) const { return scale_ * (rot_ * p) + trans_; }
  Vector3d apply_point_inverse(const Vector3d& p) const {
    return rot_.matrix().transpose() * (p - trans_) / scale_;
  }

  Similarity inverse() const;
  // Composition as maps: (a * b)(x) = a(b(x)).
  friend Similarity operator*(const Similarity& a, const Similarity& b);

 private:
  double scale_ = 1.0;
  Rotation rot_;
  Vector3d trans_ = Vector3d::Zero();
};

// Maps a global pose into the similarity's local frame. Throws
// ValidationError if the pose is not tagged global.
Pose apply_similarity(const Similarity& d, const Pose& pose_global, int motion_id = -1);

// Calibrated pinhole camera.
struct Intrinsics {
  double focal = 1.0;
  Vector2d principal_point = Vector2d::Zero();

  Intrinsics() = default;
  Intrinsics(double f, const Vector2d& pp);
};

// Pinhole projection J(pi(r (p - c))). Throws CheiralityViolation when the
// camera-frame depth is not strictly positive.
Vector2d project(const Intrinsics& intr, const Pose& pose, const Vector3d& p);

// Projection with the camera rotation given as r0 exp([omega]x) and analytic
// Jacobians w.r.t. the rotation tangent, the center, and the point. Used by
// both bundle adjustments; `p_cam` returns r_hat (p - c).
struct ProjectionJacobians {
  Eigen::Matrix<double, 2, 3> d_omega;
  Eigen::Matrix<double, 2, 3> d_center;
  Eigen::Matrix<double, 2, 3> d_point;
};
Vector2d project_with_jacobians(const Intrinsics& intr, const Matrix3d& r0,
                                const Vector3d& omega, const Vector3d& c, const Vector3d& p,
                                ProjectionJacobians* jac = nullptr,
                                Vector3d* p_cam = nullptr);

// Least-squares similarity from full pose correspondences: finds d with
// d(global_k) ~= local_k. The rotation comes from averaging the per-view
// relative rotations, the scale and translation from the centers; this stays
// well-posed for the near-collinear center triples of sequential triplets.
Similarity fit_similarity_from_poses(const std::vector<Pose>& global_poses,
                                     const std::vector<Pose>& local_poses);

// Umeyama point-set alignment: returns d minimizing ||d(src_i) - dst_i||^2.
// Requires >= 3 non-collinear points.
Similarity fit_similarity_from_points(const std::vector<Vector3d>& src,
                                      const std::vector<Vector3d>& dst);

}  // namespace pba
