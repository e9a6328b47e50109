#include "pba/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <vector>

namespace pba {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Matrix3d skew(const Vector3d& v) {
  Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Matrix3d exp_so3(const Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  const Matrix3d w = skew(omega);
  if (theta2 < 1e-16) {
    return Matrix3d::Identity() + w + 0.5 * w * w;
  }
  const double theta = std::sqrt(theta2);
  return Matrix3d::Identity() + (std::sin(theta) / theta) * w +
         ((1.0 - std::cos(theta)) / theta2) * w * w;
}

Vector3d log_so3(const Matrix3d& r) {
  const Vector3d axis_sin(0.5 * (r(2, 1) - r(1, 2)), 0.5 * (r(0, 2) - r(2, 0)),
                          0.5 * (r(1, 0) - r(0, 1)));
  const double cos_theta = std::max(-1.0, std::min(1.0, 0.5 * (r.trace() - 1.0)));
  const double sin_theta = std::min(1.0, axis_sin.norm());
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta > kPi - 1e-6) {
    throw NearPiAngle("log_so3: rotation angle within 1e-6 of pi");
  }
  if (theta < 1e-8) {
    return axis_sin;  // vee(r - r^T)/2 is exact to O(theta^3)
  }
  if (cos_theta > -0.9) {
    return (theta / sin_theta) * axis_sin;
  }
  // Near pi the anti-symmetric part loses precision; recover the axis from
  // the symmetric part r + I = 2 (cos I + (1-cos) nn^T)-ish structure.
  const Matrix3d s = 0.5 * (r + Matrix3d::Identity());
  int k = 0;
  s.diagonal().maxCoeff(&k);
  Vector3d n = s.col(k);
  n /= std::sqrt(std::max(s(k, k), 1e-300));
  n.normalize();
  if (n.dot(axis_sin) < 0) n = -n;
  return theta * n;
}

Matrix3d so3_right_jacobian(const Vector3d& phi) {
  const double theta2 = phi.squaredNorm();
  const Matrix3d w = skew(phi);
  double a, b;
  if (theta2 < 1e-8) {
    a = 0.5 - theta2 / 24.0;
    b = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Matrix3d::Identity() - a * w + b * w * w;
}

Matrix3d so3_right_jacobian_inv(const Vector3d& phi) {
  const double theta2 = phi.squaredNorm();
  const Matrix3d w = skew(phi);
  double c;
  if (theta2 < 1e-8) {
    c = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    const double theta = std::sqrt(theta2);
    c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Matrix3d::Identity() + 0.5 * w + c * w * w;
}

Matrix3d project_to_so3(const Matrix3d& m) {
  Eigen::JacobiSVD<Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()(2) < 1e-12) {
    throw SingularInput("project_to_so3: smallest singular value below 1e-12");
  }
  const Matrix3d u = svd.matrixU();
  const Matrix3d v = svd.matrixV();
  const double d = (u * v.transpose()).determinant();
  return u * Vector3d(1.0, 1.0, d < 0 ? -1.0 : 1.0).asDiagonal() * v.transpose();
}

Matrix3d small_rotation_update(const Matrix3d& r0, const Vector3d& omega) {
  return project_to_so3(r0 * (Matrix3d::Identity() + skew(omega)));
}

Rotation Rotation::from_matrix(const Matrix3d& m) {
  const double ortho = (m.transpose() * m - Matrix3d::Identity()).norm();
  if (ortho > 1e-9 || std::abs(m.determinant() - 1.0) > 1e-9) {
    throw ValidationError("Rotation::from_matrix: matrix is not in SO(3)");
  }
  return Rotation(m);
}

Similarity::Similarity(double scale, const Rotation& rot, const Vector3d& trans)
    : scale_(scale), rot_(rot), trans_(trans) {
  if (!(scale_ > 0.0)) {
    throw ValidationError("Similarity: scale must be positive");
  }
}

Similarity Similarity::inverse() const {
  const Matrix3d at = rot_.matrix().transpose();
  return Similarity(1.0 / scale_, Rotation::from_matrix(at), -(at * trans_) / scale_);
}

Similarity operator*(const Similarity& a, const Similarity& b) {
  return Similarity(a.scale_ * b.scale_, a.rot_ * b.rot_,
                    a.scale_ * (a.rot_ * b.trans_) + a.trans_);
}

Pose apply_similarity(const Similarity& d, const Pose& pose_global, int motion_id) {
  if (pose_global.frame.kind != Frame::kGlobal) {
    throw ValidationError("apply_similarity: pose must be in the global frame");
  }
  Pose out;
  out.c = d.apply_point(pose_global.c);
  out.r = Rotation::from_matrix((pose_global.r.matrix() * d.rot().matrix().transpose()).eval());
  out.frame = Frame::local(motion_id);
  return out;
}

Intrinsics::Intrinsics(double f, const Vector2d& pp) : focal(f), principal_point(pp) {
  if (!(focal > 0.0)) {
    throw ValidationError("Intrinsics: focal must be positive");
  }
}

Vector2d project(const Intrinsics& intr, const Pose& pose, const Vector3d& p) {
  const Vector3d q = pose.r * (p - pose.c);
  if (q.z() <= 0.0) {
    throw CheiralityViolation("project: point at or behind the camera plane");
  }
  return intr.focal * Vector2d(q.x() / q.z(), q.y() / q.z()) + intr.principal_point;
}

Vector2d project_with_jacobians(const Intrinsics& intr, const Matrix3d& r0,
                                const Vector3d& omega, const Vector3d& c, const Vector3d& p,
                                ProjectionJacobians* jac, Vector3d* p_cam) {
  const Matrix3d r_hat = r0 * exp_so3(omega);
  const Vector3d q = r_hat * (p - c);
  if (p_cam) *p_cam = q;
  if (q.z() <= 0.0) {
    throw CheiralityViolation("project: point at or behind the camera plane");
  }
  const double inv_z = 1.0 / q.z();
  const Vector2d uv = intr.focal * Vector2d(q.x() * inv_z, q.y() * inv_z) + intr.principal_point;
  if (jac) {
    Eigen::Matrix<double, 2, 3> d_uv_dq;
    d_uv_dq << inv_z, 0, -q.x() * inv_z * inv_z, 0, inv_z, -q.y() * inv_z * inv_z;
    d_uv_dq *= intr.focal;
    // q(omega) = r0 exp(omega) (p - c); right perturbation gives
    // dq/d_omega = -r_hat [p - c]x Jr(omega).
    jac->d_omega = d_uv_dq * (-r_hat * skew(p - c) * so3_right_jacobian(omega));
    jac->d_center = d_uv_dq * (-r_hat);
    jac->d_point = d_uv_dq * r_hat;
  }
  return uv;
}

Similarity fit_similarity_from_poses(const std::vector<Pose>& global_poses,
                                     const std::vector<Pose>& local_poses) {
  const size_t n = global_poses.size();
  if (n < 2 || local_poses.size() != n) {
    throw ValidationError("fit_similarity_from_poses: need >= 2 pose pairs");
  }
  // r_local = R alpha^T  =>  alpha = r_local^T R per view; average and project.
  Matrix3d acc = Matrix3d::Zero();
  for (size_t k = 0; k < n; ++k) {
    acc += local_poses[k].r.matrix().transpose() * global_poses[k].r.matrix();
  }
  const Matrix3d alpha = project_to_so3(acc);

  Vector3d mean_g = Vector3d::Zero(), mean_l = Vector3d::Zero();
  for (size_t k = 0; k < n; ++k) {
    mean_g += global_poses[k].c;
    mean_l += local_poses[k].c;
  }
  mean_g /= double(n);
  mean_l /= double(n);

  double num = 0.0, den = 0.0;
  for (size_t k = 0; k < n; ++k) {
    const Vector3d a = alpha * (global_poses[k].c - mean_g);
    const Vector3d b = local_poses[k].c - mean_l;
    num += a.dot(b);
    den += a.squaredNorm();
  }
  if (den < 1e-30 || num <= 0.0) {
    throw NumericalError("fit_similarity_from_poses: degenerate center configuration");
  }
  const double lambda = num / den;
  const Vector3d beta = mean_l - lambda * (alpha * mean_g);
  return Similarity(lambda, Rotation::from_matrix(alpha), beta);
}

Similarity fit_similarity_from_points(const std::vector<Vector3d>& src,
                                      const std::vector<Vector3d>& dst) {
  const size_t n = src.size();
  if (n < 3 || dst.size() != n) {
    throw ValidationError("fit_similarity_from_points: need >= 3 point pairs");
  }
  Eigen::Matrix3Xd a(3, n), b(3, n);
  for (size_t i = 0; i < n; ++i) {
    a.col(i) = src[i];
    b.col(i) = dst[i];
  }
  const Eigen::Matrix4d t = Eigen::umeyama(a, b, true);
  const Matrix3d rs = t.topLeftCorner<3, 3>();
  const double lambda = std::cbrt(rs.determinant());
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw NumericalError("fit_similarity_from_points: degenerate alignment");
  }
  return Similarity(lambda, Rotation::project(rs / lambda), t.topRightCorner<3, 1>());
}

}  // namespace pba
