#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>

namespace pba {

// Deterministic random source. All randomness in the pipeline flows through
// this generator so that a single seed reproduces a run bit-for-bit; the
// transforms are hand-rolled instead of <random> distributions to keep the
// streams stable across standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  // Derives an independent stream, e.g. one per motion or per stage.
  Rng fork(uint64_t salt) const {
    Rng r(mix(state_ ^ mix(salt)));
    return r;
  }

  uint64_t next_u64() {
    state_ = mix(state_ + 0x9e3779b97f4a7c15ull);
    return state_;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) {  // [0, n)
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::Vector3d normal3() {
    Eigen::Vector3d v;  // keep draw order explicit
    v.x() = normal();
    v.y() = normal();
    v.z() = normal();
    return v;
  }

  // Uniform direction on the unit sphere.
  Eigen::Vector3d unit_vector() {
    Eigen::Vector3d v;
    do {
      v = normal3();
    } while (v.norm() < 1e-12);
    return v.normalized();
  }

  // Uniform rotation, sampled as a normalized quaternion and converted.
  Eigen::Matrix3d rotation() {
    Eigen::Vector4d q;
    do {
      for (int i = 0; i < 4; ++i) q[i] = normal();
    } while (q.norm() < 1e-12);
    q.normalize();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d m;
    m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return m;
  }

 private:
  static uint64_t mix(uint64_t z) {  // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pba
