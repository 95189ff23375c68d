#pragma once

// SO(3)/SE(3) primitives. Twists are ordered [rho; phi] (translational,
// rotational); body velocities [nu; omega]. Poses are body->ECEF transforms.

#include <Eigen/Dense>

#include <cstdint>

#include "ctnav/error.hpp"

namespace ctnav::lie {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// Below this angle the exp/log/Jacobian kernels switch to second-order Taylor
// expansions; above pi - 1e-6 the principal log is refused.
inline constexpr double kSmallAngle = 1e-8;
inline constexpr double kLogAngleMax = 3.14159265358979323846 - 1e-6;
inline constexpr std::uint32_t kRenormEvery = 1000;

enum class JacobianMode { kExact, kApprox };

Mat3 hat(const Vec3& v);
Vec3 vee(const Mat3& m);

Mat3 exp_so3(const Vec3& phi);
Vec3 log_so3(const Mat3& r);  // NearPiRotation beyond kLogAngleMax
Mat3 jl_so3(const Vec3& phi);
Mat3 jl_so3_inv(const Vec3& phi);
inline Mat3 jr_so3(const Vec3& phi) { return jl_so3(-phi); }
inline Mat3 jr_so3_inv(const Vec3& phi) { return jl_so3_inv(-phi); }

Mat3 project_so3(const Mat3& m);  // polar projection onto SO(3)

class Pose {
 public:
  Pose() : r_(Mat3::Identity()), p_(Vec3::Zero()) {}
  Pose(const Mat3& r, const Vec3& p) : r_(r), p_(p) {}

  static Pose identity() { return Pose(); }

  const Mat3& rotation() const { return r_; }
  const Vec3& translation() const { return p_; }

  // Composition re-orthonormalizes (polar projection) every kRenormEvery
  // chained products so long chains keep det/orthonormality drift < 1e-9.
  Pose operator*(const Pose& rhs) const;
  Pose inverse() const;
  Vec3 operator*(const Vec3& point) const { return r_ * point + p_; }
  Pose normalized() const { return Pose(project_so3(r_), p_); }

 private:
  Mat3 r_;
  Vec3 p_;
  std::uint32_t drift_ = 0;
};

Pose exp_se3(const Vec6& xi);
Vec6 log_se3(const Pose& t);  // NearPiRotation beyond kLogAngleMax

// Eq.-style curly-wedge adjoint of a twist: [[phi^, rho^],[0, phi^]].
Mat6 adjoint_curlywedge(const Vec6& xi);
// Group adjoint Ad(T): T exp(xi^) T^-1 = exp((Ad(T) xi)^).
Mat6 adjoint(const Pose& t);

// Left Jacobian of SE(3): exact (series-summed, machine precision) or, in
// approx mode, the identity-minus-half-adjoint approximation of its INVERSE.
Mat6 left_jacobian_se3(const Vec6& xi, JacobianMode mode = JacobianMode::kExact);
Mat6 left_jacobian_se3_inv(const Vec6& xi, JacobianMode mode = JacobianMode::kExact);

// value = J_l(xi) v; when d_xi is non-null it receives d(J_l(xi) v)/d(xi).
Vec6 jl_apply(const Vec6& xi, const Vec6& v, Mat6* d_xi = nullptr);
Vec6 jl_inv_apply(const Vec6& xi, const Vec6& v, JacobianMode mode = JacobianMode::kExact,
                  Mat6* d_xi = nullptr);

// Right-handed counterparts, J_r(xi) = J_l(-xi).
Vec6 jr_apply(const Vec6& xi, const Vec6& v, Mat6* d_xi = nullptr);
Vec6 jr_inv_apply(const Vec6& xi, const Vec6& v, JacobianMode mode = JacobianMode::kExact,
                  Mat6* d_xi = nullptr);
inline Mat6 right_jacobian_se3(const Vec6& xi, JacobianMode mode = JacobianMode::kExact) {
  return left_jacobian_se3(-xi, mode);
}
inline Mat6 right_jacobian_se3_inv(const Vec6& xi, JacobianMode mode = JacobianMode::kExact) {
  return left_jacobian_se3_inv(-xi, mode);
}

}  // namespace ctnav::lie
