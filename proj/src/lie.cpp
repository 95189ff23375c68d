#include "ctnav/lie.hpp"

#include <array>
#include <cmath>

namespace ctnav::lie {

namespace {

// Series truncation for the SE(3) Jacobian kernels. The exponential-type
// series below converge for any twist; 64 terms is far past machine epsilon
// for every rotation magnitude accepted by log_se3.
constexpr int kMaxTerms = 64;

struct JacobianSeries {
  // Powers of ad(xi) and ad(xi)^n v for n = 0..count-1.
  std::array<Mat6, kMaxTerms> lpow;
  std::array<Vec6, kMaxTerms> wpow;
  std::array<double, kMaxTerms> coef;  // 1/(n+1)!
  int count = 0;
};

// Accumulates J_l(xi) v = sum_n ad^n v / (n+1)! keeping the intermediates
// needed for the directional-derivative matrix.
Vec6 jl_series(const Vec6& xi, const Vec6& v, JacobianSeries* keep) {
  const Mat6 a = adjoint_curlywedge(xi);
  Vec6 value = v;
  Mat6 lp = Mat6::Identity();
  Vec6 w = v;
  double c = 1.0;
  if (keep) {
    keep->lpow[0] = lp;
    keep->wpow[0] = w;
    keep->coef[0] = c;
    keep->count = 1;
  }
  const double scale = std::max(v.template lpNorm<Eigen::Infinity>(), 1e-300);
  for (int n = 1; n < kMaxTerms; ++n) {
    w = a * w;
    lp = lp * a;
    c /= static_cast<double>(n + 1);
    value += c * w;
    if (keep) {
      keep->lpow[n] = lp;
      keep->wpow[n] = w;
      keep->coef[n] = c;
      keep->count = n + 1;
    }
    const double term = c * w.template lpNorm<Eigen::Infinity>();
    const double lterm = c * lp.template lpNorm<Eigen::Infinity>() * scale;
    if (term < 1e-18 * scale && lterm < 1e-18 * scale && n >= 2) break;
  }
  return value;
}

// d(J_l(xi) v)/d(xi) from the stored series:
//   d/d(eps) ad_{xi+eps}^n v = sum_{j+k=n-1} ad^j ad_eps ad^k v
// and ad_eps w = -ad_w eps, so each (j,k) pair contributes
// -coef[j+k+1] * lpow[j] * ad(wpow[k]).
Mat6 jl_series_derivative(const JacobianSeries& s) {
  Mat6 d = Mat6::Zero();
  for (int j = 0; j + 1 < s.count; ++j) {
    for (int k = 0; j + k + 1 < s.count; ++k) {
      d -= s.coef[j + k + 1] * (s.lpow[j] * adjoint_curlywedge(s.wpow[k]));
    }
  }
  return d;
}

}  // namespace

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

namespace {

// (1 - cos t)/t^2 without cancellation: half-angle form.
double one_minus_cos_over_t2(double theta) {
  const double s = std::sin(0.5 * theta) / theta;
  return 2.0 * s * s;
}

// (t - sin t)/t^3; series below 1e-4 where the direct difference loses digits.
double t_minus_sin_over_t3(double theta) {
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  }
  return (theta - std::sin(theta)) / (theta * theta * theta);
}

// 1/t^2 - (1 + cos t)/(2 t sin t); series below 1e-2 (direct form cancels).
double jl_inv_quad_coef(double theta) {
  if (theta < 1e-2) {
    const double t2 = theta * theta;
    return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  }
  return 1.0 / (theta * theta) -
         0.5 * std::cos(0.5 * theta) / (theta * std::sin(0.5 * theta));
}

}  // namespace

Mat3 exp_so3(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 h = hat(phi);
  if (theta2 < kSmallAngle * kSmallAngle) {
    return Mat3::Identity() + h + 0.5 * h * h;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * h +
         one_minus_cos_over_t2(theta) * h * h;
}

Vec3 log_so3(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double sn = q.vec().norm();
  const double theta = 2.0 * std::atan2(sn, q.w());
  if (theta > kLogAngleMax) {
    raise(ErrorCode::kNearPiRotation, "log_so3: rotation angle within 1e-6 of pi");
  }
  if (sn < kSmallAngle) {
    // theta ~ 2 sn; second-order in the half-angle
    return (2.0 / q.w()) * q.vec();
  }
  return (theta / sn) * q.vec();
}

Mat3 jl_so3(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 h = hat(phi);
  if (theta2 < kSmallAngle * kSmallAngle) {
    return Mat3::Identity() + 0.5 * h + (1.0 / 6.0) * h * h;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + one_minus_cos_over_t2(theta) * h +
         t_minus_sin_over_t3(theta) * h * h;
}

Mat3 jl_so3_inv(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 h = hat(phi);
  if (theta2 < kSmallAngle * kSmallAngle) {
    return Mat3::Identity() - 0.5 * h + (1.0 / 12.0) * h * h;
  }
  return Mat3::Identity() - 0.5 * h + jl_inv_quad_coef(std::sqrt(theta2)) * h * h;
}

Mat3 project_so3(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

Pose Pose::operator*(const Pose& rhs) const {
  Pose out(r_ * rhs.r_, r_ * rhs.p_ + p_);
  out.drift_ = drift_ + rhs.drift_ + 1;
  if (out.drift_ >= kRenormEvery) {
    out.r_ = project_so3(out.r_);
    out.drift_ = 0;
  }
  return out;
}

Pose Pose::inverse() const {
  Pose out(r_.transpose(), -(r_.transpose() * p_));
  out.drift_ = drift_;
  return out;
}

Pose exp_se3(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return Pose(exp_so3(phi), jl_so3(phi) * rho);
}

Vec6 log_se3(const Pose& t) {
  const Vec3 phi = log_so3(t.rotation());
  Vec6 xi;
  xi.head<3>() = jl_so3_inv(phi) * t.translation();
  xi.tail<3>() = phi;
  return xi;
}

Mat6 adjoint_curlywedge(const Vec6& xi) {
  const Mat3 rh = hat(xi.head<3>());
  const Mat3 ph = hat(xi.tail<3>());
  Mat6 m = Mat6::Zero();
  m.topLeftCorner<3, 3>() = ph;
  m.topRightCorner<3, 3>() = rh;
  m.bottomRightCorner<3, 3>() = ph;
  return m;
}

Mat6 adjoint(const Pose& t) {
  Mat6 m = Mat6::Zero();
  m.topLeftCorner<3, 3>() = t.rotation();
  m.topRightCorner<3, 3>() = hat(t.translation()) * t.rotation();
  m.bottomRightCorner<3, 3>() = t.rotation();
  return m;
}

Mat6 left_jacobian_se3(const Vec6& xi, JacobianMode mode) {
  if (mode == JacobianMode::kApprox) {
    // Approx mode hands back the I - 1/2 ad(xi) approximation of the INVERSE,
    // which is the only form downstream consumers use in that configuration.
    return left_jacobian_se3_inv(xi, mode);
  }
  const Mat6 a = adjoint_curlywedge(xi);
  Mat6 value = Mat6::Identity();
  Mat6 pw = Mat6::Identity();
  double c = 1.0;
  for (int n = 1; n < kMaxTerms; ++n) {
    pw = pw * a;
    c /= static_cast<double>(n + 1);
    value += c * pw;
    if (c * pw.template lpNorm<Eigen::Infinity>() < 1e-18 && n >= 2) break;
  }
  return value;
}

Mat6 left_jacobian_se3_inv(const Vec6& xi, JacobianMode mode) {
  if (mode == JacobianMode::kApprox) {
    return Mat6::Identity() - 0.5 * adjoint_curlywedge(xi);
  }
  return left_jacobian_se3(xi, JacobianMode::kExact).partialPivLu().inverse();
}

Vec6 jl_apply(const Vec6& xi, const Vec6& v, Mat6* d_xi) {
  if (!d_xi) return jl_series(xi, v, nullptr);
  JacobianSeries s;
  const Vec6 value = jl_series(xi, v, &s);
  *d_xi = jl_series_derivative(s);
  return value;
}

Vec6 jl_inv_apply(const Vec6& xi, const Vec6& v, JacobianMode mode, Mat6* d_xi) {
  if (mode == JacobianMode::kApprox) {
    if (d_xi) *d_xi = 0.5 * adjoint_curlywedge(v);
    return v - 0.5 * adjoint_curlywedge(xi) * v;
  }
  const Mat6 j = left_jacobian_se3(xi, JacobianMode::kExact);
  Eigen::PartialPivLU<Mat6> lu(j);
  const Vec6 u = lu.solve(v);
  if (d_xi) {
    // d(J^-1 v) = -J^-1 dJ (J^-1 v): reuse the series derivative at u.
    Mat6 dj_u;
    (void)jl_apply(xi, u, &dj_u);
    *d_xi = -lu.solve(dj_u);
  }
  return u;
}

Vec6 jr_apply(const Vec6& xi, const Vec6& v, Mat6* d_xi) {
  const Vec6 value = jl_apply(-xi, v, d_xi);
  if (d_xi) *d_xi = -*d_xi;
  return value;
}

Vec6 jr_inv_apply(const Vec6& xi, const Vec6& v, JacobianMode mode, Mat6* d_xi) {
  const Vec6 value = jl_inv_apply(-xi, v, mode, d_xi);
  if (d_xi) *d_xi = -*d_xi;
  return value;
}

}  // namespace ctnav::lie
