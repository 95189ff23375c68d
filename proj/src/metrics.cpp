#include "ctnav/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ctnav/error.hpp"

namespace ctnav::metrics {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDupDist = 1e-12;  // consecutive points closer than this collapse

double wrap_deg(double d) {
  while (d > 180.0) d -= 360.0;
  while (d <= -180.0) d += 360.0;
  return d;
}

}  // namespace

double smoothness(const std::vector<lie::Vec3>& positions) {
  std::vector<lie::Vec3> pts;
  pts.reserve(positions.size());
  for (const auto& p : positions) {
    if (!p.allFinite()) raise(ErrorCode::kNonFiniteInput, "smoothness: non-finite point");
    if (pts.empty() || (p - pts.back()).norm() > kDupDist) pts.push_back(p);
  }
  if (pts.size() < 3)
    raise(ErrorCode::kTooFewPoints, "smoothness: needs >= 3 distinct points");

  double s = 0.0;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const double a = (pts[i] - pts[i - 1]).norm();
    const double b = (pts[i + 1] - pts[i]).norm();
    const double c = (pts[i + 1] - pts[i - 1]).norm();
    const double cos_th = std::clamp((a * a + b * b - c * c) / (2.0 * a * b), -1.0, 1.0);
    const double turn = kPi - std::acos(cos_th);  // 0 when collinear
    const double term = 2.0 * turn / (a + b);
    s += term * term;
  }
  return s;
}

MetricsReport evaluate(const std::vector<NavState>& est, const std::vector<NavState>& truth,
                       const geodesy::GeodeticCoord& origin) {
  if (est.size() != truth.size())
    raise(ErrorCode::kConfig, "metrics: est/truth sequences differ in length");
  if (est.empty()) raise(ErrorCode::kTooFewPoints, "metrics: empty trajectory");

  const geodesy::Mat3 r_enu = geodesy::dcm_ecef_to_enu(origin);

  MetricsReport rep;
  rep.series.reserve(est.size());
  double sum2 = 0.0, sum3 = 0.0, sumv = 0.0, sum_yaw = 0.0;
  std::vector<lie::Vec3> path;
  path.reserve(est.size());

  for (std::size_t k = 0; k < est.size(); ++k) {
    const NavState& xe = est[k];
    const NavState& xt = truth[k];
    const lie::Vec3 d_enu = r_enu * (xe.pose.translation() - xt.pose.translation());

    // Attitude compared in the NED frame at the true position so the error is
    // purely rotational.
    const geodesy::Mat3 r_ned =
        geodesy::dcm_ecef_to_ned(geodesy::ecef_to_llh(xt.pose.translation()));
    const double yaw_e = geodesy::ned_euler(r_ned * xe.pose.rotation())(2);
    const double yaw_t = geodesy::ned_euler(r_ned * xt.pose.rotation())(2);

    EpochError e;
    e.t = xt.t;
    e.err_2d_m = d_enu.head<2>().norm();
    e.err_3d_m = d_enu.norm();
    e.err_vel_mps = (xe.world_velocity() - xt.world_velocity()).norm();
    e.yaw_err_deg = wrap_deg((yaw_e - yaw_t) * 180.0 / kPi);
    rep.series.push_back(e);

    sum2 += e.err_2d_m * e.err_2d_m;
    sum3 += e.err_3d_m * e.err_3d_m;
    sumv += e.err_vel_mps * e.err_vel_mps;
    sum_yaw += std::abs(e.yaw_err_deg);
    rep.max_2d_err_m = std::max(rep.max_2d_err_m, e.err_2d_m);
    path.push_back(xe.pose.translation());
  }

  const double n = static_cast<double>(est.size());
  rep.rmse_2d_m = std::sqrt(sum2 / n);
  rep.rmse_3d_m = std::sqrt(sum3 / n);
  rep.rmse_vel_mps = std::sqrt(sumv / n);
  rep.mean_yaw_err_deg = sum_yaw / n;
  rep.published_n = static_cast<std::int64_t>(est.size());

  // A trajectory that never leaves one point (or has fewer than 3 distinct
  // samples) has no defined smoothness; report 0 rather than raising so a
  // stationary scenario still yields a complete report.
  std::size_t distinct = 1;
  for (std::size_t k = 1; k < path.size(); ++k)
    if ((path[k] - path[k - 1]).norm() > kDupDist) ++distinct;
  rep.smoothness_s = distinct >= 3 ? smoothness(path) : 0.0;
  return rep;
}

}  // namespace ctnav::metrics
