#include "ctnav/geodesy.hpp"

#include <cmath>

namespace ctnav::geodesy {

double transverse_radius(double latitude_rad, const Wgs84Constants& wgs) {
  const double s = std::sin(latitude_rad);
  return wgs.a_m / std::sqrt(1.0 - wgs.e2() * s * s);
}

Vec3 llh_to_ecef(const GeodeticCoord& p, const Wgs84Constants& wgs) {
  const double re = transverse_radius(p.latitude_rad, wgs);
  const double clat = std::cos(p.latitude_rad);
  const double slat = std::sin(p.latitude_rad);
  return Vec3((re + p.height_m) * clat * std::cos(p.longitude_rad),
              (re + p.height_m) * clat * std::sin(p.longitude_rad),
              (re * (1.0 - wgs.e2()) + p.height_m) * slat);
}

GeodeticCoord ecef_to_llh(const Vec3& p, const Wgs84Constants& wgs) {
  if (p.norm() <= 1e3) {
    raise(ErrorCode::kDegenerateInput, "ecef_to_llh: point too close to Earth's center");
  }
  const double a = wgs.a_m;
  const double b = wgs.b_m();
  const double e2 = wgs.e2();
  const double ep2 = (a * a - b * b) / (b * b);
  const double x = p.x(), y = p.y(), z = p.z();

  const double r = std::sqrt(x * x + y * y);
  const double f = 54.0 * b * b * z * z;
  const double g = r * r + (1.0 - e2) * z * z - e2 * (a * a - b * b);
  const double c = e2 * e2 * f * r * r / (g * g * g);
  const double s = std::cbrt(1.0 + c + std::sqrt(c * c + 2.0 * c));
  const double pp = f / (3.0 * (s + 1.0 / s + 1.0) * (s + 1.0 / s + 1.0) * g * g);
  const double q = std::sqrt(1.0 + 2.0 * e2 * e2 * pp);
  // The radicand cancels to a tiny negative value on the polar axis; clamp.
  const double rad = std::max(
      0.0, 0.5 * a * a * (1.0 + 1.0 / q) - pp * (1.0 - e2) * z * z / (q * (1.0 + q)) -
               0.5 * pp * r * r);
  const double r0 = -pp * e2 * r / (1.0 + q) + std::sqrt(rad);
  const double ue = std::sqrt((r - e2 * r0) * (r - e2 * r0) + z * z);
  const double ve = std::sqrt((r - e2 * r0) * (r - e2 * r0) + (1.0 - e2) * z * z);
  const double z0 = b * b * z / (a * ve);

  GeodeticCoord out;
  out.height_m = ue * (1.0 - b * b / (a * ve));
  out.latitude_rad = std::atan2(z + ep2 * z0, r);
  out.longitude_rad = (r == 0.0) ? 0.0 : std::atan2(y, x);
  return out;
}

Mat3 dcm_ecef_to_ned(const GeodeticCoord& origin) {
  const double sp = std::sin(origin.latitude_rad);
  const double cp = std::cos(origin.latitude_rad);
  const double sl = std::sin(origin.longitude_rad);
  const double cl = std::cos(origin.longitude_rad);
  Mat3 d;
  d << -sp * cl, -sp * sl, cp,  //
      -sl, cl, 0.0,             //
      -cp * cl, -cp * sl, -sp;
  return d;
}

Mat3 dcm_ecef_to_enu(const GeodeticCoord& origin) {
  const double sp = std::sin(origin.latitude_rad);
  const double cp = std::cos(origin.latitude_rad);
  const double sl = std::sin(origin.longitude_rad);
  const double cl = std::cos(origin.longitude_rad);
  Mat3 d;
  d << -sl, cl, 0.0,            //
      -cl * sp, -sl * sp, cp,   //
      cl * cp, sl * cp, sp;
  return d;
}

Vec3 ecef_to_enu_point(const Vec3& p, const GeodeticCoord& origin,
                       const Wgs84Constants& wgs) {
  return dcm_ecef_to_enu(origin) * (p - llh_to_ecef(origin, wgs));
}

Vec3 ned_euler(const Mat3& r) {
  const double pitch = -std::asin(std::clamp(r(2, 0), -1.0, 1.0));
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return Vec3(roll, pitch, yaw);
}

Vec3 gravity_ecef(const Vec3& p_ecef) {
  const double n = p_ecef.norm();
  if (n <= 1e3)
    raise(ErrorCode::kDegenerateInput, "gravity_ecef: position too close to the Earth center");
  return (-9.80665 / n) * p_ecef;
}

}  // namespace ctnav::geodesy
