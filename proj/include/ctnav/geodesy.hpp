#pragma once

// WGS84 frame conversions: geodetic (LLH) <-> ECEF plus the ECEF->NED/ENU
// direction cosine matrices. Angles are radians everywhere; degrees exist
// only at CLI boundaries.

#include <Eigen/Dense>

#include "ctnav/error.hpp"

namespace ctnav::geodesy {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Wgs84Constants {
  double ecc = 0.08181919;  // eccentricity
  double a_m = 6378137.0;   // equatorial radius

  double e2() const { return ecc * ecc; }
  double b_m() const { return a_m * std::sqrt(1.0 - e2()); }
};

struct GeodeticCoord {
  double latitude_rad = 0.0;   // |lat| <= pi/2
  double longitude_rad = 0.0;  // normalized to (-pi, pi]
  double height_m = 0.0;
};

// Transverse radius of curvature R_e(phi) = a / sqrt(1 - ecc^2 sin^2 phi).
double transverse_radius(double latitude_rad, const Wgs84Constants& wgs = {});

Vec3 llh_to_ecef(const GeodeticCoord& p, const Wgs84Constants& wgs = {});

// Heikkinen's closed-form inverse. On the polar axis (x = y = 0) longitude is
// 0 by convention. DegenerateInput when |p| <= 1e3 m.
GeodeticCoord ecef_to_llh(const Vec3& p, const Wgs84Constants& wgs = {});

Mat3 dcm_ecef_to_ned(const GeodeticCoord& origin);
Mat3 dcm_ecef_to_enu(const GeodeticCoord& origin);

// Tangent-plane offset of p relative to origin.
Vec3 ecef_to_enu_point(const Vec3& p, const GeodeticCoord& origin,
                       const Wgs84Constants& wgs = {});

// ZYX Euler angles (roll, pitch, yaw) of a body->NED rotation.
Vec3 ned_euler(const Mat3& r_b_n);

// Spherical gravity: 9.80665 m/s^2 toward the Earth center. DegenerateInput
// when |p| <= 1e3 m.
Vec3 gravity_ecef(const Vec3& p_ecef);

}  // namespace ctnav::geodesy
