#pragma once

#include <Eigen/Dense>

#include <vector>

#include "ctnav/lie.hpp"

namespace ctnav {

struct ImuSample {
  double t = 0.0;
  lie::Vec3 accel = lie::Vec3::Zero();  // specific force, body frame
  lie::Vec3 gyro = lie::Vec3::Zero();
};

// One satellite's observables; atmospheric delays and the satellite clock
// terms are assumed already removed upstream.
struct SatObs {
  int sat_id = 0;
  lie::Vec3 sat_pos = lie::Vec3::Zero();  // ECEF
  lie::Vec3 sat_vel = lie::Vec3::Zero();
  double pseudorange_m = 0.0;
  double doppler_hz = 0.0;
  double cn0_dbhz = 45.0;
  double elevation_rad = 0.0;
};

struct GnssEpoch {
  double t = 0.0;
  double wavelength_m = 0.190293672798365;  // L1 carrier
  std::vector<SatObs> sats;
};

struct PvtSolution {
  double t = 0.0;
  lie::Vec3 antenna_pos = lie::Vec3::Zero();    // ECEF
  lie::Vec3 velocity_ned = lie::Vec3::Zero();   // at the measured LLH
  Eigen::Matrix<double, 6, 1> sigma = Eigen::Matrix<double, 6, 1>::Ones();
};

struct OdometryIncrement {
  double t_i = 0.0;
  double t_j = 0.0;
  lie::Pose delta;  // enters the residual as ln(T_i^-1 T_j delta)^vee
  lie::Mat6 covariance = lie::Mat6::Identity();
};

struct SpeedSample {
  double t = 0.0;
  Eigen::Vector2d v2d = Eigen::Vector2d::Zero();    // body x/y, m/s
  lie::Vec3 lever_arm = lie::Vec3::Zero();          // sensor offset, body
  lie::Vec3 gyro_at_t = lie::Vec3::Zero();          // measured rate for the lever term
  Eigen::Vector2d sigma = Eigen::Vector2d::Ones();
};

enum class LossKind { kNone, kCauchy, kHuber };

struct RobustLoss {
  LossKind kind = LossKind::kNone;
  double scale = 1.0;
};

}  // namespace ctnav
