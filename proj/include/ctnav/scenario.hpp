#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctnav/geodesy.hpp"
#include "ctnav/lie.hpp"

namespace ctnav::sim {

enum class TrajectoryKind { kTwistSegments, kWaypointSpline, kGpSample };

// One piece of a piecewise trajectory. Either a screw segment (constant
// body twist, accel zero) or a straight accelerating segment (omega zero).
// Mixing rotation with linear acceleration has no closed form and is
// rejected at load time. When has_nu is false the segment continues with
// the velocity the previous segment ended on.
struct TwistSegmentSpec {
  double duration = 0.0;
  bool has_nu = false;
  lie::Vec3 nu = lie::Vec3::Zero();
  lie::Vec3 omega = lie::Vec3::Zero();
  lie::Vec3 accel = lie::Vec3::Zero();
};

struct WaypointSpec {
  double t = 0.0;
  lie::Vec3 pos_enu = lie::Vec3::Zero();
};

struct GpSampleSpec {
  double knot_spacing_s = 0.5;
  double qc = 0.02;
};

enum class DegradationKind { kOutage, kMultipath, kReducedSats };

struct DegradationSpec {
  DegradationKind kind = DegradationKind::kOutage;
  double t_start = 0.0;
  double t_end = 0.0;
  double bias_m = 50.0;    // multipath
  double fraction = 0.25;  // multipath
  int keep_n = 4;          // reduced_sats
};

struct ImuSpec {
  double rate_hz = 0.0;
  double delay_s = 0.0;
  double sigma_accel = 0.0;  // m/s^2 per sqrt(Hz)
  double sigma_gyro = 0.0;   // rad/s per sqrt(Hz)
  double sigma_bias_acc_walk = 0.0;
  double sigma_bias_gyro_walk = 0.0;
  lie::Vec3 bias_acc0 = lie::Vec3::Zero();
  lie::Vec3 bias_gyro0 = lie::Vec3::Zero();
};

struct GnssSpec {
  double rate_hz = 0.0;
  double delay_s = 0.0;
  double phase_s = 0.0;
  int sat_count = 8;
  std::uint64_t geometry_seed = 1;
  double cn0_zenith_dbhz = 45.0;
  double cn0_slope_per_deg = 0.0;   // C/N0 drop per degree below zenith
  double cn0_jitter_dbhz = 0.0;
  double lambda_pr = 1e4;           // variance scale, m^2
  double lambda_do = 100.0;         // variance scale, (m/s)^2
  double mask_deg = 15.0;
  lie::Vec3 lever_arm = lie::Vec3::Zero();
};

struct PvtSpec {
  double rate_hz = 0.0;
  double delay_s = 0.0;
  double phase_s = 0.0;
  double sigma_pos_m = 1.0;
  double sigma_vel_mps = 0.1;
  double lying_factor = 1.0;  // reported sigma = lying_factor * true sigma
  lie::Vec3 lever_arm = lie::Vec3::Zero();
};

struct OdometrySpec {
  double rate_hz = 0.0;
  double delay_s = 0.0;
  double sigma_pos_m = 0.02;   // per increment
  double sigma_rot_deg = 0.1;  // per increment
};

struct SpeedSpec {
  double rate_hz = 0.0;
  double delay_s = 0.0;
  double phase_s = 0.0;
  double sigma_mps = 0.05;
  lie::Vec3 lever_arm = lie::Vec3::Zero();
};

struct ClockSpec {
  double bias0_m = 0.0;
  double drift0_mps = 0.0;
};

struct Scenario {
  double duration_s = 60.0;
  std::uint64_t seed = 0;
  geodesy::GeodeticCoord origin{0.0, 0.0, 0.0};

  TrajectoryKind trajectory = TrajectoryKind::kTwistSegments;
  std::vector<TwistSegmentSpec> segments;
  std::vector<WaypointSpec> waypoints;
  GpSampleSpec gp;

  ClockSpec clock;
  ImuSpec imu;
  GnssSpec gnss;
  PvtSpec pvt;
  OdometrySpec odometry;
  SpeedSpec speed;
  std::vector<DegradationSpec> degradations;
};

// TOML-syntax scenario files (subset: [table], [[array-of-table]],
// key = scalar | single-line array, # comments). Unknown keys are
// rejected so typos surface as ConfigError with the offending path.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::string& path);

}  // namespace ctnav::sim
