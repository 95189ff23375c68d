#pragma once

#include <cstdint>
#include <vector>

#include "ctnav/measurements.hpp"
#include "ctnav/nav_state.hpp"
#include "ctnav/scenario.hpp"

namespace ctnav::sim {

// Continuous ground truth over [0, duration]. Twist segments and splines are
// differentiated analytically; GP-sampled trajectories interpolate between
// sampled knots and obtain the body acceleration by central differences.
class GroundTruth {
 public:
  GroundTruth() = default;

  // pose, varpi, varpi_dot and the true clock at t; biases are zero here
  // (the bias random walk is realized per-stream during synthesis).
  NavState state_at(double t) const;
  Eigen::Vector2d clock_at(double t) const;
  double duration() const { return duration_; }
  const lie::Pose& start_pose() const { return start_pose_; }

 private:
  friend GroundTruth make_ground_truth(const Scenario&);

  struct SegmentNode {
    double t0 = 0.0;
    lie::Pose pose;       // at segment start
    lie::Vec3 nu;         // body linear velocity at segment start
    lie::Vec3 omega;      // constant over the segment
    lie::Vec3 accel;      // constant body linear acceleration (omega == 0)
  };
  struct SplineAxis {
    // natural cubic spline: per-interval coefficients a + b u + c u^2 + d u^3
    std::vector<double> a, b, c, d;
  };
  struct Knot {
    double t;
    lie::Pose pose;
    lie::Vec6 varpi;
    lie::Vec6 varpi_dot;
  };

  TrajectoryKind kind_ = TrajectoryKind::kTwistSegments;
  double duration_ = 0.0;
  lie::Pose start_pose_;
  ClockSpec clock_;

  std::vector<SegmentNode> segments_;

  std::vector<double> spline_t_;
  SplineAxis spline_[3];

  std::vector<Knot> knots_;
  double knot_spacing_ = 0.5;
  double gp_qc_ = 0.02;

  NavState twist_state_at(double t) const;
  NavState spline_state_at(double t) const;
  NavState gp_state_at(double t) const;
};

GroundTruth make_ground_truth(const Scenario& scn);

// Idealized circular-orbit constellation at GPS radius; satellites placed by
// azimuth/elevation against the scenario origin so geometry is controlled.
struct Constellation {
  struct Orbit {
    lie::Vec3 radial;    // unit, position direction at t = 0
    lie::Vec3 tangent;   // unit, orthogonal to radial
  };
  double radius_m = 26578e3;
  double rate_rad_s = 0.0;  // orbital angular rate
  std::vector<Orbit> orbits;

  int size() const { return static_cast<int>(orbits.size()); }
  void state_at(int sat, double t, lie::Vec3* pos, lie::Vec3* vel) const;
};

Constellation make_constellation(const Scenario& scn);

// Elevation of a point seen from ground position p_ecef, against the
// ellipsoidal normal.
double elevation_rad(const lie::Vec3& target_ecef, const lie::Vec3& p_ecef);

struct Streams {
  std::vector<ImuSample> imu;
  std::vector<GnssEpoch> gnss;
  std::vector<PvtSolution> pvt;
  std::vector<OdometryIncrement> odometry;
  std::vector<SpeedSample> speed;
  // realized bias random walk sampled at IMU times (for evaluation)
  std::vector<double> bias_t;
  std::vector<lie::Vec3> bias_acc;
  std::vector<lie::Vec3> bias_gyro;
};

// Deterministic given the scenario (bit-identical streams per seed).
Streams synthesize(const Scenario& scn, const GroundTruth& truth, const Constellation& sky);

}  // namespace ctnav::sim
