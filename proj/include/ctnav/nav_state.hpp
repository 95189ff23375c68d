#pragma once

#include <Eigen/Dense>

#include "ctnav/gp_motion.hpp"
#include "ctnav/lie.hpp"

namespace ctnav {

// Full navigation state at one support timestamp. The pose maps body to
// ECEF; velocity is kept in body coordinates (world velocity is R nu), and
// the 6-dof acceleration is an IMU-derived input rather than an estimated
// quantity. Clock terms are in meters / meters-per-second and stay zeroed
// under loose coupling.
struct NavState {
  double t = 0.0;
  lie::Pose pose;
  lie::Vec6 varpi = lie::Vec6::Zero();      // [nu; omega], body frame
  lie::Vec6 varpi_dot = lie::Vec6::Zero();  // input, not estimated
  lie::Vec3 bias_acc = lie::Vec3::Zero();
  lie::Vec3 bias_gyro = lie::Vec3::Zero();
  Eigen::Vector2d clock = Eigen::Vector2d::Zero();  // (c_b m, c_d m/s)

  lie::Vec3 world_velocity() const { return pose.rotation() * varpi.head<3>(); }

  gp::GpAnchor anchor() const {
    gp::GpAnchor a;
    a.pose = pose;
    a.varpi = varpi;
    a.varpi_dot = varpi_dot;
    return a;
  }
};

}  // namespace ctnav
