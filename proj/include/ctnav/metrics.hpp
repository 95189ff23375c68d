#pragma once

// Trajectory quality metrics: ENU position errors against ground truth, yaw
// error from the NED attitude, and the path-smoothness functional used to
// grade high-rate published trajectories.

#include <cstdint>
#include <vector>

#include "ctnav/geodesy.hpp"
#include "ctnav/lie.hpp"
#include "ctnav/nav_state.hpp"

namespace ctnav::metrics {

struct EpochError {
  double t = 0.0;
  double err_2d_m = 0.0;    // horizontal (east, north) at the scenario origin
  double err_3d_m = 0.0;
  double err_vel_mps = 0.0;  // world-velocity error magnitude
  double yaw_err_deg = 0.0;  // signed, wrapped to (-180, 180]
};

struct MetricsReport {
  double rmse_2d_m = 0.0;
  double rmse_3d_m = 0.0;
  double max_2d_err_m = 0.0;
  double rmse_vel_mps = 0.0;
  double mean_yaw_err_deg = 0.0;  // mean absolute
  double smoothness_s = 0.0;
  std::vector<EpochError> series;

  // Iteration / runtime statistics (wall time never enters the deterministic
  // metrics artifact; it is reported separately).
  int window_count = 0;
  double mean_iterations = 0.0;
  int max_iterations = 0;
  std::int64_t published_n = 0;
  double wall_time_s = 0.0;
};

// Sum over interior points of (2(pi - theta_i)/(a_i + b_i))^2 where theta_i
// is the angle at p_i formed with its neighbors (law of cosines) and a_i, b_i
// the adjacent segment lengths. Consecutive duplicate points are removed
// first; TooFewPoints unless >= 3 distinct points remain. A straight path
// scores 0; sharper and denser corners score higher.
double smoothness(const std::vector<lie::Vec3>& positions);

// Pairwise evaluation of an estimated trajectory against ground truth states
// at the same timestamps (est[k] vs truth[k]). Position errors are measured
// in the ENU frame anchored at `origin`; yaw is compared in the NED frame at
// the true position. Fills the error fields and the smoothness of the
// estimated path; iteration statistics are left to the caller.
MetricsReport evaluate(const std::vector<NavState>& est, const std::vector<NavState>& truth,
                       const geodesy::GeodeticCoord& origin);

}  // namespace ctnav::metrics
