#pragma once

// Measurement forward models and factor residuals with analytic Jacobians.
//
// All pose Jacobians are with respect to the right perturbation
// T <- T * exp([rho; phi]^); velocity Jacobians are with respect to the
// body-frame velocity state nu (world velocity is R nu). IMU accelerations
// enter as inputs, so no residual differentiates by varpi_dot.

#include <Eigen/Dense>

#include <utility>
#include <vector>

#include "ctnav/error.hpp"
#include "ctnav/lie.hpp"
#include "ctnav/measurements.hpp"
#include "ctnav/nav_state.hpp"

namespace ctnav::factors {

using lie::Mat3;
using lie::Mat6;
using lie::Vec3;
using lie::Vec6;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;

struct ImuNoise {
  double sigma_accel = 8e-3;  // m/s^2 per sqrt(Hz)
  double sigma_gyro = 1e-4;   // rad/s per sqrt(Hz)
};

// Preintegrated IMU increments between two support times, with first-order
// bias-correction Jacobians so a factor survives small bias updates without
// re-integration.
struct Preintegrated {
  Mat3 dR = Mat3::Identity();
  Vec3 dv = Vec3::Zero();
  Vec3 dp = Vec3::Zero();
  double dt_total = 0.0;
  Mat9 covariance = Mat9::Zero();  // rows/cols ordered (dR, dv, dp)
  Vec3 bias_acc_lin = Vec3::Zero();
  Vec3 bias_gyro_lin = Vec3::Zero();
  Vec3 gravity = Vec3::Zero();  // ECEF, at the linearization position
  Mat3 d_dR_d_bg = Mat3::Zero();
  Mat3 d_dv_d_ba = Mat3::Zero();
  Mat3 d_dv_d_bg = Mat3::Zero();
  Mat3 d_dp_d_ba = Mat3::Zero();
  Mat3 d_dp_d_bg = Mat3::Zero();
};

// Integrates sample k over [t_k, t_{k+1}] (zero-order hold); the last sample
// only terminates the window. Raises EmptyStream / NonMonotoneTime.
Preintegrated preintegrate(const std::vector<ImuSample>& samples, const Vec3& bias_acc,
                           const Vec3& bias_gyro, const Vec3& gravity,
                           const ImuNoise& noise = {});

// Maximum bias excursion from the preintegration linearization point before
// the first-order correction is considered stale.
inline constexpr double kMaxBiasExcursion = 0.1;

struct ImuFactorResult {
  Vec9 residual;  // rows (r_dR, r_dv, r_dp)
  Mat9 covariance;
  Eigen::Matrix<double, 9, 6> d_pose_i, d_varpi_i, d_pose_j, d_varpi_j;
  Eigen::Matrix<double, 9, 3> d_bias_acc, d_bias_gyro;  // biases of x_i
};

ImuFactorResult imu_factor_residual(const NavState& x_i, const NavState& x_j,
                                    const Preintegrated& pre);

// Forward mechanization: applies bias-corrected increments to x_i so that
// imu_factor_residual(x_i, propagate(x_i, pre), pre) vanishes. Body rate and
// varpi_dot are copied from x_i (callers with fresher gyro data overwrite
// them); the clock advances by its drift. StaleBiasLinearization as above.
NavState propagate(const NavState& x_i, const Preintegrated& pre);

struct BiasResult {
  Vec6 residual;  // (b_acc_j - b_acc_i, b_gyro_j - b_gyro_i); Jacobians +/-I
};

BiasResult bias_residual(const NavState& x_i, const NavState& x_j);

// Brownian-motion covariance for the bias factor over dt seconds.
Mat6 bias_random_walk_covariance(double dt, double sigma_ba, double sigma_bg);

struct BetweenResult {
  Vec6 residual;  // ln(T_i^-1 T_j delta)^vee
  Mat6 d_pose_i, d_pose_j;
};

BetweenResult between_pose_residual(const NavState& x_i, const NavState& x_j,
                                    const OdometryIncrement& odo);

struct Velocity2dResult {
  Eigen::Vector2d residual;
  Eigen::Matrix<double, 2, 6> d_varpi;  // lever term uses the measured rate
};

Velocity2dResult velocity2d_residual(const NavState& x, const SpeedSample& s);

struct PvtResult {
  Vec6 residual;  // (antenna position error ECEF, velocity error NED)
  Mat6 d_pose, d_varpi;
};

PvtResult pvt_residual(const NavState& x, const PvtSolution& z, const Vec3& lever_arm);

struct PrDoResult {
  Eigen::Vector2d residual;  // (r_Pr, r_Do)
  Eigen::Matrix<double, 2, 6> d_pose, d_varpi;
  Eigen::Matrix2d d_clock;
};

// clock = (c_b, c_d) evaluated at the observation time; gyro is the measured
// body rate entering the antenna lever-arm velocity.
PrDoResult prdo_residual(const NavState& x, const SatObs& sat, const Eigen::Vector2d& clock,
                         const Vec3& lever_arm, const Vec3& gyro, double wavelength_m);

// (eta^2_rho, eta^2_doppler) = lambda * 10^(-C/N0 / 10).
std::pair<double, double> cn0_variance(double cn0_dbhz, double lambda_rho,
                                       double lambda_doppler);

struct ClockResult {
  Eigen::Vector2d residual;
  Eigen::Matrix2d d_clock_i, d_clock_j;
};

ClockResult clock_residual(const NavState& x_i, const NavState& x_j, double dt);

struct Robustified {
  Eigen::VectorXd whitened;  // sqrt(weight) * Sigma^-1/2 * residual
  double weight = 1.0;
  double norm = 0.0;  // whitened norm before weighting
};

Robustified apply_robust(const Eigen::VectorXd& residual, const Eigen::MatrixXd& covariance,
                         const RobustLoss& loss);

}  // namespace ctnav::factors
