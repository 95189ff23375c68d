#include "ctnav/factors.hpp"

#include <cmath>

#include "ctnav/geodesy.hpp"

namespace ctnav::factors {
namespace {

Mat3 hat3(const Vec3& v) { return lie::hat(v); }

}  // namespace

Preintegrated preintegrate(const std::vector<ImuSample>& samples, const Vec3& bias_acc,
                           const Vec3& bias_gyro, const Vec3& gravity, const ImuNoise& noise) {
  if (samples.empty()) raise(ErrorCode::kEmptyStream, "preintegrate: no samples");
  Preintegrated out;
  out.bias_acc_lin = bias_acc;
  out.bias_gyro_lin = bias_gyro;
  out.gravity = gravity;
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    const double dt = samples[k + 1].t - samples[k].t;
    if (dt < 0.0)
      raise(ErrorCode::kNonMonotoneTime, "preintegrate: timestamps decrease");
    if (dt == 0.0) continue;
    const Vec3 a = samples[k].accel - bias_acc;
    const Vec3 w = samples[k].gyro - bias_gyro;
    const Mat3 e = lie::exp_so3(w * dt);
    const Mat3 jr = lie::jr_so3(w * dt);
    const Mat3& r = out.dR;

    // First-order noise propagation, state order (delta_phi, delta_v,
    // delta_p); discrete variance is the continuous density over dt.
    Mat9 a_mat = Mat9::Identity();
    a_mat.block<3, 3>(0, 0) = e.transpose();
    a_mat.block<3, 3>(3, 0) = -r * hat3(a) * dt;
    a_mat.block<3, 3>(6, 0) = -0.5 * r * hat3(a) * dt * dt;
    a_mat.block<3, 3>(6, 3) = dt * Mat3::Identity();
    Eigen::Matrix<double, 9, 6> b_mat = Eigen::Matrix<double, 9, 6>::Zero();
    b_mat.block<3, 3>(0, 0) = jr * dt;
    b_mat.block<3, 3>(3, 3) = r * dt;
    b_mat.block<3, 3>(6, 3) = 0.5 * r * dt * dt;
    Eigen::Matrix<double, 6, 6> n = Eigen::Matrix<double, 6, 6>::Zero();
    n.topLeftCorner<3, 3>() = (noise.sigma_gyro * noise.sigma_gyro / dt) * Mat3::Identity();
    n.bottomRightCorner<3, 3>() = (noise.sigma_accel * noise.sigma_accel / dt) * Mat3::Identity();
    out.covariance = a_mat * out.covariance * a_mat.transpose() +
                     b_mat * n * b_mat.transpose();

    // Bias-correction Jacobians; order matters (each row uses the previous
    // row's integrals before they advance).
    out.d_dp_d_ba += out.d_dv_d_ba * dt - 0.5 * r * dt * dt;
    out.d_dp_d_bg += out.d_dv_d_bg * dt - 0.5 * r * hat3(a) * out.d_dR_d_bg * dt * dt;
    out.d_dv_d_ba -= r * dt;
    out.d_dv_d_bg -= r * hat3(a) * out.d_dR_d_bg * dt;
    out.d_dR_d_bg = e.transpose() * out.d_dR_d_bg - jr * dt;

    out.dp += out.dv * dt + 0.5 * r * a * dt * dt;
    out.dv += r * a * dt;
    out.dR = r * e;
    out.dt_total += dt;
  }
  out.dR = lie::project_so3(out.dR);
  return out;
}

ImuFactorResult imu_factor_residual(const NavState& x_i, const NavState& x_j,
                                    const Preintegrated& pre) {
  const Vec3 dba = x_i.bias_acc - pre.bias_acc_lin;
  const Vec3 dbg = x_i.bias_gyro - pre.bias_gyro_lin;
  if (dba.norm() >= kMaxBiasExcursion || dbg.norm() >= kMaxBiasExcursion)
    raise(ErrorCode::kStaleBiasLinearization,
          "imu factor: bias moved too far from the preintegration point");

  const double dt = pre.dt_total;
  const Mat3& r_i = x_i.pose.rotation();
  const Mat3& r_j = x_j.pose.rotation();
  const Mat3 rij = r_i.transpose() * r_j;
  const Vec3 nu_i = x_i.varpi.head<3>();
  const Vec3 nu_j = x_j.varpi.head<3>();
  const Vec3& g = pre.gravity;

  const Mat3 dR_corr = pre.dR * lie::exp_so3(pre.d_dR_d_bg * dbg);
  const Vec3 dv_corr = pre.dv + pre.d_dv_d_ba * dba + pre.d_dv_d_bg * dbg;
  const Vec3 dp_corr = pre.dp + pre.d_dp_d_ba * dba + pre.d_dp_d_bg * dbg;

  ImuFactorResult out;
  const Vec3 r_dR = lie::log_so3(dR_corr.transpose() * rij);
  const Vec3 m_v = r_i.transpose() * (r_j * nu_j - g * dt);
  const Vec3 m_p =
      r_i.transpose() * (x_j.pose.translation() - x_i.pose.translation() - 0.5 * g * dt * dt);
  out.residual.segment<3>(0) = r_dR;
  out.residual.segment<3>(3) = m_v - nu_i - dv_corr;
  out.residual.segment<3>(6) = m_p - nu_i * dt - dp_corr;
  out.covariance = pre.covariance;

  const Mat3 jri = lie::jr_so3(r_dR).inverse();
  out.d_pose_i.setZero();
  out.d_pose_j.setZero();
  out.d_varpi_i.setZero();
  out.d_varpi_j.setZero();
  out.d_bias_acc.setZero();
  out.d_bias_gyro.setZero();

  out.d_pose_i.block<3, 3>(0, 3) = -jri * rij.transpose();
  out.d_pose_j.block<3, 3>(0, 3) = jri;
  out.d_bias_gyro.block<3, 3>(0, 0) = -lie::jl_so3_inv(r_dR) * pre.d_dR_d_bg;

  out.d_pose_i.block<3, 3>(3, 3) = hat3(m_v);
  out.d_pose_j.block<3, 3>(3, 3) = -rij * hat3(nu_j);
  out.d_varpi_i.block<3, 3>(3, 0) = -Mat3::Identity();
  out.d_varpi_j.block<3, 3>(3, 0) = rij;
  out.d_bias_acc.block<3, 3>(3, 0) = -pre.d_dv_d_ba;
  out.d_bias_gyro.block<3, 3>(3, 0) = -pre.d_dv_d_bg;

  out.d_pose_i.block<3, 3>(6, 0) = -Mat3::Identity();
  out.d_pose_i.block<3, 3>(6, 3) = hat3(m_p);
  out.d_pose_j.block<3, 3>(6, 0) = rij;
  out.d_varpi_i.block<3, 3>(6, 0) = -dt * Mat3::Identity();
  out.d_bias_acc.block<3, 3>(6, 0) = -pre.d_dp_d_ba;
  out.d_bias_gyro.block<3, 3>(6, 0) = -pre.d_dp_d_bg;
  return out;
}

NavState propagate(const NavState& x_i, const Preintegrated& pre) {
  const Vec3 dba = x_i.bias_acc - pre.bias_acc_lin;
  const Vec3 dbg = x_i.bias_gyro - pre.bias_gyro_lin;
  if (dba.norm() >= kMaxBiasExcursion || dbg.norm() >= kMaxBiasExcursion)
    raise(ErrorCode::kStaleBiasLinearization,
          "propagate: bias moved too far from the preintegration point");

  const Mat3 dR_corr = pre.dR * lie::exp_so3(pre.d_dR_d_bg * dbg);
  const Vec3 dv_corr = pre.dv + pre.d_dv_d_ba * dba + pre.d_dv_d_bg * dbg;
  const Vec3 dp_corr = pre.dp + pre.d_dp_d_ba * dba + pre.d_dp_d_bg * dbg;

  const double dt = pre.dt_total;
  const Mat3& r_i = x_i.pose.rotation();
  const Vec3 p_i = x_i.pose.translation();
  const Vec3 v_i = r_i * x_i.varpi.head<3>();

  const Mat3 r_j = lie::project_so3(r_i * dR_corr);
  const Vec3 v_j = v_i + pre.gravity * dt + r_i * dv_corr;
  const Vec3 p_j = p_i + v_i * dt + 0.5 * pre.gravity * dt * dt + r_i * dp_corr;

  NavState x_j = x_i;
  x_j.t = x_i.t + dt;
  x_j.pose = lie::Pose(r_j, p_j);
  x_j.varpi.head<3>() = r_j.transpose() * v_j;
  x_j.clock(0) += dt * x_i.clock(1);
  return x_j;
}

BiasResult bias_residual(const NavState& x_i, const NavState& x_j) {
  BiasResult out;
  out.residual.head<3>() = x_j.bias_acc - x_i.bias_acc;
  out.residual.tail<3>() = x_j.bias_gyro - x_i.bias_gyro;
  return out;
}

Mat6 bias_random_walk_covariance(double dt, double sigma_ba, double sigma_bg) {
  if (dt <= 0.0) raise(ErrorCode::kNonPositiveDt, "bias covariance: dt must be > 0");
  Mat6 cov = Mat6::Zero();
  cov.topLeftCorner<3, 3>() = sigma_ba * sigma_ba * dt * Mat3::Identity();
  cov.bottomRightCorner<3, 3>() = sigma_bg * sigma_bg * dt * Mat3::Identity();
  return cov;
}

BetweenResult between_pose_residual(const NavState& x_i, const NavState& x_j,
                                    const OdometryIncrement& odo) {
  BetweenResult out;
  out.residual = lie::log_se3(x_i.pose.inverse() * x_j.pose * odo.delta);
  const Mat6 jr_inv = lie::right_jacobian_se3_inv(out.residual);
  out.d_pose_i = -lie::left_jacobian_se3_inv(out.residual);
  out.d_pose_j = jr_inv * lie::adjoint(odo.delta.inverse());
  return out;
}

Velocity2dResult velocity2d_residual(const NavState& x, const SpeedSample& s) {
  Velocity2dResult out;
  const Vec3 predicted = x.varpi.head<3>() + s.gyro_at_t.cross(s.lever_arm);
  out.residual = predicted.head<2>() - s.v2d;
  out.d_varpi.setZero();
  out.d_varpi(0, 0) = 1.0;
  out.d_varpi(1, 1) = 1.0;
  return out;
}

PvtResult pvt_residual(const NavState& x, const PvtSolution& z, const Vec3& lever_arm) {
  const Mat3& r = x.pose.rotation();
  const Vec3 nu = x.varpi.head<3>();
  const Vec3 omega = x.varpi.tail<3>();
  const Vec3 p_ant = x.pose.translation() + r * lever_arm;
  const Vec3 arm_rate = nu + omega.cross(lever_arm);
  const Vec3 v_ant = r * arm_rate;

  const Mat3 r_en = geodesy::dcm_ecef_to_ned(geodesy::ecef_to_llh(z.antenna_pos));

  PvtResult out;
  out.residual.head<3>() = p_ant - z.antenna_pos;
  out.residual.tail<3>() = r_en * v_ant - z.velocity_ned;
  out.d_pose.setZero();
  out.d_varpi.setZero();
  out.d_pose.block<3, 3>(0, 0) = r;
  out.d_pose.block<3, 3>(0, 3) = -r * hat3(lever_arm);
  out.d_pose.block<3, 3>(3, 3) = r_en * (-r * hat3(arm_rate));
  out.d_varpi.block<3, 3>(3, 0) = r_en * r;
  out.d_varpi.block<3, 3>(3, 3) = r_en * (-r * hat3(lever_arm));
  return out;
}

PrDoResult prdo_residual(const NavState& x, const SatObs& sat, const Eigen::Vector2d& clock,
                         const Vec3& lever_arm, const Vec3& gyro, double wavelength_m) {
  const Mat3& r = x.pose.rotation();
  const Vec3 nu = x.varpi.head<3>();
  const Vec3 p_ant = x.pose.translation() + r * lever_arm;
  const Vec3 arm_rate = nu + gyro.cross(lever_arm);
  const Vec3 v_ant = r * arm_rate;

  const Vec3 to_sat = sat.sat_pos - p_ant;
  const double dist = to_sat.norm();
  if (dist <= 1e6)
    raise(ErrorCode::kDegenerateGeometry, "prdo: antenna-satellite distance below 1e6 m");
  const Vec3 u = to_sat / dist;
  const Vec3 dv = v_ant - sat.sat_vel;

  PrDoResult out;
  out.residual[0] = dist + clock[0] - sat.pseudorange_m;
  out.residual[1] = u.dot(dv) + clock[1] + wavelength_m * sat.doppler_hz;

  // d dist / d p_ant = -u^T; d u / d p_ant = -(I - u u^T)/dist.
  const Eigen::RowVector3d du_term = dv.transpose() * (-(Mat3::Identity() - u * u.transpose()) / dist);
  const Mat3 dpant_drho = r;
  const Mat3 dpant_dphi = -r * hat3(lever_arm);
  const Mat3 dvant_dphi = -r * hat3(arm_rate);

  out.d_pose.setZero();
  out.d_varpi.setZero();
  out.d_pose.block<1, 3>(0, 0) = -u.transpose() * dpant_drho;
  out.d_pose.block<1, 3>(0, 3) = -u.transpose() * dpant_dphi;
  out.d_pose.block<1, 3>(1, 0) = du_term * dpant_drho;
  out.d_pose.block<1, 3>(1, 3) = du_term * dpant_dphi + u.transpose() * dvant_dphi;
  out.d_varpi.block<1, 3>(1, 0) = u.transpose() * r;
  out.d_clock = Eigen::Matrix2d::Identity();
  return out;
}

std::pair<double, double> cn0_variance(double cn0_dbhz, double lambda_rho,
                                       double lambda_doppler) {
  const double atten = std::pow(10.0, -cn0_dbhz / 10.0);
  return {lambda_rho * atten, lambda_doppler * atten};
}

ClockResult clock_residual(const NavState& x_i, const NavState& x_j, double dt) {
  ClockResult out;
  out.d_clock_i << 1.0, dt, 0.0, 1.0;
  out.d_clock_j = -Eigen::Matrix2d::Identity();
  out.residual = out.d_clock_i * x_i.clock - x_j.clock;
  return out;
}

Robustified apply_robust(const Eigen::VectorXd& residual, const Eigen::MatrixXd& covariance,
                         const RobustLoss& loss) {
  if (loss.scale <= 0.0) raise(ErrorCode::kConfig, "robust loss scale must be > 0");
  const Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success)
    raise(ErrorCode::kIllConditioned, "apply_robust: covariance not positive definite");
  Robustified out;
  out.whitened = llt.matrixL().solve(residual);
  out.norm = out.whitened.norm();
  switch (loss.kind) {
    case LossKind::kNone:
      out.weight = 1.0;
      break;
    case LossKind::kCauchy: {
      const double q = out.norm / loss.scale;
      out.weight = 1.0 / (1.0 + q * q);
      break;
    }
    case LossKind::kHuber:
      out.weight = out.norm <= loss.scale ? 1.0 : loss.scale / out.norm;
      break;
  }
  out.whitened *= std::sqrt(out.weight);
  return out;
}

}  // namespace ctnav::factors
