#include "ctnav/gp_motion.hpp"

#include <cmath>

namespace ctnav::gp {
namespace {

using lie::JacobianMode;
using lie::Mat6;
using lie::Vec6;

int blocks(GpModel model) { return model == GpModel::kWnoj ? 3 : 2; }

// Unguarded kernels, valid for dt >= 0 (Q(0) = 0, Phi(0) = I); the public
// entry points reject dt <= 0, but interpolation needs the closed endpoints.
GpMat phi_raw(double dt, GpModel model) {
  const int n = state_dim(model);
  GpMat phi = GpMat::Identity(n, n);
  phi.block<6, 6>(0, 6) = dt * Mat6::Identity();
  if (model == GpModel::kWnoj) {
    phi.block<6, 6>(6, 12) = dt * Mat6::Identity();
    phi.block<6, 6>(0, 12) = 0.5 * dt * dt * Mat6::Identity();
  }
  return phi;
}

GpMat q_raw(double dt, const GpHyperparams& hp) {
  const int nb = blocks(hp.model);
  const int n = 6 * nb;
  const double d2 = dt * dt, d3 = d2 * dt, d4 = d3 * dt, d5 = d4 * dt;
  Eigen::Matrix3d c;
  if (hp.model == GpModel::kWnoj) {
    c << d5 / 20.0, d4 / 8.0, d3 / 6.0,  //
        d4 / 8.0, d3 / 3.0, d2 / 2.0,    //
        d3 / 6.0, d2 / 2.0, dt;
  } else {
    c.topLeftCorner<2, 2>() << d3 / 3.0, d2 / 2.0, d2 / 2.0, dt;
  }
  GpMat q = GpMat::Zero(n, n);
  for (int a = 0; a < nb; ++a)
    for (int b = 0; b < nb; ++b)
      q.block<6, 6>(6 * a, 6 * b).diagonal() = c(a, b) * hp.qc_diag;
  return q;
}

GpMat q_inv_closed(double dt, const GpHyperparams& hp) {
  const int nb = blocks(hp.model);
  const int n = 6 * nb;
  const double i1 = 1.0 / dt, i2 = i1 * i1, i3 = i2 * i1, i4 = i3 * i1, i5 = i4 * i1;
  Eigen::Matrix3d c;
  if (hp.model == GpModel::kWnoj) {
    c << 720.0 * i5, -360.0 * i4, 60.0 * i3,  //
        -360.0 * i4, 192.0 * i3, -36.0 * i2,  //
        60.0 * i3, -36.0 * i2, 9.0 * i1;
  } else {
    c.topLeftCorner<2, 2>() << 12.0 * i3, -6.0 * i2, -6.0 * i2, 4.0 * i1;
  }
  GpMat qi = GpMat::Zero(n, n);
  const Vec6 qc_inv = hp.qc_diag.cwiseInverse();
  for (int a = 0; a < nb; ++a)
    for (int b = 0; b < nb; ++b)
      qi.block<6, 6>(6 * a, 6 * b).diagonal() = c(a, b) * qc_inv;
  return qi;
}

void check_hyperparams(const GpHyperparams& hp) {
  if (!hp.qc_diag.allFinite() || (hp.qc_diag.array() <= 0.0).any())
    raise(ErrorCode::kConfig, "qc_diag entries must be finite and > 0");
}

void check_dt(double dt) {
  if (!std::isfinite(dt)) raise(ErrorCode::kNonFiniteInput, "dt is not finite");
  if (dt <= 0.0) raise(ErrorCode::kNonPositiveDt, "dt must be > 0");
}

// Weights against a prebuilt segment (tau relative, closed interval).
std::pair<GpMat, GpMat> weights(const GpSegment& seg, double tau, const GpHyperparams& hp) {
  const GpMat omega = q_raw(tau, hp) * phi_raw(seg.dt() - tau, hp.model).transpose() * seg.q_inv;
  const GpMat lambda = phi_raw(tau, hp.model) - omega * seg.phi;
  return {lambda, omega};
}

// J_r(xi) v in the active mode (the approx configuration pairs I + ad/2 for
// the inverse with I - ad/2 for the forward map).
Vec6 jr_value_apply(const Vec6& xi, const Vec6& v, JacobianMode mode, Mat6* d_xi) {
  if (mode == JacobianMode::kExact) return lie::jr_apply(xi, v, d_xi);
  if (d_xi) *d_xi = 0.5 * lie::adjoint_curlywedge(v);
  return v - 0.5 * lie::adjoint_curlywedge(xi) * v;
}

Mat6 jr_value_matrix(const Vec6& xi, JacobianMode mode) {
  if (mode == JacobianMode::kExact) return lie::right_jacobian_se3(xi);
  return Mat6::Identity() - 0.5 * lie::adjoint_curlywedge(xi);
}

struct Lift {
  Vec6 xi_ji;
  Vec6 xid_j;   // J_r^-1(xi_ji) w_j
  Vec6 xidd_j;  // 1/2 (xid_j)^curlywedge w_j + J_r^-1(xi_ji) wd_j
  // Derivatives of the gamma_j rows (exact for the log map; the inner
  // J^-1 applications follow the active mode so FD always agrees).
  Mat6 g_i;  // d xi_ji / d eps_i = -J_l^-1(xi_ji)
  Mat6 g_j;  // d xi_ji / d eps_j = +J_r^-1(xi_ji)
  Mat6 jr_inv;       // mode-resolved J_r^-1(xi_ji)
  Mat6 d_xid_d_xi;   // d(J_r^-1(xi) w_j)/d xi
  Mat6 d_xidd_d_xi;
  Mat6 d_xidd_d_w;
};

Lift lift(const GpAnchor& x_i, const GpAnchor& x_j, GpModel model, JacobianMode mode,
          bool with_jacobians) {
  Lift out;
  out.xi_ji = lie::log_se3(x_i.pose.inverse() * x_j.pose);
  Mat6 d_xid;
  out.xid_j = lie::jr_inv_apply(out.xi_ji, x_j.varpi, mode, with_jacobians ? &d_xid : nullptr);
  if (model == GpModel::kWnoj) {
    Mat6 d_xidd2;
    const Vec6 jw = lie::jr_inv_apply(out.xi_ji, x_j.varpi_dot, mode,
                                      with_jacobians ? &d_xidd2 : nullptr);
    out.xidd_j = 0.5 * lie::adjoint_curlywedge(out.xid_j) * x_j.varpi + jw;
    if (with_jacobians) {
      const Mat6 ad_w = lie::adjoint_curlywedge(x_j.varpi);
      out.d_xidd_d_xi = -0.5 * ad_w * d_xid + d_xidd2;
      out.d_xidd_d_w =
          0.5 * (lie::adjoint_curlywedge(out.xid_j) - ad_w * lie::right_jacobian_se3_inv(out.xi_ji, mode));
    }
  } else {
    out.xidd_j.setZero();
  }
  if (with_jacobians) {
    out.g_i = -lie::left_jacobian_se3_inv(out.xi_ji);
    out.g_j = lie::right_jacobian_se3_inv(out.xi_ji);
    out.jr_inv = (mode == JacobianMode::kExact) ? out.g_j
                                                : lie::right_jacobian_se3_inv(out.xi_ji, mode);
    out.d_xid_d_xi = d_xid;
  }
  return out;
}

GpVec gamma_i_of(const GpAnchor& x_i, GpModel model) {
  GpVec g = GpVec::Zero(state_dim(model));
  g.segment<6>(6) = x_i.varpi;
  if (model == GpModel::kWnoj) g.segment<6>(12) = x_i.varpi_dot;
  return g;
}

GpVec gamma_j_of(const Lift& lf, GpModel model) {
  GpVec g = GpVec::Zero(state_dim(model));
  g.head<6>() = lf.xi_ji;
  g.segment<6>(6) = lf.xid_j;
  if (model == GpModel::kWnoj) g.segment<6>(12) = lf.xidd_j;
  return g;
}

}  // namespace

GpMat make_transition(double dt, GpModel model) {
  check_dt(dt);
  return phi_raw(dt, model);
}

std::pair<GpMat, GpMat> make_q(double dt, const GpHyperparams& hp) {
  check_dt(dt);
  check_hyperparams(hp);
  return {q_raw(dt, hp), q_inv_closed(dt, hp)};
}

GpSegment make_segment(double t_i, double t_j, const GpHyperparams& hp) {
  check_dt(t_j - t_i);
  check_hyperparams(hp);
  GpSegment seg;
  seg.t_i = t_i;
  seg.t_j = t_j;
  seg.model = hp.model;
  seg.qc_diag = hp.qc_diag;
  seg.phi = phi_raw(t_j - t_i, hp.model);
  auto [q, qi] = make_q(t_j - t_i, hp);
  seg.q = std::move(q);
  seg.q_inv = std::move(qi);
  return seg;
}

std::pair<GpMat, GpMat> interpolation_matrices(double t_i, double t_j, double t_query,
                                               const GpHyperparams& hp) {
  const GpSegment seg = make_segment(t_i, t_j, hp);
  if (!std::isfinite(t_query) || t_query < t_i || t_query > t_j)
    raise(ErrorCode::kQueryOutOfSegment, "t_query outside [t_i, t_j]");
  return weights(seg, t_query - t_i, hp);
}

std::pair<GpVec, GpVec> lift_to_local(const GpAnchor& x_i, const GpAnchor& x_j, GpModel model,
                                      JacobianMode mode) {
  const Lift lf = lift(x_i, x_j, model, mode, false);
  return {gamma_i_of(x_i, model), gamma_j_of(lf, model)};
}

InterpolatedState query_state(const GpAnchor& x_i, const GpAnchor& x_j, const GpSegment& segment,
                              double tau, JacobianMode mode, bool with_jacobians) {
  const double dt = segment.dt();
  if (!std::isfinite(tau)) raise(ErrorCode::kNonFiniteInput, "tau is not finite");
  if (tau < 0.0 || tau > dt) raise(ErrorCode::kQueryOutOfSegment, "tau outside [0, dt]");
  GpHyperparams hp;
  hp.model = segment.model;
  hp.qc_diag = segment.qc_diag;

  const auto [lambda, omega] = weights(segment, tau, hp);
  const Lift lf = lift(x_i, x_j, segment.model, mode, with_jacobians);
  const GpVec gamma_q = lambda * gamma_i_of(x_i, segment.model) +
                        omega * gamma_j_of(lf, segment.model);
  const Vec6 xi_tau = gamma_q.head<6>();
  const Vec6 xid_tau = gamma_q.segment<6>(6);

  InterpolatedState out;
  const lie::Pose e = lie::exp_se3(xi_tau);
  out.pose = x_i.pose * e;
  Mat6 d_vel_d_xi;
  out.varpi = jr_value_apply(xi_tau, xid_tau, mode, with_jacobians ? &d_vel_d_xi : nullptr);
  if (!with_jacobians) return out;

  const int n = state_dim(segment.model);
  // Rows of d gamma_j / d (eps_i, eps_j, dvarpi_j); gamma_i depends on
  // varpi_i only, through its middle block.
  Eigen::Matrix<double, Eigen::Dynamic, 6, 0, 18, 6> dgj_ei(n, 6), dgj_ej(n, 6), dgj_wj(n, 6);
  dgj_ei.topRows<6>() = lf.g_i;
  dgj_ei.middleRows<6>(6) = lf.d_xid_d_xi * lf.g_i;
  dgj_ej.topRows<6>() = lf.g_j;
  dgj_ej.middleRows<6>(6) = lf.d_xid_d_xi * lf.g_j;
  dgj_wj.topRows<6>().setZero();
  dgj_wj.middleRows<6>(6) = lf.jr_inv;
  if (segment.model == GpModel::kWnoj) {
    dgj_ei.bottomRows<6>() = lf.d_xidd_d_xi * lf.g_i;
    dgj_ej.bottomRows<6>() = lf.d_xidd_d_xi * lf.g_j;
    dgj_wj.bottomRows<6>() = lf.d_xidd_d_w;
  }

  const auto om1 = omega.topRows<6>();
  const auto om2 = omega.middleRows<6>(6);
  const Mat6 dxi_ei = om1 * dgj_ei;
  const Mat6 dxi_wi = lambda.block<6, 6>(0, 6);
  const Mat6 dxi_ej = om1 * dgj_ej;
  const Mat6 dxi_wj = om1 * dgj_wj;
  const Mat6 dxid_ei = om2 * dgj_ei;
  const Mat6 dxid_wi = lambda.block<6, 6>(6, 6);
  const Mat6 dxid_ej = om2 * dgj_ej;
  const Mat6 dxid_wj = om2 * dgj_wj;

  // Right perturbation of the result: eps_tau = Ad(exp(-xi_tau)) eps_i
  // + J_r(xi_tau) dxi_tau; the retraction chain uses the exact Jacobian.
  const Mat6 jr_tau = lie::right_jacobian_se3(xi_tau);
  const Mat6 ad_inv = lie::adjoint(e.inverse());
  out.d_pose_d_pose_i = ad_inv + jr_tau * dxi_ei;
  out.d_pose_d_varpi_i = jr_tau * dxi_wi;
  out.d_pose_d_pose_j = jr_tau * dxi_ej;
  out.d_pose_d_varpi_j = jr_tau * dxi_wj;

  const Mat6 jr_tau_mode = jr_value_matrix(xi_tau, mode);
  out.d_varpi_d_pose_i = d_vel_d_xi * dxi_ei + jr_tau_mode * dxid_ei;
  out.d_varpi_d_varpi_i = d_vel_d_xi * dxi_wi + jr_tau_mode * dxid_wi;
  out.d_varpi_d_pose_j = d_vel_d_xi * dxi_ej + jr_tau_mode * dxid_ej;
  out.d_varpi_d_varpi_j = d_vel_d_xi * dxi_wj + jr_tau_mode * dxid_wj;
  return out;
}

GpPriorResult gp_prior_residual(const GpAnchor& x_i, const GpAnchor& x_j,
                                const GpSegment& segment, JacobianMode mode) {
  const double dt = segment.dt();
  check_dt(dt);
  const bool wnoj = segment.model == GpModel::kWnoj;
  const Lift lf = lift(x_i, x_j, segment.model, mode, true);

  GpPriorResult out;
  out.residual.head<6>() = lf.xi_ji - dt * x_i.varpi;
  out.residual.tail<6>() = lf.xid_j - x_i.varpi;
  if (wnoj) {
    out.residual.head<6>() -= 0.5 * dt * dt * x_i.varpi_dot;
    out.residual.tail<6>() -= dt * x_i.varpi_dot;
  }
  out.sigma = segment.q.topLeftCorner<12, 12>();

  out.d_pose_i.topRows<6>() = lf.g_i;
  out.d_pose_i.bottomRows<6>() = lf.d_xid_d_xi * lf.g_i;
  out.d_pose_j.topRows<6>() = lf.g_j;
  out.d_pose_j.bottomRows<6>() = lf.d_xid_d_xi * lf.g_j;
  out.d_varpi_i.topRows<6>() = -dt * Mat6::Identity();
  out.d_varpi_i.bottomRows<6>() = -Mat6::Identity();
  out.d_varpi_j.topRows<6>().setZero();
  out.d_varpi_j.bottomRows<6>() = lf.jr_inv;
  return out;
}

}  // namespace ctnav::gp
