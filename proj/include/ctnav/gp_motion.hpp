#pragma once

// Gaussian-process motion priors (WNOA / WNOJ) on SE(3): transition and
// covariance kernels, interpolation weights, local-frame lifts, state queries
// at arbitrary times, and the between-state prior residual.
//
// Local pose convention: xi_ji = ln(T_i^-1 T_j)^vee with body-centric
// velocities, so the right Jacobian J_r(xi) = J_l(-xi) carries the
// velocity <-> local-derivative coupling and the whitened prior cost is
// invariant under left multiplication of both poses by a common transform.

#include <Eigen/Dense>

#include <utility>

#include "ctnav/error.hpp"
#include "ctnav/lie.hpp"

namespace ctnav::gp {

using lie::Mat6;
using lie::Pose;
using lie::Vec6;

enum class GpModel { kWnoa, kWnoj };

// Matrices sized 12 (WNOA) or 18 (WNOJ) without heap traffic.
using GpMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 18, 18>;
using GpVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 18, 1>;

inline int state_dim(GpModel model) { return model == GpModel::kWnoj ? 18 : 12; }

struct GpHyperparams {
  Vec6 qc_diag = Vec6::Ones();  // power spectral densities, all > 0
  GpModel model = GpModel::kWnoj;
};

// Motion-prior link between two successive states.
struct GpSegment {
  double t_i = 0.0;
  double t_j = 0.0;
  GpModel model = GpModel::kWnoj;
  Vec6 qc_diag = Vec6::Ones();
  GpMat phi;    // transition Phi(dt)
  GpMat q;      // covariance Q(dt)
  GpMat q_inv;  // precision, exact block formula
  double dt() const { return t_j - t_i; }
};

GpMat make_transition(double dt, GpModel model);                       // NonPositiveDt
std::pair<GpMat, GpMat> make_q(double dt, const GpHyperparams& qc);    // NonPositiveDt
GpSegment make_segment(double t_i, double t_j, const GpHyperparams& qc);

// Interpolation weights (Lambda, Omega) for t_query in [t_i, t_j]:
//   Omega(tau) = Q(tau) Phi(dt - tau)^T Q(dt)^-1
//   Lambda(tau) = Phi(tau) - Omega(tau) Phi(dt)
// Exact at both endpoints; QueryOutOfSegment outside the closed interval.
std::pair<GpMat, GpMat> interpolation_matrices(double t_i, double t_j, double t_query,
                                               const GpHyperparams& qc);

// Pose + body velocity + measured acceleration input at one support time.
struct GpAnchor {
  Pose pose;
  Vec6 varpi = Vec6::Zero();      // [nu; omega]
  Vec6 varpi_dot = Vec6::Zero();  // IMU-derived input, not estimated
};

// Local states (gamma_i, gamma_j) anchored at x_i: gamma = [xi; xi_dot] or
// [xi; xi_dot; xi_ddot] with xi_ddot = 1/2 (J^-1 w)^curlywedge w + J^-1 w_dot.
std::pair<GpVec, GpVec> lift_to_local(const GpAnchor& x_i, const GpAnchor& x_j,
                                      GpModel model,
                                      lie::JacobianMode mode = lie::JacobianMode::kExact);

struct InterpolatedState {
  Pose pose;
  Vec6 varpi = Vec6::Zero();
  // Right-perturbation Jacobians of (pose, varpi) w.r.t. the endpoint states;
  // filled only when requested.
  Mat6 d_pose_d_pose_i, d_pose_d_varpi_i, d_pose_d_pose_j, d_pose_d_varpi_j;
  Mat6 d_varpi_d_pose_i, d_varpi_d_varpi_i, d_varpi_d_pose_j, d_varpi_d_varpi_j;
};

InterpolatedState query_state(const GpAnchor& x_i, const GpAnchor& x_j,
                              const GpSegment& segment, double tau,
                              lie::JacobianMode mode = lie::JacobianMode::kExact,
                              bool with_jacobians = false);

struct GpPriorResult {
  Eigen::Matrix<double, 12, 1> residual;
  Eigen::Matrix<double, 12, 12> sigma;  // (xi, xi_dot) sub-block of Q(dt)
  Eigen::Matrix<double, 12, 6> d_pose_i, d_varpi_i, d_pose_j, d_varpi_j;
};

// Between-state prior residual:
//   r_dgamma = ln(T_i^-1 T_j)^vee - dt w_i [- 1/2 dt^2 w_dot_i, WNOJ]
//   r_dvarpi = J_r(xi_ji)^-1 w_j - w_i [- dt w_dot_i, WNOJ]
GpPriorResult gp_prior_residual(const GpAnchor& x_i, const GpAnchor& x_j,
                                const GpSegment& segment,
                                lie::JacobianMode mode = lie::JacobianMode::kExact);

}  // namespace ctnav::gp
