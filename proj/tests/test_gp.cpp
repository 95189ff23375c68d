#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>

#include "ctnav/gp_motion.hpp"
#include "ctnav/lie.hpp"
#include "test_util.hpp"

using namespace ctnav;
using gp::GpAnchor;
using gp::GpHyperparams;
using gp::GpModel;
using lie::Mat6;
using lie::Pose;
using lie::Vec6;
using testutil::close;
using testutil::rand_twist;
using testutil::rand_vec3;
using testutil::unif;

namespace {

// ---------------------------------------------------------------------------
// Dense conditioning oracle.
//
// The prior is the LTI SDE gamma_dot = A gamma + B w with white noise w of
// PSD Qc. Everything below is built from that definition alone: transition
// by dense matrix exponential, covariance by Gauss-Legendre quadrature of
//   integral_0^t  e^{A u} B Qc B^T e^{A^T u} du
// (the integrand is polynomial of degree <= 4, so 5-point Gauss is exact),
// and the interpolation weights by explicitly conditioning the joint
// Gaussian of (gamma_query, gamma_j) given gamma_i.
// ---------------------------------------------------------------------------

Eigen::MatrixXd a_mat(GpModel model) {
  const int nb = model == GpModel::kWnoj ? 3 : 2;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6 * nb, 6 * nb);
  for (int k = 0; k + 1 < nb; ++k) a.block(6 * k, 6 * (k + 1), 6, 6).setIdentity();
  return a;
}

Eigen::MatrixXd phi_expm(double dt, GpModel model) {
  return (dt * a_mat(model)).exp();
}

Eigen::MatrixXd q_quadrature(double t, const Vec6& qc, GpModel model) {
  const int n = model == GpModel::kWnoj ? 18 : 12;
  const double node[5] = {0.0, 0.538469310105683091, -0.538469310105683091,
                          0.906179845938663993, -0.906179845938663993};
  const double wgt[5] = {0.568888888888888889, 0.478628670499366468, 0.478628670499366468,
                         0.236926885056189088, 0.236926885056189088};
  Eigen::MatrixXd bqb = Eigen::MatrixXd::Zero(n, n);
  bqb.bottomRightCorner(6, 6).diagonal() = qc;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < 5; ++k) {
    const double u = 0.5 * t * (node[k] + 1.0);
    const Eigen::MatrixXd e = phi_expm(u, model);
    q += (0.5 * t * wgt[k]) * e * bqb * e.transpose();
  }
  return q;
}

struct OracleWeights {
  Eigen::MatrixXd lambda, omega;
};

OracleWeights conditioning_oracle(double dt, double tau, const Vec6& qc, GpModel model) {
  const double rem = dt - tau;
  const Eigen::MatrixXd q_tau = q_quadrature(tau, qc, model);
  const Eigen::MatrixXd phi_rem = phi_expm(rem, model);
  // Cov(gamma_q, gamma_j | gamma_i) and Var(gamma_j | gamma_i).
  const Eigen::MatrixXd c = q_tau * phi_rem.transpose();
  const Eigen::MatrixXd v =
      phi_rem * q_tau * phi_rem.transpose() + q_quadrature(rem, qc, model);
  const Eigen::MatrixXd omega = v.ldlt().solve(c.transpose()).transpose();
  const Eigen::MatrixXd lambda = phi_expm(tau, model) - omega * phi_expm(dt, model);
  return {lambda, omega};
}

GpHyperparams hp_of(const Vec6& qc, GpModel model) {
  GpHyperparams hp;
  hp.qc_diag = qc;
  hp.model = model;
  return hp;
}

Vec6 rand_qc(std::mt19937_64& g) {
  Vec6 qc;
  for (int k = 0; k < 6; ++k) qc[k] = unif(g, 0.2, 4.0);
  return qc;
}

GpAnchor rand_anchor(std::mt19937_64& g) {
  GpAnchor x;
  x.pose = lie::exp_se3(rand_twist(g, 3.0, 1.2));
  x.varpi = rand_twist(g, 0.6, 0.4);
  x.varpi_dot = rand_twist(g, 0.3, 0.2);
  return x;
}

// Worst entrywise error of (a*b - expect), measured relative to the natural
// magnitude of the products that formed each entry, floored at 1.
double product_rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                       const Eigen::MatrixXd& expect) {
  const Eigen::MatrixXd err = (a * b - expect).cwiseAbs();
  const Eigen::MatrixXd scale = a.cwiseAbs() * b.cwiseAbs();
  double worst = 0.0;
  for (Eigen::Index r = 0; r < err.rows(); ++r)
    for (Eigen::Index c = 0; c < err.cols(); ++c)
      worst = std::max(worst, err(r, c) / std::max(scale(r, c), 1.0));
  return worst;
}

}  // namespace

TEST_CASE("transition: structure, semigroup, dt->0 limit") {
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    const auto phi = gp::make_transition(0.7, model);
    CHECK(phi.rows() == gp::state_dim(model));
    CHECK((phi - phi_expm(0.7, model)).norm() < 1e-12);
    const auto lhs = gp::make_transition(0.4, model) * gp::make_transition(0.9, model);
    CHECK((lhs - gp::make_transition(1.3, model)).norm() < 1e-12);
    const auto near0 = gp::make_transition(1e-12, model);
    CHECK((near0 - gp::GpMat::Identity(near0.rows(), near0.cols())).norm() < 1e-9);
  }
  CHECK_THROWS_AS((void)gp::make_transition(0.0, GpModel::kWnoj), Error);
  CHECK_THROWS_AS((void)gp::make_transition(-0.1, GpModel::kWnoa), Error);
}

TEST_CASE("kernel covariance matches quadrature; inverse and PD over dt grid") {
  std::mt19937_64 g(71);
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    for (double dt : {1e-3, 1e-2, 0.1, 0.5, 1.0, 2.5, 10.0}) {
      const Vec6 qc = rand_qc(g);
      const auto [q, q_inv] = gp::make_q(dt, hp_of(qc, model));
      const Eigen::MatrixXd q_oracle = q_quadrature(dt, qc, model);
      CHECK(close(q, q_oracle, 1e-12, 1e-300));
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(q.rows(), q.cols());
      CHECK(product_rel_err(q, q_inv, eye) < 1e-8);
      CHECK(product_rel_err(q_inv, q, eye) < 1e-8);
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
      CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
  }
  GpHyperparams bad;
  bad.qc_diag[2] = 0.0;
  CHECK_THROWS_AS((void)gp::make_q(1.0, bad), Error);
  CHECK_THROWS_AS((void)gp::make_q(0.0, hp_of(Vec6::Ones(), GpModel::kWnoj)), Error);
  try {
    (void)gp::make_q(-1.0, hp_of(Vec6::Ones(), GpModel::kWnoj));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonPositiveDt);
  }
}

TEST_CASE("interpolation weights match the dense conditioning oracle") {
  std::mt19937_64 g(72);
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    for (double dt : {0.05, 0.37, 1.0, 2.5}) {
      for (double rho : {0.2, 0.5, 0.85}) {
        const Vec6 qc = rand_qc(g);
        const auto [lambda, omega] = gp::interpolation_matrices(0.3, 0.3 + dt, 0.3 + rho * dt,
                                                                hp_of(qc, model));
        const auto oracle = conditioning_oracle(dt, rho * dt, qc, model);
        CHECK(close(lambda, oracle.lambda, 1e-9, 1e-10));
        CHECK(close(omega, oracle.omega, 1e-9, 1e-10));
      }
    }
  }
}

TEST_CASE("interpolation weights: endpoint exactness and polynomial consistency") {
  std::mt19937_64 g(73);
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    const int n = gp::state_dim(model);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    for (double dt : {1e-3, 0.1, 1.0, 10.0}) {
      const GpHyperparams hp = hp_of(rand_qc(g), model);
      // tau = 0 is exact by construction (Q(0) = 0 identically).
      const auto [l0, o0] = gp::interpolation_matrices(0.0, dt, 0.0, hp);
      CHECK((l0 - eye).cwiseAbs().maxCoeff() == 0.0);
      CHECK(o0.cwiseAbs().maxCoeff() == 0.0);
      // tau = dt reduces to the Q Q^-1 identity; judge it the same way,
      // relative to the magnitude of the products forming each entry.
      const auto [q, q_inv] = gp::make_q(dt, hp);
      const auto [l1, o1] = gp::interpolation_matrices(0.0, dt, dt, hp);
      const Eigen::MatrixXd phi_dt = gp::make_transition(dt, model);
      const Eigen::MatrixXd scale_o =
          Eigen::MatrixXd(q.cwiseAbs() * q_inv.cwiseAbs()).cwiseMax(1.0);
      CHECK(((o1 - eye).cwiseAbs().array() / scale_o.array()).maxCoeff() < 1e-9);
      const Eigen::MatrixXd scale_l =
          Eigen::MatrixXd(scale_o * phi_dt.cwiseAbs()).cwiseMax(1.0);
      CHECK((l1.cwiseAbs().array() / scale_l.array()).maxCoeff() < 1e-9);

      // Any noise-free trajectory gamma(t) = Phi(t) gamma(0) must be
      // reproduced at every interior query, again up to the entrywise
      // magnitude of the weight products.
      const Eigen::VectorXd g0 = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) {
        return unif(g, -1.0, 1.0);
      });
      for (double rho : {0.15, 0.5, 0.9}) {
        const auto [lam, om] = gp::interpolation_matrices(0.0, dt, rho * dt, hp);
        const Eigen::VectorXd gj = gp::make_transition(dt, model) * g0;
        const Eigen::VectorXd interp = lam * g0 + om * gj;
        const Eigen::VectorXd truth = gp::make_transition(rho * dt, model) * g0;
        const Eigen::VectorXd scale =
            lam.cwiseAbs() * g0.cwiseAbs() + om.cwiseAbs() * gj.cwiseAbs();
        for (int r = 0; r < n; ++r)
          CHECK(std::abs(interp[r] - truth[r]) < 1e-9 * std::max(scale[r], 1.0));
      }
    }
    CHECK_THROWS_AS((void)gp::interpolation_matrices(0.0, 1.0, -0.01, hp_of(Vec6::Ones(), model)),
                    Error);
    CHECK_THROWS_AS((void)gp::interpolation_matrices(0.0, 1.0, 1.01, hp_of(Vec6::Ones(), model)),
                    Error);
  }
}

TEST_CASE("lift: local derivative block is exact for an analytic trajectory") {
  // T(t) = T0 exp(p(t)) with p(t) = t w + t^2/2 c. The true body velocity is
  // varpi(t) = J_r(p(t)) p_dot(t), so the lifted xi_dot block must hand back
  // p_dot(t_j) exactly; the xi_ddot block uses the first-order closed form of
  // d(J^-1)/dt and must converge to p_ddot = c as t_j -> 0.
  std::mt19937_64 g(74);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose t0 = lie::exp_se3(rand_twist(g, 2.0, 1.0));
    const Vec6 w = rand_twist(g, 0.5, 0.35);
    const Vec6 c = rand_twist(g, 0.25, 0.18);
    const auto anchor_at = [&](double t) {
      const Vec6 p = t * w + 0.5 * t * t * c;
      const Vec6 pd = w + t * c;
      GpAnchor x;
      x.pose = t0 * lie::exp_se3(p);
      Mat6 d_jr_pd;
      x.varpi = lie::jr_apply(p, pd, &d_jr_pd);
      // Exact varpi_dot = d/dt [J_r(p) p_dot] by the chain rule.
      x.varpi_dot = d_jr_pd * pd + lie::jr_apply(p, c);
      return x;
    };
    const GpAnchor x_i = anchor_at(0.0);
    double prev_err = -1.0;
    for (double tj : {0.8, 0.4, 0.2, 0.1}) {
      const auto [gamma_i, gamma_j] = gp::lift_to_local(x_i, anchor_at(tj), GpModel::kWnoj);
      CHECK((gamma_i.head<6>()).norm() == 0.0);
      CHECK((gamma_i.segment<6>(6) - w).norm() < 1e-12);
      const Vec6 p = tj * w + 0.5 * tj * tj * c;
      CHECK((gamma_j.head<6>() - p).norm() < 1e-10);
      CHECK((gamma_j.segment<6>(6) - (w + tj * c)).norm() < 1e-10);
      const double err = (gamma_j.segment<6>(12) - c).norm();
      if (prev_err >= 0.0) CHECK(err < 0.75 * prev_err + 1e-12);
      prev_err = err;
    }
  }
}

TEST_CASE("query: constant twist is reproduced exactly at any tau") {
  std::mt19937_64 g(75);
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    for (int trial = 0; trial < 10; ++trial) {
      const double dt = unif(g, 0.2, 3.0);
      const Vec6 w = rand_twist(g, 0.8, 0.5);
      GpAnchor x_i, x_j;
      x_i.pose = lie::exp_se3(rand_twist(g, 2.0, 1.0));
      x_i.varpi = w;
      x_j.pose = x_i.pose * lie::exp_se3(dt * w);
      x_j.varpi = w;
      const auto seg = gp::make_segment(0.0, dt, hp_of(rand_qc(g), model));
      for (double rho : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const auto s = gp::query_state(x_i, x_j, seg, rho * dt);
        const Pose expect = x_i.pose * lie::exp_se3(rho * dt * w);
        CHECK(lie::log_se3(expect.inverse() * s.pose).norm() < 1e-10);
        CHECK((s.varpi - w).norm() < 1e-10);
      }
    }
  }
}

TEST_CASE("query: midpoint of a 2 m/s straight segment sits 1 m along") {
  GpAnchor x_i, x_j;
  x_i.varpi << 2.0, 0.0, 0.0, 0.0, 0.0, 0.0;
  x_j.pose = Pose(lie::Mat3::Identity(), lie::Vec3(2.0, 0.0, 0.0));
  x_j.varpi = x_i.varpi;
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    const auto seg = gp::make_segment(0.0, 1.0, hp_of(Vec6::Ones(), model));
    const auto s = gp::query_state(x_i, x_j, seg, 0.5);
    CHECK((s.pose.translation() - lie::Vec3(1.0, 0.0, 0.0)).norm() < 1e-6);
    CHECK((s.varpi - x_i.varpi).norm() < 1e-6);
  }
}

TEST_CASE("query: endpoint exactness and out-of-segment rejection") {
  std::mt19937_64 g(76);
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    for (double dt : {1e-3, 0.1, 1.0, 10.0}) {
      const GpAnchor x_i = rand_anchor(g);
      const GpAnchor x_j = rand_anchor(g);
      const auto seg = gp::make_segment(1.0, 1.0 + dt, hp_of(rand_qc(g), model));
      const double sdt = seg.dt();
      const auto s0 = gp::query_state(x_i, x_j, seg, 0.0);
      CHECK(lie::log_se3(x_i.pose.inverse() * s0.pose).norm() < 1e-9);
      CHECK((s0.varpi - x_i.varpi).norm() < 1e-9);
      const auto s1 = gp::query_state(x_i, x_j, seg, sdt);
      CHECK(lie::log_se3(x_j.pose.inverse() * s1.pose).norm() < 1e-9);
      CHECK((s1.varpi - x_j.varpi).norm() < 1e-9);
      CHECK_THROWS_AS((void)gp::query_state(x_i, x_j, seg, -1e-6), Error);
      CHECK_THROWS_AS((void)gp::query_state(x_i, x_j, seg, sdt + 1e-6), Error);
    }
  }
}

TEST_CASE("query: continuous in tau") {
  std::mt19937_64 g(77);
  const GpAnchor x_i = rand_anchor(g);
  GpAnchor x_j = rand_anchor(g);
  const auto seg = gp::make_segment(0.0, 2.0, hp_of(Vec6::Ones(), GpModel::kWnoj));
  for (double tau : {0.3, 1.0, 1.7}) {
    const auto a = gp::query_state(x_i, x_j, seg, tau);
    const auto b = gp::query_state(x_i, x_j, seg, tau + 1e-9);
    CHECK(lie::log_se3(a.pose.inverse() * b.pose).norm() < 1e-6);
    CHECK((a.varpi - b.varpi).norm() < 1e-6);
  }
}

TEST_CASE("prior residual: zero for constant twist, both models") {
  std::mt19937_64 g(78);
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    for (int trial = 0; trial < 10; ++trial) {
      const double dt = unif(g, 0.1, 3.0);
      const Vec6 w = rand_twist(g, 0.8, 0.5);
      GpAnchor x_i, x_j;
      x_i.pose = lie::exp_se3(rand_twist(g, 2.0, 1.0));
      x_i.varpi = w;
      x_j.pose = x_i.pose * lie::exp_se3(dt * w);
      x_j.varpi = w;
      const auto seg = gp::make_segment(0.0, dt, hp_of(rand_qc(g), model));
      const auto r = gp::gp_prior_residual(x_i, x_j, seg);
      CHECK(r.residual.norm() < 1e-10);
    }
  }
}

TEST_CASE("prior residual: exact second-order propagation under WNOJ only") {
  std::mt19937_64 g(79);
  for (int trial = 0; trial < 10; ++trial) {
    const double dt = unif(g, 0.4, 1.5);
    const Vec6 w = rand_twist(g, 0.5, 0.3);
    const Vec6 c = rand_twist(g, 0.4, 0.25);
    const Vec6 p = dt * w + 0.5 * dt * dt * c;
    GpAnchor x_i, x_j;
    x_i.pose = lie::exp_se3(rand_twist(g, 2.0, 1.0));
    x_i.varpi = w;
    x_i.varpi_dot = c;
    x_j.pose = x_i.pose * lie::exp_se3(p);
    x_j.varpi = lie::jr_apply(p, w + dt * c);
    const auto wnoj = gp::gp_prior_residual(
        x_i, x_j, gp::make_segment(0.0, dt, hp_of(Vec6::Ones(), GpModel::kWnoj)));
    CHECK(wnoj.residual.norm() < 1e-10);
    // A WNOA prior sees the same motion as model violation.
    const auto wnoa = gp::gp_prior_residual(
        x_i, x_j, gp::make_segment(0.0, dt, hp_of(Vec6::Ones(), GpModel::kWnoa)));
    CHECK(wnoa.residual.norm() > 1e-3);
  }
}

TEST_CASE("prior residual: sigma is the (xi, xi_dot) covariance sub-block") {
  const double dt = 1.3;
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    const GpHyperparams hp = hp_of(Vec6::Constant(2.0), model);
    const auto seg = gp::make_segment(0.0, dt, hp);
    GpAnchor x;
    const auto r = gp::gp_prior_residual(x, x, seg);
    CHECK((r.sigma - seg.q.topLeftCorner<12, 12>()).norm() == 0.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r.sigma);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("prior residual: invariant under a common left transform") {
  std::mt19937_64 g(80);
  for (int trial = 0; trial < 10; ++trial) {
    const GpAnchor x_i = rand_anchor(g);
    const GpAnchor x_j = rand_anchor(g);
    const Pose lift = lie::exp_se3(rand_twist(g, 100.0, 1.5));
    GpAnchor y_i = x_i, y_j = x_j;
    y_i.pose = lift * x_i.pose;
    y_j.pose = lift * x_j.pose;
    const auto seg = gp::make_segment(0.0, 1.0, hp_of(rand_qc(g), GpModel::kWnoj));
    const auto a = gp::gp_prior_residual(x_i, x_j, seg);
    const auto b = gp::gp_prior_residual(y_i, y_j, seg);
    CHECK((a.residual - b.residual).norm() < 1e-9);
    CHECK((a.sigma - b.sigma).norm() == 0.0);
  }
}

TEST_CASE("prior residual: analytic Jacobians match central differences") {
  std::mt19937_64 g(81);
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    for (lie::JacobianMode mode : {lie::JacobianMode::kExact, lie::JacobianMode::kApprox}) {
      for (int trial = 0; trial < 12; ++trial) {
        const GpAnchor x_i = rand_anchor(g);
        const GpAnchor x_j = rand_anchor(g);
        const auto seg = gp::make_segment(0.0, unif(g, 0.3, 2.0), hp_of(rand_qc(g), model));
        const auto res = gp::gp_prior_residual(x_i, x_j, seg, mode);
        const auto f = [&](const GpAnchor& a, const GpAnchor& b) -> Eigen::VectorXd {
          return gp::gp_prior_residual(a, b, seg, mode).residual;
        };
        Eigen::MatrixXd stacked(12, 24);
        stacked << res.d_pose_i, res.d_varpi_i, res.d_pose_j, res.d_varpi_j;
        const auto apply = [&](const Eigen::VectorXd& d) {
          GpAnchor pi = x_i, pj = x_j;
          pi.pose = x_i.pose * lie::exp_se3(d.segment<6>(0));
          pi.varpi = x_i.varpi + d.segment<6>(6);
          pj.pose = x_j.pose * lie::exp_se3(d.segment<6>(12));
          pj.varpi = x_j.varpi + d.segment<6>(18);
          return f(pi, pj);
        };
        const Eigen::MatrixXd fd = testutil::fd_jacobian(apply, Eigen::VectorXd::Zero(24), 1e-6);
        CHECK(close(stacked, fd, 1e-6, 1e-7));
      }
    }
  }
}

TEST_CASE("query: analytic Jacobians match central differences") {
  std::mt19937_64 g(82);
  for (GpModel model : {GpModel::kWnoa, GpModel::kWnoj}) {
    for (lie::JacobianMode mode : {lie::JacobianMode::kExact, lie::JacobianMode::kApprox}) {
      for (int trial = 0; trial < 8; ++trial) {
        const GpAnchor x_i = rand_anchor(g);
        const GpAnchor x_j = rand_anchor(g);
        const double dt = unif(g, 0.4, 2.0);
        const auto seg = gp::make_segment(0.0, dt, hp_of(rand_qc(g), model));
        const double tau = unif(g, 0.15, 0.85) * dt;
        const auto s0 = gp::query_state(x_i, x_j, seg, tau, mode, true);

        const auto apply = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          GpAnchor pi = x_i, pj = x_j;
          pi.pose = x_i.pose * lie::exp_se3(d.segment<6>(0));
          pi.varpi = x_i.varpi + d.segment<6>(6);
          pj.pose = x_j.pose * lie::exp_se3(d.segment<6>(12));
          pj.varpi = x_j.varpi + d.segment<6>(18);
          const auto s = gp::query_state(pi, pj, seg, tau, mode, false);
          Eigen::VectorXd out(12);
          out.head<6>() = lie::log_se3(s0.pose.inverse() * s.pose);
          out.tail<6>() = s.varpi;
          return out;
        };
        const Eigen::MatrixXd fd = testutil::fd_jacobian(apply, Eigen::VectorXd::Zero(24), 1e-6);
        Eigen::MatrixXd stacked(12, 24);
        stacked.topRows<6>() << s0.d_pose_d_pose_i, s0.d_pose_d_varpi_i, s0.d_pose_d_pose_j,
            s0.d_pose_d_varpi_j;
        stacked.bottomRows<6>() << s0.d_varpi_d_pose_i, s0.d_varpi_d_varpi_i,
            s0.d_varpi_d_pose_j, s0.d_varpi_d_varpi_j;
        CHECK(close(stacked, fd, 1e-6, 1e-7));
      }
    }
  }
}

TEST_CASE("approx mode tracks exact mode to second order") {
  std::mt19937_64 g(83);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    GpAnchor x_i = rand_anchor(g);
    GpAnchor x_j = x_i;
    const Vec6 step = rand_twist(g, 0.1, 0.08);
    x_j.pose = x_i.pose * lie::exp_se3(step);
    x_j.varpi = x_i.varpi + rand_twist(g, 0.05, 0.03);
    const auto seg = gp::make_segment(0.0, 0.5, hp_of(Vec6::Ones(), GpModel::kWnoj));
    const auto exact = gp::gp_prior_residual(x_i, x_j, seg, lie::JacobianMode::kExact);
    const auto approx = gp::gp_prior_residual(x_i, x_j, seg, lie::JacobianMode::kApprox);
    worst = std::max(worst, (exact.residual - approx.residual).norm());
  }
  CHECK(worst < 5e-3);
  CHECK(worst > 0.0);  // the switch is actually doing something
}
