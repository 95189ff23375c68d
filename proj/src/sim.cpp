#include "ctnav/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Cholesky>

#include "ctnav/error.hpp"
#include "ctnav/factors.hpp"
#include "ctnav/gp_motion.hpp"

namespace ctnav::sim {

namespace {

constexpr double kMu = 3.986004418e14;  // m^3/s^2

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t substream(std::uint64_t seed, const char* name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const char* p = name; *p; ++p) h = (h ^ static_cast<unsigned char>(*p)) * 1099511628211ULL;
  return splitmix64(seed ^ h);
}

// Portable normal draws: Box-Muller over raw 53-bit uniforms so streams are
// bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  lie::Vec3 normal3(double sd) { return lie::Vec3(sd * normal(), sd * normal(), sd * normal()); }

 private:
  std::mt19937_64 eng_;
};

lie::Vec3 up_direction(const lie::Vec3& p_ecef) {
  const geodesy::GeodeticCoord llh = geodesy::ecef_to_llh(p_ecef);
  return geodesy::dcm_ecef_to_enu(llh).row(2).transpose();
}

}  // namespace

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

NavState GroundTruth::state_at(double t) const {
  if (!std::isfinite(t)) raise(ErrorCode::kNonFiniteInput, "truth: non-finite query time");
  t = std::clamp(t, 0.0, duration_);
  NavState x;
  switch (kind_) {
    case TrajectoryKind::kTwistSegments:
      x = twist_state_at(t);
      break;
    case TrajectoryKind::kWaypointSpline:
      x = spline_state_at(t);
      break;
    case TrajectoryKind::kGpSample:
      x = gp_state_at(t);
      break;
  }
  x.t = t;
  x.clock = clock_at(t);
  return x;
}

Eigen::Vector2d GroundTruth::clock_at(double t) const {
  return {clock_.bias0_m + clock_.drift0_mps * t, clock_.drift0_mps};
}

NavState GroundTruth::twist_state_at(double t) const {
  size_t k = segments_.size() - 1;
  for (size_t i = 0; i + 1 < segments_.size(); ++i)
    if (t < segments_[i + 1].t0) {
      k = i;
      break;
    }
  const SegmentNode& seg = segments_[k];
  const double tau = t - seg.t0;
  NavState x;
  if (seg.omega.norm() > 0.0) {
    lie::Vec6 w;
    w << seg.nu, seg.omega;
    x.pose = seg.pose * lie::exp_se3(tau * w);
    x.varpi = w;
    x.varpi_dot.setZero();
  } else {
    const lie::Vec3 p = seg.pose.translation() +
                        seg.pose.rotation() * (seg.nu * tau + 0.5 * tau * tau * seg.accel);
    x.pose = lie::Pose(seg.pose.rotation(), p);
    x.varpi << seg.nu + tau * seg.accel, lie::Vec3::Zero();
    x.varpi_dot << seg.accel, lie::Vec3::Zero();
  }
  return x;
}

NavState GroundTruth::spline_state_at(double t) const {
  size_t k = spline_t_.size() - 2;
  for (size_t i = 0; i + 1 < spline_t_.size(); ++i)
    if (t < spline_t_[i + 1]) {
      k = i;
      break;
    }
  const double u = t - spline_t_[k];
  lie::Vec3 s, sd, sdd;
  for (int ax = 0; ax < 3; ++ax) {
    const SplineAxis& c = spline_[ax];
    s[ax] = c.a[k] + u * (c.b[k] + u * (c.c[k] + u * c.d[k]));
    sd[ax] = c.b[k] + u * (2.0 * c.c[k] + 3.0 * u * c.d[k]);
    sdd[ax] = 2.0 * c.c[k] + 6.0 * u * c.d[k];
  }
  NavState x;
  // body axes stay aligned with the start ENU frame, so nu = s_dot directly
  x.pose = lie::Pose(start_pose_.rotation(),
                     start_pose_.translation() + start_pose_.rotation() * s);
  x.varpi << sd, lie::Vec3::Zero();
  x.varpi_dot << sdd, lie::Vec3::Zero();
  return x;
}

NavState GroundTruth::gp_state_at(double t) const {
  const size_t k = std::min(static_cast<size_t>(t / knot_spacing_), knots_.size() - 2);
  const Knot& a = knots_[k];
  const Knot& b = knots_[k + 1];
  gp::GpHyperparams hp;
  hp.model = gp::GpModel::kWnoj;
  hp.qc_diag = lie::Vec6::Constant(gp_qc_);
  const gp::GpSegment seg = gp::make_segment(a.t, b.t, hp);
  const gp::GpAnchor ai{a.pose, a.varpi, a.varpi_dot};
  const gp::GpAnchor aj{b.pose, b.varpi, b.varpi_dot};
  const double tau = std::clamp(t - a.t, 0.0, seg.dt());
  const auto q = gp::query_state(ai, aj, seg, tau);
  NavState x;
  x.pose = q.pose;
  x.varpi = q.varpi;
  // central difference for the body acceleration input
  const double h = std::min(1e-5, 0.5 * seg.dt());
  const double lo = std::clamp(tau - h, 0.0, seg.dt());
  const double hi = std::clamp(tau + h, 0.0, seg.dt());
  if (hi > lo) {
    const auto qa = gp::query_state(ai, aj, seg, lo);
    const auto qb = gp::query_state(ai, aj, seg, hi);
    x.varpi_dot = (qb.varpi - qa.varpi) / (hi - lo);
  }
  return x;
}

GroundTruth make_ground_truth(const Scenario& scn) {
  GroundTruth gt;
  gt.kind_ = scn.trajectory;
  gt.duration_ = scn.duration_s;
  gt.clock_ = scn.clock;
  const lie::Vec3 p0 = geodesy::llh_to_ecef(scn.origin);
  const lie::Mat3 r0 = geodesy::dcm_ecef_to_enu(scn.origin).transpose();
  gt.start_pose_ = lie::Pose(r0, p0);

  switch (scn.trajectory) {
    case TrajectoryKind::kTwistSegments: {
      double t0 = 0.0;
      lie::Pose pose = gt.start_pose_;
      lie::Vec3 nu = lie::Vec3::Zero();
      for (const auto& spec : scn.segments) {
        GroundTruth::SegmentNode node;
        node.t0 = t0;
        node.pose = pose;
        node.nu = spec.has_nu ? spec.nu : nu;
        node.omega = spec.omega;
        node.accel = spec.accel;
        gt.segments_.push_back(node);
        // advance to the segment end
        if (spec.omega.norm() > 0.0) {
          lie::Vec6 w;
          w << node.nu, node.omega;
          pose = pose * lie::exp_se3(spec.duration * w);
          nu = node.nu;
        } else {
          const lie::Vec3 p =
              pose.translation() +
              pose.rotation() * (node.nu * spec.duration +
                                 0.5 * spec.duration * spec.duration * node.accel);
          pose = lie::Pose(pose.rotation(), p);
          nu = node.nu + spec.duration * node.accel;
        }
        t0 += spec.duration;
      }
      break;
    }
    case TrajectoryKind::kWaypointSpline: {
      const size_t n = scn.waypoints.size();
      gt.spline_t_.resize(n);
      for (size_t i = 0; i < n; ++i) gt.spline_t_[i] = scn.waypoints[i].t;
      for (int ax = 0; ax < 3; ++ax) {
        std::vector<double> y(n);
        for (size_t i = 0; i < n; ++i) y[i] = scn.waypoints[i].pos_enu[ax];
        // natural cubic spline second derivatives by the Thomas algorithm
        std::vector<double> m(n, 0.0);
        if (n > 2) {
          std::vector<double> diag(n - 2), rhs(n - 2), upper(n - 2, 0.0);
          for (size_t i = 1; i + 1 < n; ++i) {
            const double h0 = gt.spline_t_[i] - gt.spline_t_[i - 1];
            const double h1 = gt.spline_t_[i + 1] - gt.spline_t_[i];
            diag[i - 1] = 2.0 * (h0 + h1);
            upper[i - 1] = h1;
            rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
          }
          for (size_t i = 1; i < n - 2; ++i) {
            const double h0 = gt.spline_t_[i + 1] - gt.spline_t_[i];
            const double w = h0 / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
          }
          for (size_t i = n - 2; i-- > 0;)
            m[i + 1] = (rhs[i] - (i + 1 < n - 2 ? upper[i] * m[i + 2] : 0.0)) / diag[i];
        }
        GroundTruth::SplineAxis& c = gt.spline_[ax];
        c.a.resize(n - 1);
        c.b.resize(n - 1);
        c.c.resize(n - 1);
        c.d.resize(n - 1);
        for (size_t i = 0; i + 1 < n; ++i) {
          const double h = gt.spline_t_[i + 1] - gt.spline_t_[i];
          c.a[i] = y[i];
          c.b[i] = (y[i + 1] - y[i]) / h - h * (2.0 * m[i] + m[i + 1]) / 6.0;
          c.c[i] = 0.5 * m[i];
          c.d[i] = (m[i + 1] - m[i]) / (6.0 * h);
        }
      }
      break;
    }
    case TrajectoryKind::kGpSample: {
      gt.knot_spacing_ = scn.gp.knot_spacing_s;
      gt.gp_qc_ = scn.gp.qc;
      gp::GpHyperparams hp;
      hp.model = gp::GpModel::kWnoj;
      hp.qc_diag = lie::Vec6::Constant(scn.gp.qc);
      const double h = gt.knot_spacing_;
      const auto [q, q_inv] = gp::make_q(h, hp);
      (void)q_inv;
      const gp::GpMat phi = gp::make_transition(h, gp::GpModel::kWnoj);
      const Eigen::MatrixXd chol = Eigen::MatrixXd(q).llt().matrixL();
      Rng rng(substream(scn.seed, "gp_trajectory"));
      GroundTruth::Knot knot{0.0, gt.start_pose_, lie::Vec6::Zero(), lie::Vec6::Zero()};
      gt.knots_.push_back(knot);
      while (knot.t < scn.duration_s + h) {
        Eigen::VectorXd gamma(18);
        gamma << lie::Vec6::Zero(), knot.varpi, knot.varpi_dot;
        Eigen::VectorXd z(18);
        for (int i = 0; i < 18; ++i) z[i] = rng.normal();
        const Eigen::VectorXd next = phi * gamma + chol * z;
        knot.t += h;
        knot.pose = knot.pose * lie::exp_se3(next.segment<6>(0));
        knot.varpi = next.segment<6>(6);
        knot.varpi_dot = next.segment<6>(12);
        gt.knots_.push_back(knot);
      }
      break;
    }
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Constellation
// ---------------------------------------------------------------------------

void Constellation::state_at(int sat, double t, lie::Vec3* pos, lie::Vec3* vel) const {
  const Orbit& o = orbits.at(sat);
  const double th = rate_rad_s * t;
  const double c = std::cos(th), s = std::sin(th);
  *pos = radius_m * (c * o.radial + s * o.tangent);
  *vel = radius_m * rate_rad_s * (-s * o.radial + c * o.tangent);
}

Constellation make_constellation(const Scenario& scn) {
  Constellation sky;
  sky.rate_rad_s = std::sqrt(kMu / sky.radius_m) / sky.radius_m;
  const lie::Vec3 p0 = geodesy::llh_to_ecef(scn.origin);
  const lie::Mat3 r_ne = geodesy::dcm_ecef_to_ned(scn.origin);
  Rng rng(substream(scn.gnss.geometry_seed, "constellation"));
  const int n = scn.gnss.sat_count;
  for (int k = 0; k < n; ++k) {
    const double az = 2.0 * M_PI * k / n + 0.3 * rng.normal();
    // golden-ratio spread keeps elevations distinct for any count
    const double lo = scn.gnss.mask_deg + 5.0;
    const double frac = std::fmod(0.618033988749895 * (k + 1) + 0.25 * rng.uniform(), 1.0);
    const double el = (lo + (82.0 - lo) * frac) * M_PI / 180.0;
    lie::Vec3 u_ned(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), -std::sin(el));
    const lie::Vec3 u = r_ne.transpose() * u_ned;
    const double b = p0.dot(u);
    const double s = -b + std::sqrt(b * b + sky.radius_m * sky.radius_m - p0.squaredNorm());
    Constellation::Orbit orbit;
    orbit.radial = (p0 + s * u).normalized();
    lie::Vec3 ref = rng.normal3(1.0);
    while (ref.cross(orbit.radial).norm() < 1e-6) ref = rng.normal3(1.0);
    orbit.tangent = orbit.radial.cross(ref).normalized();
    sky.orbits.push_back(orbit);
  }
  return sky;
}

double elevation_rad(const lie::Vec3& target_ecef, const lie::Vec3& p_ecef) {
  const lie::Vec3 u = (target_ecef - p_ecef).normalized();
  const double s = std::clamp(u.dot(up_direction(p_ecef)), -1.0, 1.0);
  return std::asin(s);
}

// ---------------------------------------------------------------------------
// Stream synthesis
// ---------------------------------------------------------------------------

namespace {

struct ActiveDegradations {
  bool outage = false;
  bool multipath = false;
  double bias_m = 0.0;
  double fraction = 0.0;
  int keep_n = -1;  // -1: no reduction
};

ActiveDegradations degradations_at(const Scenario& scn, double t) {
  ActiveDegradations a;
  for (const auto& d : scn.degradations) {
    if (t < d.t_start || t >= d.t_end) continue;
    switch (d.kind) {
      case DegradationKind::kOutage:
        a.outage = true;
        break;
      case DegradationKind::kMultipath:
        a.multipath = true;
        a.bias_m = d.bias_m;
        a.fraction = d.fraction;
        break;
      case DegradationKind::kReducedSats:
        a.keep_n = a.keep_n < 0 ? d.keep_n : std::min(a.keep_n, d.keep_n);
        break;
    }
  }
  return a;
}

}  // namespace

Streams synthesize(const Scenario& scn, const GroundTruth& truth, const Constellation& sky) {
  Streams out;

  // --- IMU + realized bias walk ---
  if (scn.imu.rate_hz > 0.0) {
    Rng rng(substream(scn.seed, "imu"));
    Rng walk(substream(scn.seed, "imu_bias_walk"));
    const double dt = 1.0 / scn.imu.rate_hz;
    const double sd_a = scn.imu.sigma_accel / std::sqrt(dt);
    const double sd_g = scn.imu.sigma_gyro / std::sqrt(dt);
    lie::Vec3 ba = scn.imu.bias_acc0;
    lie::Vec3 bg = scn.imu.bias_gyro0;
    const int n = static_cast<int>(std::floor(scn.duration_s * scn.imu.rate_hz));
    for (int k = 0; k <= n; ++k) {
      const double t = k * dt;
      const NavState x = truth.state_at(t);
      const lie::Vec3 nu = x.varpi.head<3>();
      const lie::Vec3 omega = x.varpi.tail<3>();
      const lie::Vec3 g = geodesy::gravity_ecef(x.pose.translation());
      ImuSample s;
      s.t = t + scn.imu.delay_s;
      s.accel = x.varpi_dot.head<3>() + omega.cross(nu) -
                x.pose.rotation().transpose() * g + ba + rng.normal3(sd_a);
      s.gyro = omega + bg + rng.normal3(sd_g);
      out.imu.push_back(s);
      out.bias_t.push_back(t);
      out.bias_acc.push_back(ba);
      out.bias_gyro.push_back(bg);
      ba += walk.normal3(scn.imu.sigma_bias_acc_walk * std::sqrt(dt));
      bg += walk.normal3(scn.imu.sigma_bias_gyro_walk * std::sqrt(dt));
    }
  }

  // --- GNSS raw epochs ---
  if (scn.gnss.rate_hz > 0.0) {
    Rng rng(substream(scn.seed, "gnss"));
    const double dt = 1.0 / scn.gnss.rate_hz;
    const int n = static_cast<int>(std::floor((scn.duration_s - scn.gnss.phase_s) / dt));
    for (int k = 0; k <= n; ++k) {
      const double t = scn.gnss.phase_s + k * dt;
      const NavState x = truth.state_at(t);
      const lie::Vec3 p_ant =
          x.pose.translation() + x.pose.rotation() * scn.gnss.lever_arm;
      const lie::Vec3 v_ant =
          x.pose.rotation() *
          (x.varpi.head<3>() + x.varpi.tail<3>().cross(scn.gnss.lever_arm));
      const ActiveDegradations act = degradations_at(scn, t);
      GnssEpoch epoch;
      epoch.t = t + scn.gnss.delay_s;
      if (!act.outage) {
        int kept = 0;
        for (int sat = 0; sat < sky.size(); ++sat) {
          lie::Vec3 p_sat, v_sat;
          sky.state_at(sat, t, &p_sat, &v_sat);
          const double el = elevation_rad(p_sat, p_ant);
          if (el < scn.gnss.mask_deg * M_PI / 180.0) continue;
          if (act.keep_n >= 0 && kept >= act.keep_n) break;
          ++kept;
          SatObs obs;
          obs.sat_id = sat;
          obs.sat_pos = p_sat;
          obs.sat_vel = v_sat;
          obs.elevation_rad = el;
          obs.cn0_dbhz = scn.gnss.cn0_zenith_dbhz -
                         scn.gnss.cn0_slope_per_deg * (90.0 - el * 180.0 / M_PI) +
                         scn.gnss.cn0_jitter_dbhz * rng.normal();
          const auto [var_pr, var_do] =
              factors::cn0_variance(obs.cn0_dbhz, scn.gnss.lambda_pr, scn.gnss.lambda_do);
          const lie::Vec3 u = (p_sat - p_ant).normalized();
          const double range = (p_sat - p_ant).norm();
          double pr = range + truth.clock_at(t)[0] + std::sqrt(var_pr) * rng.normal();
          if (act.multipath && rng.uniform() < act.fraction) pr += act.bias_m;
          obs.pseudorange_m = pr;
          const double range_rate =
              u.dot(v_ant - v_sat) + truth.clock_at(t)[1] + std::sqrt(var_do) * rng.normal();
          obs.doppler_hz = -range_rate / epoch.wavelength_m;
          epoch.sats.push_back(obs);
        }
      }
      out.gnss.push_back(epoch);
    }
  }

  // --- PVT fixes ---
  if (scn.pvt.rate_hz > 0.0) {
    Rng rng(substream(scn.seed, "pvt"));
    const double dt = 1.0 / scn.pvt.rate_hz;
    const int n = static_cast<int>(std::floor((scn.duration_s - scn.pvt.phase_s) / dt));
    for (int k = 0; k <= n; ++k) {
      const double t = scn.pvt.phase_s + k * dt;
      const NavState x = truth.state_at(t);
      if (degradations_at(scn, t).outage) continue;
      const lie::Vec3 p_ant = x.pose.translation() + x.pose.rotation() * scn.pvt.lever_arm;
      const lie::Vec3 v_ant =
          x.pose.rotation() *
          (x.varpi.head<3>() + x.varpi.tail<3>().cross(scn.pvt.lever_arm));
      const lie::Mat3 r_ne = geodesy::dcm_ecef_to_ned(geodesy::ecef_to_llh(p_ant));
      PvtSolution fix;
      fix.t = t + scn.pvt.delay_s;
      fix.antenna_pos = p_ant + rng.normal3(scn.pvt.sigma_pos_m);
      fix.velocity_ned = r_ne * v_ant + rng.normal3(scn.pvt.sigma_vel_mps);
      fix.sigma.head<3>().setConstant(scn.pvt.sigma_pos_m * scn.pvt.lying_factor);
      fix.sigma.tail<3>().setConstant(scn.pvt.sigma_vel_mps * scn.pvt.lying_factor);
      out.pvt.push_back(fix);
    }
  }

  // --- Odometry increments ---
  if (scn.odometry.rate_hz > 0.0) {
    Rng rng(substream(scn.seed, "odometry"));
    const double dt = 1.0 / scn.odometry.rate_hz;
    const double sd_rot = scn.odometry.sigma_rot_deg * M_PI / 180.0;
    const int n = static_cast<int>(std::floor(scn.duration_s * scn.odometry.rate_hz));
    for (int k = 0; k + 1 <= n; ++k) {
      const double t_i = k * dt;
      const double t_j = (k + 1) * dt;
      const lie::Pose rel =
          truth.state_at(t_i).pose.inverse() * truth.state_at(t_j).pose;
      lie::Vec6 eps;
      eps << rng.normal3(scn.odometry.sigma_pos_m), rng.normal3(sd_rot);
      OdometryIncrement inc;
      inc.t_i = t_i + scn.odometry.delay_s;
      inc.t_j = t_j + scn.odometry.delay_s;
      inc.delta = rel.inverse() * lie::exp_se3(eps);
      inc.covariance.setZero();
      inc.covariance.diagonal().head<3>().setConstant(scn.odometry.sigma_pos_m *
                                                      scn.odometry.sigma_pos_m);
      inc.covariance.diagonal().tail<3>().setConstant(sd_rot * sd_rot);
      out.odometry.push_back(inc);
    }
  }

  // --- 2-D body velocity ---
  if (scn.speed.rate_hz > 0.0) {
    Rng rng(substream(scn.seed, "speed"));
    const double dt = 1.0 / scn.speed.rate_hz;
    const int n = static_cast<int>(std::floor((scn.duration_s - scn.speed.phase_s) / dt));
    for (int k = 0; k <= n; ++k) {
      const double t = scn.speed.phase_s + k * dt;
      const NavState x = truth.state_at(t);
      const lie::Vec3 omega = x.varpi.tail<3>();
      const lie::Vec3 v_b = x.varpi.head<3>() + omega.cross(scn.speed.lever_arm);
      SpeedSample s;
      s.t = t + scn.speed.delay_s;
      s.lever_arm = scn.speed.lever_arm;
      s.gyro_at_t = omega;
      s.v2d = v_b.head<2>() + Eigen::Vector2d(scn.speed.sigma_mps * rng.normal(),
                                              scn.speed.sigma_mps * rng.normal());
      s.sigma.setConstant(scn.speed.sigma_mps);
      out.speed.push_back(s);
    }
  }

  return out;
}

}  // namespace ctnav::sim
