#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "ctnav/factors.hpp"
#include "ctnav/geodesy.hpp"
#include "ctnav/sim.hpp"
#include "test_util.hpp"

using namespace ctnav;
using lie::Mat3;
using lie::Pose;
using lie::Vec3;
using lie::Vec6;

namespace {

const char* kBaseScenario = R"(
[scenario]
duration_s = 20.0
seed = 7
origin_llh_deg = [50.78, 6.07, 210.0]

[trajectory]
kind = "twist_segments"

[[trajectory.segment]]
duration = 8.0
nu = [10.0, 0.0, 0.0]
omega = [0.0, 0.0, 0.1]

[[trajectory.segment]]
duration = 12.0
accel = [0.5, 0.0, 0.0]

[clock]
bias0_m = 12.0
drift0_mps = 0.3

[imu]
rate_hz = 200.0
sigma_accel = 0.0
sigma_gyro = 0.0

[gnss]
rate_hz = 10.0
phase_s = 0.037
sat_count = 8
cn0_zenith_dbhz = 45.0
cn0_slope_per_deg = 0.25
lever_arm = [0.0, 0.0, 0.4]

[pvt]
rate_hz = 10.0
phase_s = 0.053
sigma_pos_m = 0.0
sigma_vel_mps = 0.0

[odometry]
rate_hz = 10.0
sigma_pos_m = 0.0
sigma_rot_deg = 0.0

[speed]
rate_hz = 100.0
phase_s = 0.0043
sigma_mps = 0.0
lever_arm = [0.0, -0.8, 0.0]
)";

sim::Scenario base_scenario() { return sim::parse_scenario(kBaseScenario); }

}  // namespace

TEST_CASE("scenario: parses the reference file") {
  const sim::Scenario s = base_scenario();
  CHECK(s.duration_s == 20.0);
  CHECK(s.seed == 7);
  CHECK(s.origin.latitude_rad == doctest::Approx(50.78 * M_PI / 180.0));
  CHECK(s.segments.size() == 2);
  CHECK(s.segments[0].has_nu);
  CHECK(!s.segments[1].has_nu);
  CHECK(s.clock.bias0_m == 12.0);
  CHECK(s.gnss.sat_count == 8);
  CHECK(s.speed.lever_arm[1] == -0.8);
}

TEST_CASE("scenario: rejects malformed input with the offending path") {
  const auto expect_config = [](const std::string& text, const std::string& needle) {
    try {
      (void)sim::parse_scenario(text);
      CHECK_MESSAGE(false, "expected ConfigError for: ", needle);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kConfig);
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  expect_config("[scenario]\nduration_s = 10\nbogus = 1\n"
                "[[trajectory.segment]]\nduration = 10\nnu = [1,0,0]\n",
                "bogus");
  expect_config("[scenario]\nduration_s = 10\n[trajectory]\nkind = \"hover\"\n",
                "trajectory.kind");
  expect_config("[scenario]\nduration_s = 10\n"
                "[[trajectory.segment]]\nduration = 10\nnu = [1,0,0]\n"
                "omega = [0,0,0.1]\naccel = [1,0,0]\n",
                "omega and accel");
  expect_config("[scenario]\nduration_s = 10\n"
                "[[trajectory.segment]]\nduration = 4\nnu = [1,0,0]\n",
                "segments cover");
  expect_config("[scenario]\nduration_s = 10\n"
                "[[trajectory.segment]]\nduration = 10\nnu = [1,0,0]\n"
                "[[degradation]]\nkind = \"outage\"\nt_start = 5\nt_end = 3\n",
                "degradation");
  CHECK_THROWS_AS((void)sim::load_scenario("/nonexistent/path.toml"), Error);
}

TEST_CASE("trajectory: constant twist and circular arc") {
  sim::Scenario s = base_scenario();
  s.segments.clear();
  sim::TwistSegmentSpec seg;
  seg.duration = 30.0;
  seg.has_nu = true;
  seg.nu = Vec3(10, 0, 0);
  s.segments.push_back(seg);
  s.duration_s = 20.0;
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const NavState x0 = gt.state_at(0.0);
  const NavState x2 = gt.state_at(2.0);
  const Vec3 expect = x0.pose.translation() + x0.pose.rotation() * Vec3(20, 0, 0);
  CHECK((x2.pose.translation() - expect).norm() < 1e-9);

  s.segments[0].omega = Vec3(0, 0, 0.1);
  const sim::GroundTruth arc = sim::make_ground_truth(s);
  for (double t : {0.0, 3.7, 11.0, 19.5}) {
    const NavState x = arc.state_at(t);
    CHECK((x.pose.rotation() * x.varpi.head<3>()).norm() == doctest::Approx(10.0));
  }
}

TEST_CASE("trajectory: finite differences of the pose match varpi") {
  const sim::GroundTruth gt = sim::make_ground_truth(base_scenario());
  // poses live on ~4e6 m ECEF coordinates; h must clear the rounding floor
  const double h = 1e-3;
  for (double t : {1.0, 5.0, 7.5, 10.0, 15.0}) {
    const Pose a = gt.state_at(t - h).pose;
    const Pose b = gt.state_at(t + h).pose;
    const Vec6 fd = lie::log_se3(a.inverse() * b) / (2.0 * h);
    CHECK((fd - gt.state_at(t).varpi).norm() < 1e-6);
  }
}

TEST_CASE("trajectory: acceleration segments chain velocity") {
  const sim::GroundTruth gt = sim::make_ground_truth(base_scenario());
  // second segment starts at t=8 continuing the arc's 10 m/s, accel 0.5 m/s^2
  const NavState before = gt.state_at(8.0 - 1e-9);
  const NavState after = gt.state_at(8.0 + 1e-9);
  CHECK((before.varpi.head<3>() - after.varpi.head<3>()).norm() < 1e-6);
  const NavState mid = gt.state_at(12.0);
  CHECK(mid.varpi.head<3>()[0] == doctest::Approx(10.0 + 0.5 * 4.0).epsilon(1e-9));
  CHECK((mid.varpi_dot.head<3>() - Vec3(0.5, 0, 0)).norm() == 0.0);
}

TEST_CASE("trajectory: waypoint spline interpolates and differentiates") {
  sim::Scenario s = base_scenario();
  s.trajectory = sim::TrajectoryKind::kWaypointSpline;
  s.duration_s = 12.0;
  s.waypoints = {{0.0, Vec3(0, 0, 0)},
                 {4.0, Vec3(30, 10, 0)},
                 {8.0, Vec3(60, -10, 2)},
                 {12.0, Vec3(90, 0, 0)}};
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  for (const auto& wp : s.waypoints) {
    const NavState x = gt.state_at(wp.t);
    const Vec3 enu = x.pose.rotation().transpose() *
                     (x.pose.translation() - gt.start_pose().translation());
    CHECK((enu - wp.pos_enu).norm() < 1e-9);
  }
  const double h = 1e-3;
  for (double t : {1.3, 4.0, 6.6, 9.9}) {
    const Vec3 pa = gt.state_at(t - h).pose.translation();
    const Vec3 pb = gt.state_at(t + h).pose.translation();
    const NavState x = gt.state_at(t);
    const Vec3 v_fd = (pb - pa) / (2.0 * h);
    CHECK((v_fd - x.pose.rotation() * x.varpi.head<3>()).norm() < 2e-6);
    // C2: acceleration continuous across the knot at t=4
    const Vec3 aa = gt.state_at(4.0 - 1e-9).varpi_dot.head<3>();
    const Vec3 ab = gt.state_at(4.0 + 1e-9).varpi_dot.head<3>();
    CHECK((aa - ab).norm() < 1e-6);
  }
}

TEST_CASE("trajectory: gp sample is continuous and seed-deterministic") {
  sim::Scenario s = base_scenario();
  s.trajectory = sim::TrajectoryKind::kGpSample;
  s.duration_s = 10.0;
  const sim::GroundTruth a = sim::make_ground_truth(s);
  const sim::GroundTruth b = sim::make_ground_truth(s);
  for (double t : {0.5, 3.33, 7.77}) {
    CHECK((a.state_at(t).pose.translation() - b.state_at(t).pose.translation()).norm() == 0.0);
    const NavState x0 = a.state_at(t);
    const NavState x1 = a.state_at(t + 1e-7);
    CHECK((x0.pose.translation() - x1.pose.translation()).norm() < 1e-4);
    CHECK((x0.varpi - x1.varpi).norm() < 1e-4);
  }
  sim::Scenario other = s;
  other.seed = 8;
  const sim::GroundTruth c = sim::make_ground_truth(other);
  CHECK((a.state_at(5.0).pose.translation() - c.state_at(5.0).pose.translation()).norm() > 1e-3);
}

TEST_CASE("constellation: geometry and orbital consistency") {
  const sim::Scenario s = base_scenario();
  const sim::Constellation sky = sim::make_constellation(s);
  REQUIRE(sky.size() == 8);
  const Vec3 p0 = geodesy::llh_to_ecef(s.origin);
  for (int k = 0; k < sky.size(); ++k) {
    Vec3 pos, vel;
    sky.state_at(k, 0.0, &pos, &vel);
    CHECK(pos.norm() == doctest::Approx(26578e3).epsilon(1e-9));
    CHECK(sim::elevation_rad(pos, p0) > s.gnss.mask_deg * M_PI / 180.0);
    // circular orbit: v perpendicular to r, rate |v|/|r| matches
    CHECK(std::abs(pos.dot(vel)) < 1e-3 * pos.norm() * vel.norm());
    CHECK(vel.norm() / pos.norm() == doctest::Approx(sky.rate_rad_s).epsilon(1e-12));
    Vec3 pos2, vel2;
    sky.state_at(k, 30.0, &pos2, &vel2);
    CHECK(pos2.norm() == doctest::Approx(26578e3).epsilon(1e-9));
  }
}

TEST_CASE("imu: gravity mapping at rest") {
  sim::Scenario s = base_scenario();
  s.segments.clear();
  sim::TwistSegmentSpec seg;
  seg.duration = 30.0;
  seg.has_nu = true;
  s.segments.push_back(seg);
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));
  REQUIRE(!streams.imu.empty());
  const Vec3 p0 = geodesy::llh_to_ecef(s.origin);
  const Mat3 r0 = geodesy::dcm_ecef_to_enu(s.origin).transpose();
  const Vec3 expect = 9.80665 * (r0.transpose() * p0.normalized());
  for (int k : {0, 100, 4000}) {
    CHECK((streams.imu[k].accel - expect).norm() < 1e-12);
    CHECK(streams.imu[k].gyro.norm() == 0.0);
  }
  // the specific force is up-dominated in the local frame
  CHECK(expect[2] > 9.7);
}

TEST_CASE("imu: noise-free preintegration reproduces truth increments") {
  sim::Scenario s = base_scenario();
  s.segments.clear();
  sim::TwistSegmentSpec seg;
  seg.duration = 30.0;
  seg.has_nu = true;
  seg.nu = Vec3(5, 0, 0);
  seg.omega = Vec3(0, 0, 0.05);
  s.segments.push_back(seg);
  s.imu.rate_hz = 400.0;
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));

  const double t_i = 1.0, t_j = 1.1;
  std::vector<ImuSample> window;
  for (const auto& m : streams.imu)
    if (m.t >= t_i - 1e-12 && m.t <= t_j + 1e-12) window.push_back(m);
  REQUIRE(window.size() == 41);

  const NavState xi = gt.state_at(t_i);
  const NavState xj = gt.state_at(t_j);
  const Vec3 g = geodesy::gravity_ecef(xi.pose.translation());
  const auto pre = factors::preintegrate(window, Vec3::Zero(), Vec3::Zero(), g);

  const double dt = t_j - t_i;
  const Mat3 dR_true = xi.pose.rotation().transpose() * xj.pose.rotation();
  const Vec3 v_i = xi.pose.rotation() * xi.varpi.head<3>();
  const Vec3 v_j = xj.pose.rotation() * xj.varpi.head<3>();
  const Vec3 dv_true = xi.pose.rotation().transpose() * (v_j - v_i - g * dt);
  const Vec3 dp_true = xi.pose.rotation().transpose() *
                       (xj.pose.translation() - xi.pose.translation() - v_i * dt -
                        0.5 * g * dt * dt);
  CHECK(lie::log_so3(dR_true.transpose() * pre.dR).norm() < 1e-4);
  CHECK((pre.dv - dv_true).norm() < 1e-4);
  CHECK((pre.dp - dp_true).norm() < 1e-4);
}

TEST_CASE("imu: bias random walk variance grows linearly") {
  sim::Scenario s = base_scenario();
  s.duration_s = 4.0;
  s.segments[0].duration = 4.0;
  s.segments.resize(1);
  s.imu.rate_hz = 100.0;
  s.imu.sigma_bias_acc_walk = 0.01;
  std::vector<double> at_1, at_4;
  for (int seed = 0; seed < 100; ++seed) {
    s.seed = 1000 + seed;
    const sim::GroundTruth gt = sim::make_ground_truth(s);
    const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));
    at_1.push_back(streams.bias_acc[100][0]);
    at_4.push_back(streams.bias_acc[400][0]);
  }
  const auto var = [](const std::vector<double>& v) {
    double m = 0, s2 = 0;
    for (double x : v) m += x;
    m /= v.size();
    for (double x : v) s2 += (x - m) * (x - m);
    return s2 / (v.size() - 1);
  };
  const double ratio = var(at_4) / var(at_1);
  CHECK(ratio > 2.3);
  CHECK(ratio < 6.5);
}

TEST_CASE("gnss: zero-noise epochs give zero prdo residual at truth") {
  sim::Scenario s = base_scenario();
  s.gnss.cn0_jitter_dbhz = 0.0;
  s.gnss.lambda_pr = 1e-30;  // drives the noise draw to zero, keeps weights finite
  s.gnss.lambda_do = 1e-30;
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Constellation sky = sim::make_constellation(s);
  const sim::Streams streams = sim::synthesize(s, gt, sky);
  REQUIRE(!streams.gnss.empty());
  int checked = 0;
  for (size_t e = 0; e < streams.gnss.size(); e += 37) {
    const GnssEpoch& epoch = streams.gnss[e];
    const NavState x = gt.state_at(epoch.t);  // delay_s = 0 here
    for (const auto& sat : epoch.sats) {
      const auto res = factors::prdo_residual(x, sat, x.clock, s.gnss.lever_arm,
                                              x.varpi.tail<3>(), epoch.wavelength_m);
      CHECK(std::abs(res.residual[0]) < 2e-8);
      CHECK(std::abs(res.residual[1]) < 2e-8);
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("gnss: outage empties epochs, reduced sats caps the count") {
  sim::Scenario s = base_scenario();
  sim::DegradationSpec outage;
  outage.kind = sim::DegradationKind::kOutage;
  outage.t_start = 5.0;
  outage.t_end = 10.0;
  s.degradations.push_back(outage);
  sim::DegradationSpec reduced;
  reduced.kind = sim::DegradationKind::kReducedSats;
  reduced.t_start = 12.0;
  reduced.t_end = 16.0;
  reduced.keep_n = 4;
  s.degradations.push_back(reduced);
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));
  for (const auto& epoch : streams.gnss) {
    if (epoch.t >= 5.0 && epoch.t < 10.0)
      CHECK(epoch.sats.empty());
    else if (epoch.t >= 12.0 && epoch.t < 16.0)
      CHECK(epoch.sats.size() <= 4);
    else
      CHECK(epoch.sats.size() >= 6);
  }
}

TEST_CASE("gnss: multipath hits the scripted fraction of satellites") {
  sim::Scenario s = base_scenario();
  s.duration_s = 10.0;
  s.segments[0].duration = 10.0;
  s.segments.resize(1);
  s.gnss.cn0_zenith_dbhz = 70.0;  // sigma ~ 1e-3.5 m so the +50 m bias is unambiguous
  s.gnss.cn0_slope_per_deg = 0.0;
  sim::DegradationSpec mp;
  mp.kind = sim::DegradationKind::kMultipath;
  mp.t_start = 0.0;
  mp.t_end = 10.0;
  mp.bias_m = 50.0;
  mp.fraction = 0.25;
  s.degradations.push_back(mp);
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));
  int biased = 0, total = 0;
  for (const auto& epoch : streams.gnss) {
    const NavState x = gt.state_at(epoch.t);
    const Vec3 p_ant = x.pose.translation() + x.pose.rotation() * s.gnss.lever_arm;
    for (const auto& sat : epoch.sats) {
      const double err = sat.pseudorange_m - (sat.sat_pos - p_ant).norm() - x.clock[0];
      ++total;
      if (err > 25.0) ++biased;
    }
  }
  REQUIRE(total > 500);
  const double frac = static_cast<double>(biased) / total;
  CHECK(frac > 0.20);
  CHECK(frac < 0.30);
}

TEST_CASE("gnss: cn0 decreases away from zenith") {
  const sim::Scenario s = base_scenario();  // slope 0.25, jitter 0
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));
  const GnssEpoch& epoch = streams.gnss.front();
  REQUIRE(epoch.sats.size() >= 2);
  for (size_t a = 0; a < epoch.sats.size(); ++a)
    for (size_t b = 0; b < epoch.sats.size(); ++b)
      if (epoch.sats[a].elevation_rad < epoch.sats[b].elevation_rad)
        CHECK(epoch.sats[a].cn0_dbhz < epoch.sats[b].cn0_dbhz);
}

TEST_CASE("pvt/odometry/speed: zero residuals at truth, and the lying flag") {
  sim::Scenario s = base_scenario();
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));

  REQUIRE(!streams.pvt.empty());
  for (size_t k = 0; k < streams.pvt.size(); k += 17) {
    const PvtSolution& z = streams.pvt[k];
    const auto res = factors::pvt_residual(gt.state_at(z.t), z, s.pvt.lever_arm);
    CHECK(res.residual.norm() < 1e-7);
  }

  REQUIRE(!streams.odometry.empty());
  for (size_t k = 0; k < streams.odometry.size(); k += 13) {
    const OdometryIncrement& inc = streams.odometry[k];
    const auto res = factors::between_pose_residual(gt.state_at(inc.t_i),
                                                    gt.state_at(inc.t_j), inc);
    CHECK(res.residual.norm() < 1e-9);
  }

  REQUIRE(!streams.speed.empty());
  for (size_t k = 0; k < streams.speed.size(); k += 97) {
    const SpeedSample& sp = streams.speed[k];
    const auto res = factors::velocity2d_residual(gt.state_at(sp.t), sp);
    CHECK(res.residual.norm() < 1e-9);
  }

  sim::Scenario lying = s;
  lying.pvt.sigma_pos_m = 2.0;
  lying.pvt.lying_factor = 0.1;
  const sim::Streams ls = sim::synthesize(lying, gt, sim::make_constellation(lying));
  CHECK(ls.pvt.front().sigma[0] == doctest::Approx(0.2));
}

TEST_CASE("speed: pure yaw with rear lever arm matches the cross-product prediction") {
  sim::Scenario s = base_scenario();
  s.segments.clear();
  sim::TwistSegmentSpec seg;
  seg.duration = 30.0;
  seg.has_nu = true;
  seg.nu = Vec3(4, 0, 0);
  seg.omega = Vec3(0, 0, 0.5);
  s.segments.push_back(seg);
  s.speed.lever_arm = Vec3(-1.2, 0, 0);  // rear axle
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));
  const Vec3 predict = Vec3(4, 0, 0) + Vec3(0, 0, 0.5).cross(Vec3(-1.2, 0, 0));
  for (size_t k = 0; k < streams.speed.size(); k += 111)
    CHECK((streams.speed[k].v2d - predict.head<2>()).norm() < 1e-12);
}

TEST_CASE("streams: bit-identical per seed, different across seeds") {
  sim::Scenario s = base_scenario();
  s.imu.sigma_accel = 8e-3;
  s.imu.sigma_gyro = 1e-4;
  s.pvt.sigma_pos_m = 1.0;
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Constellation sky = sim::make_constellation(s);
  const sim::Streams a = sim::synthesize(s, gt, sky);
  const sim::Streams b = sim::synthesize(s, gt, sky);
  REQUIRE(a.imu.size() == b.imu.size());
  bool identical = true;
  for (size_t k = 0; k < a.imu.size(); ++k)
    identical = identical && a.imu[k].accel == b.imu[k].accel &&
                a.imu[k].gyro == b.imu[k].gyro && a.imu[k].t == b.imu[k].t;
  for (size_t k = 0; k < a.gnss.size(); ++k)
    for (size_t j = 0; j < a.gnss[k].sats.size(); ++j)
      identical = identical &&
                  a.gnss[k].sats[j].pseudorange_m == b.gnss[k].sats[j].pseudorange_m &&
                  a.gnss[k].sats[j].doppler_hz == b.gnss[k].sats[j].doppler_hz;
  CHECK(identical);

  sim::Scenario s2 = s;
  s2.seed = 8;
  const sim::Streams c = sim::synthesize(s2, gt, sky);
  CHECK(a.imu[5].accel != c.imu[5].accel);
}

TEST_CASE("streams: default phases keep most timestamps off the state grid") {
  const sim::Scenario s = base_scenario();
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));
  const double spacing = 0.1, t_sync = 0.01;
  int off_grid = 0, total = 0;
  const auto tally = [&](double t) {
    const double r = std::fmod(t, spacing);
    const double dist = std::min(r, spacing - r);
    ++total;
    if (dist > t_sync) ++off_grid;
  };
  for (const auto& e : streams.gnss) tally(e.t);
  for (const auto& z : streams.pvt) tally(z.t);
  for (const auto& sp : streams.speed) tally(sp.t);
  CHECK(total > 2000);
  CHECK(off_grid > total / 2);
}

TEST_CASE("streams: sensor delays shift the raw stamps") {
  sim::Scenario s = base_scenario();
  s.pvt.delay_s = 0.08;
  const sim::GroundTruth gt = sim::make_ground_truth(s);
  const sim::Streams streams = sim::synthesize(s, gt, sim::make_constellation(s));
  CHECK(streams.pvt.front().t == doctest::Approx(0.053 + 0.08));
  // measurement content corresponds to the TRUE time, not the stamped one
  const PvtSolution& z = streams.pvt.front();
  const NavState x = gt.state_at(z.t - 0.08);
  const auto res = factors::pvt_residual(x, z, s.pvt.lever_arm);
  CHECK(res.residual.norm() < 1e-7);
}
