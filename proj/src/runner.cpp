#include "ctnav/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctnav/error.hpp"
#include "ctnav/geodesy.hpp"

namespace ctnav::runner {

namespace {

constexpr double kEps = 1e-9;
constexpr double kSpacing = 0.1;    // worker tick = keyframe spacing (10 Hz)
constexpr double kPubDt = 0.005;    // publisher grid (200 Hz)
constexpr double kRad2Deg = 57.29577951308232;

void validate(const sim::Scenario& scn, const RunConfig& cfg) {
  if (cfg.tight) {
    if (!cfg.sensors.gnss || scn.gnss.rate_hz <= 0.0)
      raise(ErrorCode::kConfig,
            "fusion: tight coupling requires the raw GNSS stream "
            "(sensors.gnss enabled and scenario [gnss] rate_hz > 0)");
  } else {
    if (!cfg.sensors.pvt || scn.pvt.rate_hz <= 0.0)
      raise(ErrorCode::kConfig,
            "fusion: loose coupling requires the PVT stream "
            "(sensors.pvt enabled and scenario [pvt] rate_hz > 0)");
  }
  if (cfg.lag_s < kSpacing)
    raise(ErrorCode::kConfig, "config.lag: smoothing lag must be >= the 0.1 s state spacing");
}

graph::SolverConfig solver_config(const sim::Scenario& scn, const RunConfig& cfg) {
  graph::SolverConfig sc;
  sc.tight = cfg.tight;
  sc.lag_seconds = cfg.lag_s;
  sc.gp.model = cfg.gp_model;
  sc.gnss_loss = cfg.loss;
  if (cfg.sensors.imu && scn.imu.rate_hz > 0.0) {
    if (scn.imu.sigma_accel > 0.0) sc.imu_noise.sigma_accel = scn.imu.sigma_accel;
    if (scn.imu.sigma_gyro > 0.0) sc.imu_noise.sigma_gyro = scn.imu.sigma_gyro;
    if (scn.imu.sigma_bias_acc_walk > 0.0) sc.sigma_bias_acc_walk = scn.imu.sigma_bias_acc_walk;
    if (scn.imu.sigma_bias_gyro_walk > 0.0)
      sc.sigma_bias_gyro_walk = scn.imu.sigma_bias_gyro_walk;
  }
  sc.lambda_pr = scn.gnss.lambda_pr;
  sc.lambda_do = scn.gnss.lambda_do;
  sc.lever_gnss = scn.gnss.lever_arm;
  sc.lever_pvt = scn.pvt.lever_arm;
  sc.t_d.imu = scn.imu.delay_s;
  sc.t_d.gnss = scn.gnss.delay_s;
  sc.t_d.pvt = scn.pvt.delay_s;
  sc.t_d.odometry = scn.odometry.delay_s;
  sc.t_d.speed = scn.speed.delay_s;
  return sc;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) raise(ErrorCode::kIo, "short write to " + path.string());
}

std::string fmt_row(const char* fmt, ...) {
  char buf[768];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

}  // namespace

std::string trajectory_csv(const std::vector<NavState>& published) {
  std::string text = "t,x_e,y_e,z_e,lat,lon,h,roll,pitch,yaw,vN,vE,vD\n";
  for (const auto& x : published) {
    const lie::Vec3 p = x.pose.translation();
    const geodesy::GeodeticCoord llh = geodesy::ecef_to_llh(p);
    const geodesy::Mat3 r_ned = geodesy::dcm_ecef_to_ned(llh);
    const lie::Vec3 rpy = geodesy::ned_euler(r_ned * x.pose.rotation()) * kRad2Deg;
    const lie::Vec3 v_ned = r_ned * x.world_velocity();
    text += fmt_row(
        "%.6f,%.6f,%.6f,%.6f,%.12f,%.12f,%.6f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", x.t, p.x(),
        p.y(), p.z(), llh.latitude_rad * kRad2Deg, llh.longitude_rad * kRad2Deg, llh.height_m,
        rpy.x(), rpy.y(), rpy.z(), v_ned.x(), v_ned.y(), v_ned.z());
  }
  return text;
}

std::string metrics_json(const metrics::MetricsReport& rep) {
  nlohmann::json j;
  j["rmse_2d_m"] = rep.rmse_2d_m;
  j["rmse_3d_m"] = rep.rmse_3d_m;
  j["max_2d_err_m"] = rep.max_2d_err_m;
  j["rmse_vel_mps"] = rep.rmse_vel_mps;
  j["mean_yaw_err_deg"] = rep.mean_yaw_err_deg;
  j["smoothness_s"] = rep.smoothness_s;
  j["published_n"] = rep.published_n;
  j["iterations"] = {{"windows", rep.window_count},
                     {"mean", rep.mean_iterations},
                     {"max", rep.max_iterations}};
  nlohmann::json series = nlohmann::json::array();
  for (const auto& e : rep.series)
    series.push_back({{"t", e.t},
                      {"err_2d_m", e.err_2d_m},
                      {"err_3d_m", e.err_3d_m},
                      {"err_vel_mps", e.err_vel_mps},
                      {"yaw_err_deg", e.yaw_err_deg}});
  j["series"] = std::move(series);
  return j.dump(2) + "\n";
}

std::string routing_json(const graph::RoutingCounts& counts) {
  nlohmann::json j;
  j["synchronized"] = counts.synchronized_n;
  j["interpolated"] = counts.interpolated_n;
  j["dropped"] = counts.dropped_n;
  j["cached"] = counts.cached_n;
  j["evicted"] = counts.evicted_n;
  return j.dump(2) + "\n";
}

RunResult run(const sim::Scenario& scn_in, const RunConfig& cfg) {
  sim::Scenario scn = scn_in;
  if (cfg.override_seed) scn.seed = cfg.seed;
  validate(scn, cfg);

  const sim::GroundTruth truth = sim::make_ground_truth(scn);
  const sim::Constellation sky = sim::make_constellation(scn);
  const sim::Streams streams = sim::synthesize(scn, truth, sky);

  graph::Estimator est(solver_config(scn, cfg));
  NavState x0 = truth.state_at(0.0);
  x0.varpi_dot.setZero();
  x0.bias_acc.setZero();
  x0.bias_gyro.setZero();
  x0.clock.setZero();  // the receiver clock must come from the data
  est.initialize(x0);

  const double dur = scn.duration_s;
  const bool use_imu = cfg.sensors.imu && scn.imu.rate_hz > 0.0;
  const bool use_gnss = cfg.tight;   // raw epochs only under tight coupling
  const bool use_pvt = !cfg.tight;   // PVT fixes only under loose coupling
  const bool use_odo = cfg.sensors.odometry && scn.odometry.rate_hz > 0.0;
  const bool use_speed = cfg.sensors.speed && scn.speed.rate_hz > 0.0;

  RunResult out;
  std::size_t ni = 0, ng = 0, np = 0, no = 0, ns = 0;
  long next_pub = 0;

  const auto wall0 = std::chrono::steady_clock::now();
  auto publish_through = [&](double t_hi) {
    while (static_cast<double>(next_pub) * kPubDt <= t_hi + kEps) {
      const double tp = static_cast<double>(next_pub) * kPubDt;
      NavState x = est.publish_propagated(tp);
      x.t = tp;  // rows are keyed by publish time even while holding
      out.published.push_back(x);
      ++next_pub;
    }
  };

  // Cold-start rows before the first optimizer tick come from the prior.
  publish_through(std::min(kSpacing - kPubDt, dur));

  for (long k = 1; static_cast<double>(k) * kSpacing <= dur + kEps; ++k) {
    const double t = static_cast<double>(k) * kSpacing;
    if (use_imu)
      while (ni < streams.imu.size() && streams.imu[ni].t <= t + kEps)
        est.submit_imu(streams.imu[ni++]);
    if (use_gnss)
      while (ng < streams.gnss.size() && streams.gnss[ng].t <= t + kEps)
        est.submit(graph::Measurement{streams.gnss[ng++]});
    if (use_pvt)
      while (np < streams.pvt.size() && streams.pvt[np].t <= t + kEps)
        est.submit(graph::Measurement{streams.pvt[np++]});
    if (use_odo)
      while (no < streams.odometry.size() && streams.odometry[no].t_j <= t + kEps)
        est.submit(graph::Measurement{streams.odometry[no++]});
    if (use_speed)
      while (ns < streams.speed.size() && streams.speed[ns].t <= t + kEps)
        est.submit(graph::Measurement{streams.speed[ns++]});
    est.advance_to(t);
    publish_through(std::min(t + kSpacing - kPubDt, dur));
  }
  const double wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();

  out.truth.reserve(out.published.size());
  for (const auto& x : out.published) out.truth.push_back(truth.state_at(x.t));

  out.metrics = metrics::evaluate(out.published, out.truth, scn.origin);
  out.routing = est.routing_counts();
  int max_it = 0;
  double sum_it = 0.0;
  for (const auto& r : est.reports()) {
    max_it = std::max(max_it, r.iterations);
    sum_it += r.iterations;
  }
  out.metrics.window_count = static_cast<int>(est.reports().size());
  out.metrics.mean_iterations =
      est.reports().empty() ? 0.0 : sum_it / static_cast<double>(est.reports().size());
  out.metrics.max_iterations = max_it;
  out.metrics.wall_time_s = wall_s;

  if (!cfg.out_dir.empty()) {
    const std::filesystem::path dir(cfg.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) raise(ErrorCode::kIo, "cannot create output directory " + dir.string());
    write_file(dir / "trajectory.csv", trajectory_csv(out.published));
    write_file(dir / "metrics.json", metrics_json(out.metrics));
    write_file(dir / "routing.json", routing_json(out.routing));
    nlohmann::json timing;
    timing["wall_time_s"] = wall_s;  // non-deterministic: kept out of metrics.json
    write_file(dir / "timing.json", timing.dump(2) + "\n");
  }
  return out;
}

RunResult run_file(const std::string& scenario_path, const RunConfig& cfg) {
  return run(sim::load_scenario(scenario_path), cfg);
}

void write_streams(const sim::Scenario& scn, const std::string& out_dir) {
  const sim::GroundTruth truth = sim::make_ground_truth(scn);
  const sim::Constellation sky = sim::make_constellation(scn);
  const sim::Streams s = sim::synthesize(scn, truth, sky);

  const std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) raise(ErrorCode::kIo, "cannot create output directory " + dir.string());

  std::string imu = "t,accel_x,accel_y,accel_z,gyro_x,gyro_y,gyro_z\n";
  for (const auto& m : s.imu)
    imu += fmt_row("%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", m.t, m.accel.x(), m.accel.y(),
                   m.accel.z(), m.gyro.x(), m.gyro.y(), m.gyro.z());
  write_file(dir / "imu.csv", imu);

  std::string gnss =
      "t,sat_id,pseudorange_m,doppler_hz,cn0_dbhz,sat_x,sat_y,sat_z,sat_vx,sat_vy,sat_vz,"
      "wavelength_m\n";
  for (const auto& e : s.gnss)
    for (const auto& o : e.sats)
      gnss += fmt_row("%.9f,%d,%.6f,%.9f,%.3f,%.3f,%.3f,%.3f,%.6f,%.6f,%.6f,%.15f\n", e.t,
                      o.sat_id, o.pseudorange_m, o.doppler_hz, o.cn0_dbhz, o.sat_pos.x(),
                      o.sat_pos.y(), o.sat_pos.z(), o.sat_vel.x(), o.sat_vel.y(),
                      o.sat_vel.z(), e.wavelength_m);
  write_file(dir / "gnss.csv", gnss);

  std::string pvt =
      "t,x,y,z,vN,vE,vD,sigma_x,sigma_y,sigma_z,sigma_vN,sigma_vE,sigma_vD\n";
  for (const auto& z : s.pvt)
    pvt += fmt_row("%.9f,%.6f,%.6f,%.6f,%.9f,%.9f,%.9f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", z.t,
                   z.antenna_pos.x(), z.antenna_pos.y(), z.antenna_pos.z(),
                   z.velocity_ned.x(), z.velocity_ned.y(), z.velocity_ned.z(), z.sigma(0),
                   z.sigma(1), z.sigma(2), z.sigma(3), z.sigma(4), z.sigma(5));
  write_file(dir / "pvt.csv", pvt);

  std::string odo = "t_i,t_j,rho_x,rho_y,rho_z,phi_x,phi_y,phi_z\n";
  for (const auto& z : s.odometry) {
    const lie::Vec6 xi = lie::log_se3(z.delta);
    odo += fmt_row("%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", z.t_i, z.t_j, xi(0), xi(1),
                   xi(2), xi(3), xi(4), xi(5));
  }
  write_file(dir / "odometry.csv", odo);

  std::string speed = "t,v_x,v_y\n";
  for (const auto& z : s.speed)
    speed += fmt_row("%.9f,%.9f,%.9f\n", z.t, z.v2d.x(), z.v2d.y());
  write_file(dir / "speed.csv", speed);

  std::string bias = "t,bias_acc_x,bias_acc_y,bias_acc_z,bias_gyro_x,bias_gyro_y,bias_gyro_z\n";
  for (std::size_t k = 0; k < s.bias_t.size(); ++k)
    bias += fmt_row("%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", s.bias_t[k], s.bias_acc[k].x(),
                    s.bias_acc[k].y(), s.bias_acc[k].z(), s.bias_gyro[k].x(),
                    s.bias_gyro[k].y(), s.bias_gyro[k].z());
  write_file(dir / "bias.csv", bias);

  // Ground truth sampled at 100 Hz in the trajectory CSV schema.
  std::vector<NavState> rows;
  for (long k = 0; static_cast<double>(k) * 0.01 <= scn.duration_s + kEps; ++k) {
    NavState x = truth.state_at(static_cast<double>(k) * 0.01);
    x.t = static_cast<double>(k) * 0.01;
    rows.push_back(x);
  }
  write_file(dir / "truth.csv", trajectory_csv(rows));
}

std::vector<CompareRow> compare_files(const std::string& path_a, const std::string& path_b,
                                      double rel_tol) {
  auto load = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::kIo, "compare: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      return nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      raise(ErrorCode::kConfig, "compare: malformed JSON in " + path + ": " + e.what());
    }
  };
  const nlohmann::json a = load(path_a);
  const nlohmann::json b = load(path_b);

  static const char* kKeys[] = {"rmse_2d_m",      "rmse_3d_m",        "max_2d_err_m",
                                "rmse_vel_mps",   "mean_yaw_err_deg", "smoothness_s"};
  std::vector<CompareRow> rows;
  for (const char* key : kKeys) {
    for (const auto* j : {&a, &b}) {
      if (!j->contains(key) || !(*j)[key].is_number())
        raise(ErrorCode::kConfig,
              std::string("compare: missing or non-numeric metric key '") + key + "'");
    }
    CompareRow row;
    row.name = key;
    row.a = a[key].get<double>();
    row.b = b[key].get<double>();
    row.delta = row.b - row.a;
    row.regressed = row.b > row.a * (1.0 + rel_tol) + 1e-9;
    rows.push_back(row);
  }
  return rows;
}

std::string render_compare(const std::vector<CompareRow>& rows) {
  std::string text = fmt_row("%-18s %14s %14s %14s\n", "metric", "reference", "candidate", "delta");
  for (const auto& r : rows)
    text += fmt_row("%-18s %14.6f %14.6f %+14.6f%s\n", r.name.c_str(), r.a, r.b, r.delta,
                    r.regressed ? "  REGRESSED" : "");
  return text;
}

}  // namespace ctnav::runner
