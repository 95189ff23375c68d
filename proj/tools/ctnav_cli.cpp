// Command line front end. Everything goes through the plain-C library
// boundary; exit codes mirror its status categories (0 ok, 2 config,
// 3 solver, 4 I/O or metric regression).
#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "ctnav/c_api.h"

namespace {

int fail(int rc) {
  std::fprintf(stderr, "error: %s\n", ctnav_last_error());
  return rc;
}

int do_run(const std::string& scenario, const ctnav_run_options& opts, const std::string& fusion,
           const std::string& gp) {
  ctnav_scenario* scn = nullptr;
  int rc = ctnav_scenario_load(scenario.c_str(), &scn);
  if (rc != 0) return fail(rc);

  ctnav_result* res = nullptr;
  rc = ctnav_run(scn, &opts, &res);
  ctnav_scenario_free(scn);
  if (rc != 0) return fail(rc);

  ctnav_metrics m;
  ctnav_routing r;
  ctnav_result_metrics(res, &m);
  ctnav_result_routing(res, &r);
  std::printf("fusion            %s\n", fusion.c_str());
  std::printf("gp model          %s\n", gp.c_str());
  std::printf("windows           %d (mean %.2f iters, max %d)\n", m.window_count,
              m.mean_iterations, m.max_iterations);
  std::printf("published states  %lld\n", static_cast<long long>(m.published_n));
  std::printf("rmse 2d           %.4f m\n", m.rmse_2d_m);
  std::printf("rmse 3d           %.4f m\n", m.rmse_3d_m);
  std::printf("max 2d error      %.4f m\n", m.max_2d_err_m);
  std::printf("rmse velocity     %.4f m/s\n", m.rmse_vel_mps);
  std::printf("mean |yaw error|  %.4f deg\n", m.mean_yaw_err_deg);
  std::printf("smoothness        %.6g\n", m.smoothness_s);
  std::printf("routing           sync %lld  interp %lld  cached %lld  dropped %lld  evicted %lld\n",
              static_cast<long long>(r.synchronized_n), static_cast<long long>(r.interpolated_n),
              static_cast<long long>(r.cached_n), static_cast<long long>(r.dropped_n),
              static_cast<long long>(r.evicted_n));
  std::printf("wall time         %.2f s\n", m.wall_time_s);
  if (opts.out_dir && opts.out_dir[0] != '\0')
    std::printf("artifacts         %s\n", opts.out_dir);
  ctnav_result_free(res);
  return 0;
}

int do_synth(const std::string& scenario, const std::string& out_dir) {
  ctnav_scenario* scn = nullptr;
  int rc = ctnav_scenario_load(scenario.c_str(), &scn);
  if (rc != 0) return fail(rc);
  rc = ctnav_synth(scn, out_dir.c_str());
  ctnav_scenario_free(scn);
  if (rc != 0) return fail(rc);
  std::printf("streams written to %s\n", out_dir.c_str());
  return 0;
}

int do_compare(const std::string& ref, const std::string& cand, double tol) {
  ctnav_compare_report* rep = nullptr;
  int rc = ctnav_compare(ref.c_str(), cand.c_str(), tol, &rep);
  if (rc != 0) return fail(rc);
  std::printf("%s", ctnav_compare_render(rep));
  const bool regressed = ctnav_compare_regressed(rep) != 0;
  ctnav_compare_free(rep);
  if (regressed) {
    std::fprintf(stderr, "error: candidate regressed beyond %.1f%% tolerance\n", tol * 100.0);
    return 4;
  }
  std::printf("no regressions within %.1f%% tolerance\n", tol * 100.0);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-time factor-graph sensor fusion on synthetic scenarios"};
  app.set_version_flag("--version", ctnav_version());
  app.require_subcommand(1);

  std::string scenario, out_dir, fusion = "tight", gp = "wnoj", loss = "cauchy";
  double lag = 3.0, loss_scale = 1.0, tol = 0.05;
  std::uint64_t seed = 0;
  bool no_imu = false, no_odometry = false, no_speed = false;
  std::string ref_path, cand_path;

  CLI::App* run = app.add_subcommand("run", "estimate a scenario and report accuracy metrics");
  run->add_option("--scenario", scenario, "scenario description file")->required();
  run->add_option("--fusion", fusion, "GNSS coupling: loose (position fixes) or tight (raw)")
      ->check(CLI::IsMember({"loose", "tight"}));
  run->add_option("--gp", gp, "motion prior: wnoa (const velocity) or wnoj (const acceleration)")
      ->check(CLI::IsMember({"wnoa", "wnoj"}));
  run->add_option("--loss", loss, "robust loss on GNSS residuals")
      ->check(CLI::IsMember({"none", "cauchy", "huber"}));
  run->add_option("--loss-scale", loss_scale, "robust kernel scale")
      ->check(CLI::PositiveNumber);
  run->add_option("--lag", lag, "smoother window length in seconds")->check(CLI::PositiveNumber);
  CLI::Option* seed_opt = run->add_option("--seed", seed, "override the scenario noise seed");
  run->add_option("--out", out_dir, "directory for trajectory/metrics/routing artifacts");
  run->add_flag("--no-imu", no_imu, "ignore the IMU stream");
  run->add_flag("--no-odometry", no_odometry, "ignore the odometry stream");
  run->add_flag("--no-speed", no_speed, "ignore the speed stream");

  CLI::App* synth = app.add_subcommand("synth", "write the synthesized sensor streams as CSV");
  synth->add_option("--scenario", scenario, "scenario description file")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  CLI::App* cmp = app.add_subcommand("compare", "compare two metrics.json files for regressions");
  cmp->add_option("reference", ref_path, "baseline metrics.json")->required();
  cmp->add_option("candidate", cand_path, "candidate metrics.json")->required();
  cmp->add_option("--tol", tol, "relative tolerance before a higher metric counts as regression");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*run) {
    ctnav_run_options opts;
    ctnav_run_options_init(&opts);
    opts.tight = fusion == "tight" ? 1 : 0;
    opts.gp_model = gp == "wnoj" ? 1 : 0;
    opts.loss = loss == "none" ? 0 : (loss == "cauchy" ? 1 : 2);
    opts.loss_scale = loss_scale;
    opts.lag_s = lag;
    opts.override_seed = seed_opt->count() > 0 ? 1 : 0;
    opts.seed = seed;
    opts.use_imu = no_imu ? 0 : 1;
    opts.use_odometry = no_odometry ? 0 : 1;
    opts.use_speed = no_speed ? 0 : 1;
    opts.out_dir = out_dir.empty() ? nullptr : out_dir.c_str();
    return do_run(scenario, opts, fusion, gp);
  }
  if (*synth) return do_synth(scenario, out_dir);
  return do_compare(ref_path, cand_path, tol);
}
