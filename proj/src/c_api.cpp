#include "ctnav/c_api.h"

#include <exception>
#include <string>
#include <utility>
#include <vector>

#include "ctnav/error.hpp"
#include "ctnav/measurements.hpp"
#include "ctnav/runner.hpp"
#include "ctnav/scenario.hpp"

struct ctnav_scenario {
  ctnav::sim::Scenario scn;
};

struct ctnav_result {
  ctnav::runner::RunResult res;
  std::string metrics_json;
  std::string routing_json;
  std::string trajectory_csv;
};

struct ctnav_compare_report {
  std::vector<ctnav::runner::CompareRow> rows;
  std::string rendered;
};

namespace {

using ctnav::Error;
using ctnav::ErrorCode;

thread_local std::string g_last_error;

int category(ErrorCode code) {
  switch (code) {
    case ErrorCode::kOk:
      return 0;
    case ErrorCode::kSolver:
      return 3;
    case ErrorCode::kIo:
      return 4;
    default:
      return 2;  // configuration and input-domain errors
  }
}

template <typename F>
int guarded(F&& fn) {
  try {
    fn();
    return 0;
  } catch (const Error& e) {
    g_last_error = e.what();
    return category(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return 3;
  }
}

int null_arg(const char* what) {
  g_last_error = std::string(what) + " must not be NULL";
  return 2;
}

}  // namespace

extern "C" {

const char* ctnav_version(void) { return "0.1.0"; }

const char* ctnav_last_error(void) { return g_last_error.c_str(); }

int ctnav_scenario_load(const char* path, ctnav_scenario** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new ctnav_scenario{ctnav::sim::load_scenario(path)}; });
}

int ctnav_scenario_parse(const char* text, ctnav_scenario** out) {
  if (!text) return null_arg("text");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new ctnav_scenario{ctnav::sim::parse_scenario(text)}; });
}

void ctnav_scenario_free(ctnav_scenario* scn) { delete scn; }

int ctnav_synth(const ctnav_scenario* scn, const char* out_dir) {
  if (!scn) return null_arg("scn");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] { ctnav::runner::write_streams(scn->scn, out_dir); });
}

void ctnav_run_options_init(ctnav_run_options* opts) {
  if (!opts) return;
  opts->tight = 1;
  opts->gp_model = 1;
  opts->loss = 1;
  opts->loss_scale = 1.0;
  opts->lag_s = 3.0;
  opts->override_seed = 0;
  opts->seed = 0;
  opts->use_imu = 1;
  opts->use_odometry = 1;
  opts->use_speed = 1;
  opts->out_dir = nullptr;
}

int ctnav_run(const ctnav_scenario* scn, const ctnav_run_options* opts, ctnav_result** out) {
  if (!scn) return null_arg("scn");
  if (!opts) return null_arg("opts");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    ctnav::runner::RunConfig cfg;
    cfg.tight = opts->tight != 0;
    switch (opts->gp_model) {
      case 0:
        cfg.gp_model = ctnav::gp::GpModel::kWnoa;
        break;
      case 1:
        cfg.gp_model = ctnav::gp::GpModel::kWnoj;
        break;
      default:
        ctnav::raise(ErrorCode::kConfig, "options.gp_model: expected 0 or 1");
    }
    switch (opts->loss) {
      case 0:
        cfg.loss.kind = ctnav::LossKind::kNone;
        break;
      case 1:
        cfg.loss.kind = ctnav::LossKind::kCauchy;
        break;
      case 2:
        cfg.loss.kind = ctnav::LossKind::kHuber;
        break;
      default:
        ctnav::raise(ErrorCode::kConfig, "options.loss: expected 0, 1 or 2");
    }
    if (!(opts->loss_scale > 0.0))
      ctnav::raise(ErrorCode::kConfig, "options.loss_scale: must be > 0");
    cfg.loss.scale = opts->loss_scale;
    cfg.lag_s = opts->lag_s;
    cfg.override_seed = opts->override_seed != 0;
    cfg.seed = opts->seed;
    cfg.sensors.imu = opts->use_imu != 0;
    cfg.sensors.odometry = opts->use_odometry != 0;
    cfg.sensors.speed = opts->use_speed != 0;
    if (opts->out_dir && opts->out_dir[0] != '\0') cfg.out_dir = opts->out_dir;
    auto res = new ctnav_result{};
    try {
      res->res = ctnav::runner::run(scn->scn, cfg);
    } catch (...) {
      delete res;
      throw;
    }
    *out = res;
  });
}

int ctnav_result_metrics(const ctnav_result* res, ctnav_metrics* out) {
  if (!res) return null_arg("res");
  if (!out) return null_arg("out");
  const auto& m = res->res.metrics;
  out->rmse_2d_m = m.rmse_2d_m;
  out->rmse_3d_m = m.rmse_3d_m;
  out->max_2d_err_m = m.max_2d_err_m;
  out->rmse_vel_mps = m.rmse_vel_mps;
  out->mean_yaw_err_deg = m.mean_yaw_err_deg;
  out->smoothness_s = m.smoothness_s;
  out->mean_iterations = m.mean_iterations;
  out->wall_time_s = m.wall_time_s;
  out->published_n = m.published_n;
  out->window_count = m.window_count;
  out->max_iterations = m.max_iterations;
  return 0;
}

int ctnav_result_routing(const ctnav_result* res, ctnav_routing* out) {
  if (!res) return null_arg("res");
  if (!out) return null_arg("out");
  const auto& r = res->res.routing;
  out->synchronized_n = r.synchronized_n;
  out->interpolated_n = r.interpolated_n;
  out->dropped_n = r.dropped_n;
  out->cached_n = r.cached_n;
  out->evicted_n = r.evicted_n;
  return 0;
}

const char* ctnav_result_metrics_json(ctnav_result* res) {
  if (!res) return nullptr;
  if (res->metrics_json.empty())
    res->metrics_json = ctnav::runner::metrics_json(res->res.metrics);
  return res->metrics_json.c_str();
}

const char* ctnav_result_routing_json(ctnav_result* res) {
  if (!res) return nullptr;
  if (res->routing_json.empty())
    res->routing_json = ctnav::runner::routing_json(res->res.routing);
  return res->routing_json.c_str();
}

const char* ctnav_result_trajectory_csv(ctnav_result* res) {
  if (!res) return nullptr;
  if (res->trajectory_csv.empty())
    res->trajectory_csv = ctnav::runner::trajectory_csv(res->res.published);
  return res->trajectory_csv.c_str();
}

void ctnav_result_free(ctnav_result* res) { delete res; }

int ctnav_compare(const char* metrics_a, const char* metrics_b, double rel_tol,
                  ctnav_compare_report** out) {
  if (!metrics_a) return null_arg("metrics_a");
  if (!metrics_b) return null_arg("metrics_b");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    auto rep = new ctnav_compare_report{};
    try {
      rep->rows = ctnav::runner::compare_files(metrics_a, metrics_b, rel_tol);
    } catch (...) {
      delete rep;
      throw;
    }
    *out = rep;
  });
}

int ctnav_compare_regressed(const ctnav_compare_report* rep) {
  if (!rep) return 0;
  for (const auto& row : rep->rows)
    if (row.regressed) return 1;
  return 0;
}

const char* ctnav_compare_render(ctnav_compare_report* rep) {
  if (!rep) return nullptr;
  if (rep->rendered.empty()) rep->rendered = ctnav::runner::render_compare(rep->rows);
  return rep->rendered.c_str();
}

void ctnav_compare_free(ctnav_compare_report* rep) { delete rep; }

}  // extern "C"
