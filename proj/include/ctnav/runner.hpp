#pragma once

// Experiment orchestration: synthesizes a scenario's measurement streams,
// replays them against the estimator's 10 Hz worker loop in arrival order,
// publishes a 200 Hz trajectory, evaluates it against ground truth, and
// writes plot-ready artifacts.
//
// Fusion mode selects the GNSS channel: tight consumes raw pseudorange /
// Doppler epochs and ignores the PVT stream; loose consumes PVT fixes and
// ignores raw epochs. IMU, odometry, and 2-D speed are orthogonal to the
// mode and follow the sensor set.

#include <cstdint>
#include <string>
#include <vector>

#include "ctnav/graph.hpp"
#include "ctnav/measurements.hpp"
#include "ctnav/metrics.hpp"
#include "ctnav/scenario.hpp"
#include "ctnav/sim.hpp"

namespace ctnav::runner {

struct SensorSet {
  bool imu = true;
  bool gnss = true;
  bool pvt = true;
  bool odometry = true;
  bool speed = true;
};

struct RunConfig {
  bool tight = true;
  gp::GpModel gp_model = gp::GpModel::kWnoj;
  RobustLoss loss;  // applied to pseudorange/Doppler and PVT factors
  double lag_s = 3.0;
  bool override_seed = false;
  std::uint64_t seed = 0;
  SensorSet sensors;
  std::string out_dir;  // empty: compute only, write nothing
};

struct RunResult {
  metrics::MetricsReport metrics;
  graph::RoutingCounts routing;
  std::vector<NavState> published;  // 200 Hz rows; t is the publish time
  std::vector<NavState> truth;      // ground truth at the same times
};

// Deterministic given scenario + config: identical metrics/routing artifacts
// byte for byte across reruns (wall time goes to timing.json only).
// Config violations (tight without a raw GNSS stream, loose without PVT)
// raise Config naming the offending field.
RunResult run(const sim::Scenario& scn, const RunConfig& cfg);
RunResult run_file(const std::string& scenario_path, const RunConfig& cfg);

// `synth` verb: dump the scenario's streams, one CSV per sensor plus the
// ground truth sampled at 100 Hz. Header row; timestamps in seconds.
void write_streams(const sim::Scenario& scn, const std::string& out_dir);

// Deterministic serializations (what run() writes when out_dir is set).
std::string metrics_json(const metrics::MetricsReport& rep);
std::string routing_json(const graph::RoutingCounts& counts);
std::string trajectory_csv(const std::vector<NavState>& published);

struct CompareRow {
  std::string name;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  // b - a
  bool regressed = false;
};

// Side-by-side deltas of the headline metrics from two metrics.json files.
// A row regresses when b > a * (1 + rel_tol) + 1e-9 (lower is better for
// every compared metric). Missing keys or malformed JSON raise Config.
std::vector<CompareRow> compare_files(const std::string& path_a, const std::string& path_b,
                                      double rel_tol);
std::string render_compare(const std::vector<CompareRow>& rows);

}  // namespace ctnav::runner
