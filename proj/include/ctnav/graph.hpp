#pragma once

// Time-centric factor graph: a state timeline at fixed spacing that is
// extended independently of measurement arrival, measurement routing
// (synchronized / interpolated / dropped / cached), a fixed-lag sliding
// window Levenberg-Marquardt smoother with a Schur-complement boundary
// prior, a near-zero-velocity gate, and a high-rate propagated publisher.
//
// Threading contract: any number of producers may call submit()/submit_imu();
// exactly one worker drives advance_to() (or the finer-grained extend /
// optimize / marginalize calls); publish_propagated() may run concurrently
// with the worker and sees a read-copy snapshot of the newest state.

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include "ctnav/error.hpp"
#include "ctnav/factors.hpp"
#include "ctnav/gp_motion.hpp"
#include "ctnav/lie.hpp"
#include "ctnav/measurements.hpp"
#include "ctnav/nav_state.hpp"

namespace ctnav::graph {

struct TimelineEntry {
  int id = 0;
  double t = 0.0;
};

struct RoutingDecision {
  enum class Kind { kSynchronized, kInterpolated, kDropped, kCached };
  Kind kind = Kind::kDropped;
  int anchor_i = -1;  // synchronized: the matched state; interpolated: earlier anchor
  int anchor_j = -1;  // interpolated only
  double tau = 0.0;   // offset from anchor_i; signed and |tau| <= t_sync when
                      // synchronized, 0 < tau < spacing when interpolated
};

// Pure routing rule on a snapshot of the retained timeline. Corrected time
// t = t_meas_raw - t_d; DROPPED when t precedes the oldest retained state,
// CACHED when it lies beyond the newest, SYNCHRONIZED when the nearest state
// is within t_sync, INTERPOLATED with the bracketing pair otherwise.
RoutingDecision route_measurement(double t_meas_raw, double t_d,
                                  const std::vector<TimelineEntry>& timeline, double t_sync);

struct Measurement {
  std::variant<GnssEpoch, PvtSolution, OdometryIncrement, SpeedSample> value;

  double stamp() const;  // raw timestamp before delay correction (odometry: t_j)
};

struct SensorDelays {
  double imu = 0.0;
  double gnss = 0.0;
  double pvt = 0.0;
  double odometry = 0.0;
  double speed = 0.0;
};

struct PriorSigmas {
  double pos_m = 1.0;
  double rot_rad = 0.05;
  double vel_mps = 0.5;
  double rate_rps = 0.05;
  double bias_acc = 0.1;
  double bias_gyro = 0.01;
  double clock_m = 100.0;
  double clock_mps = 10.0;
};

struct SolverConfig {
  int max_iterations = 30;
  // Stop once the accepted step improves the cost by less than this
  // fraction (plus a small absolute slack for consistent problems whose
  // optimum sits at the round-off floor). Noisy windows have costs in the
  // hundreds, where sub-1e-6 relative gains move the states by micrometers.
  double convergence_tol = 1e-6;
  double damping_init = 1e-8;
  double lag_seconds = 3.0;
  double opt_frequency_hz = 10.0;
  double spacing = 0.1;  // state timeline pitch
  double t_sync = 0.01;
  SensorDelays t_d;

  bool tight = true;  // clock states + raw pseudorange/Doppler factors
  gp::GpHyperparams gp;
  lie::JacobianMode mode = lie::JacobianMode::kExact;
  RobustLoss gnss_loss;  // applied to pseudorange/Doppler and PVT factors

  factors::ImuNoise imu_noise;
  double sigma_bias_acc_walk = 1e-3;   // m/s^2 per sqrt(s)
  double sigma_bias_gyro_walk = 1e-5;  // rad/s per sqrt(s)
  double sigma_clock_bias_walk = 1.0;  // m per sqrt(s)
  double sigma_clock_drift_walk = 0.1;
  double lambda_pr = 1e4;  // C/N0 -> variance map, must mirror the front end
  double lambda_do = 100.0;
  lie::Vec3 lever_gnss = lie::Vec3::Zero();
  lie::Vec3 lever_pvt = lie::Vec3::Zero();

  double cache_horizon_s = 10.0;  // bounded future buffer, oldest evicted
  bool zv_gate_enabled = true;
  double zv_speed_threshold = 0.05;  // m/s
  double zv_horizon_s = 0.5;
  PriorSigmas prior;
};

struct RoutingCounts {
  std::int64_t synchronized_n = 0;
  std::int64_t interpolated_n = 0;
  std::int64_t dropped_n = 0;
  std::int64_t cached_n = 0;   // cache insertions (transient state)
  std::int64_t evicted_n = 0;  // cache overflow warnings
};

struct OptimizeReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  int damping_retries = 0;
  int ill_conditioned_events = 0;
};

// Gaussian prior over one or more retained states, produced at initialization
// and by marginalization: cost(x) = 1/2 d'Hd + g'd with d the stacked local
// coordinates of x around the stored linearization points.
struct BoundaryPrior {
  std::vector<int> ids;
  std::vector<NavState> lin;
  Eigen::MatrixXd info;  // PSD
  Eigen::VectorXd grad;
};

namespace detail {

// Attachment of one measurement time to the timeline; j >= 0 marks an
// interpolated anchor pair with offset tau from state i.
struct Anchor {
  int i = -1;
  int j = -1;
  double tau = 0.0;
  bool interpolated() const { return j >= 0; }
};

struct GpRec {
  int i = 0, j = 0;
};
struct ImuRec {
  int i = 0, j = 0;
  factors::Preintegrated pre;
  std::vector<ImuSample> samples;  // resampled window, kept for refresh
};
struct BiasRec {
  int i = 0, j = 0;
};
struct ClockRec {
  int i = 0, j = 0;
};
struct GnssRec {
  Anchor at;
  double t = 0.0;
  SatObs obs;
  double wavelength = 0.19;
};
struct PvtRec {
  Anchor at;
  double t = 0.0;
  PvtSolution z;
};
struct SpeedRec {
  Anchor at;
  double t = 0.0;
  SpeedSample z;
};
struct OdomRec {
  Anchor at_i, at_j;
  double t_i = 0.0, t_j = 0.0;
  OdometryIncrement z;
};

struct Factor {
  double key_t = 0.0;  // canonical order: (key_t, rank, sub)
  int rank = 0;
  int sub = 0;
  std::variant<GpRec, ImuRec, BiasRec, ClockRec, GnssRec, PvtRec, SpeedRec, OdomRec> rec;
};

}  // namespace detail

class Estimator {
 public:
  explicit Estimator(SolverConfig cfg = {});

  // Seeds state 0 at x0.t with the configured prior. Must precede extension.
  void initialize(const NavState& x0);
  bool initialized() const { return !states_.empty(); }

  // Producer side (thread-safe). Raw stamps; per-sensor delay applied here.
  void submit_imu(const ImuSample& raw);
  void submit(const Measurement& m);

  // Worker side: drain the queue, extend the timeline up to t_now, re-route
  // cached measurements, and (gate permitting) optimize and marginalize.
  void advance_to(double t_now);

  // Finer-grained worker operations, exposed for tests and custom drivers.
  int extend_timeline(int n);  // returns the first new id; NotInitialized
  OptimizeReport optimize();   // EmptyWindow without a factor beyond priors
  void marginalize(double keep_from_t);

  RoutingDecision route(double t_meas_raw, double t_d) const;
  std::vector<TimelineEntry> timeline() const;
  const NavState& state(int id) const;
  const NavState& newest() const;
  int newest_id() const;
  std::vector<NavState> solution() const;  // finalized states + current window
  // Marginal covariance block of one retained state from a fresh linearization
  // of the current window (worker thread only).
  Eigen::MatrixXd marginal_covariance(int id) const;
  const BoundaryPrior& boundary_prior() const { return prior_; }
  RoutingCounts routing_counts() const;
  const std::vector<OptimizeReport>& reports() const { return reports_; }
  double last_cost() const { return last_cost_; }
  std::size_t cache_size() const;
  std::size_t factor_count() const { return factors_.size(); }
  bool stationary() const;
  int block_dim() const { return dim_; }

  // Structural audit: every factor anchors retained states and every adjacent
  // state pair carries exactly one GP prior (and one IMU factor when
  // expect_imu). Returns false with a reason instead of raising.
  bool audit(bool expect_imu, std::string* why = nullptr) const;

  // Latest optimized state mechanized to t_now with current bias estimates
  // (IMU when available, GP mean otherwise). Any thread. While the gate
  // reports stationary the last state is held unchanged.
  NavState publish_propagated(double t_now) const;

 private:
  using Anchor = detail::Anchor;
  using GpRec = detail::GpRec;
  using ImuRec = detail::ImuRec;
  using BiasRec = detail::BiasRec;
  using ClockRec = detail::ClockRec;
  using GnssRec = detail::GnssRec;
  using PvtRec = detail::PvtRec;
  using SpeedRec = detail::SpeedRec;
  using OdomRec = detail::OdomRec;
  using Factor = detail::Factor;

  struct StateNode {
    int id = 0;
    NavState x;
  };

  // One evaluated factor: robust-whitened residual, merged Jacobian blocks
  // keyed by global column offset, and the robust cost contribution.
  struct Blocks {
    Eigen::VectorXd r;
    std::map<int, Eigen::MatrixXd> jac;
    double cost = 0.0;
  };

  struct EvalChain {
    NavState x;  // state at the measurement time
    bool interp = false;
    gp::InterpolatedState q;
    Eigen::Matrix2d clock_prop = Eigen::Matrix2d::Identity();
  };

  // Whitening of one residual: robust cost, whitened residual, and the
  // matrix sqrt(weight) * L^-1 that whitens Jacobian blocks.
  struct Whitened {
    Eigen::VectorXd r;
    Eigen::MatrixXd wl;
    double cost = 0.0;
  };

  int pos_of(int id) const;
  int col_of(int id, int block) const { return pos_of(id) * dim_ + block; }
  double time_of_id(int id) const { return t0_ + id * cfg_.spacing; }

  void route_now(const Measurement& m);  // route or cache one drained item
  double delay_of(const Measurement& m) const;
  void attach(const Measurement& m, double t_corr);
  Anchor to_anchor(const RoutingDecision& d) const;
  void reroute_cache();
  void evict_cache();
  void note_speed_evidence(const Measurement& m);
  bool evaluate_gate(double t_now) const;

  std::vector<ImuSample> resample_imu(double t_a, double t_b) const;
  lie::Vec3 gyro_near(double t, const lie::Vec3& fallback) const;
  void refresh_inputs();

  EvalChain eval_at(const Anchor& a, const std::vector<NavState>& xs) const;
  Blocks eval_factor(Factor& f, const std::vector<NavState>& xs, bool commit) const;
  Blocks eval_gp(const GpRec& f, const std::vector<NavState>& xs) const;
  Blocks eval_imu(ImuRec& f, const std::vector<NavState>& xs, bool commit) const;
  Blocks eval_bias(const BiasRec& f, const std::vector<NavState>& xs) const;
  Blocks eval_clock(const ClockRec& f, const std::vector<NavState>& xs) const;
  Blocks eval_gnss(const GnssRec& f, const std::vector<NavState>& xs) const;
  Blocks eval_pvt(const PvtRec& f, const std::vector<NavState>& xs) const;
  Blocks eval_speed(const SpeedRec& f, const std::vector<NavState>& xs) const;
  Blocks eval_odom(const OdomRec& f, const std::vector<NavState>& xs) const;
  Whitened whiten(const Eigen::VectorXd& residual, const Eigen::MatrixXd& covariance,
                  const RobustLoss& loss) const;

  Eigen::VectorXd prior_delta(const BoundaryPrior& pr, const std::vector<NavState>& xs) const;
  double total_cost(const std::vector<NavState>& xs);
  double assemble(const std::vector<NavState>& xs, Eigen::SparseMatrix<double>* h,
                  Eigen::VectorXd* b);
  std::vector<NavState> window_states() const;
  void store_states(const std::vector<NavState>& xs);
  static std::vector<NavState> retracted(const std::vector<NavState>& xs,
                                         const Eigen::VectorXd& delta, int dim, bool tight);
  void sort_factors();
  void update_snapshot();

  SolverConfig cfg_;
  int dim_ = 20;
  double t0_ = 0.0;
  gp::GpSegment seg_unit_;  // one pitch; shared by every adjacent pair

  std::deque<StateNode> states_;
  std::vector<Factor> factors_;
  BoundaryPrior prior_;
  std::vector<NavState> finalized_;

  std::deque<Measurement> cache_;  // future measurements, stamp-ordered
  RoutingCounts counts_;
  std::vector<OptimizeReport> reports_;
  double last_cost_ = 0.0;
  bool stationary_ = false;

  struct SpeedEvidence {
    double t = 0.0;
    double speed = 0.0;
  };
  std::array<std::deque<SpeedEvidence>, 3> zv_;  // speed / pvt / odometry

  mutable std::mutex queue_mu_;
  std::deque<Measurement> pending_;
  mutable std::mutex imu_mu_;
  std::deque<ImuSample> imu_;
  std::vector<ImuSample> imu_local_;  // worker copy for the current window

  mutable std::mutex snap_mu_;
  NavState snapshot_;
  bool snapshot_stationary_ = false;
};

}  // namespace ctnav::graph
