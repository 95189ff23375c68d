#include "ctnav/scenario.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "ctnav/error.hpp"

namespace ctnav::sim {

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  raise(ErrorCode::kConfig, "scenario: " + where + ": " + what);
}

struct Value {
  enum Kind { kNumber, kBool, kString, kNumArray, kStrArray } kind = kNumber;
  double num = 0.0;
  bool is_uint = false;
  std::uint64_t uint_val = 0;
  bool boolean = false;
  std::string str;
  std::vector<double> nums;
  std::vector<std::string> strs;
  int line = 0;
};

using Table = std::map<std::string, Value>;

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

Value parse_scalar(const std::string& tok, int line_no, const std::string& where) {
  Value v;
  v.line = line_no;
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    v.kind = Value::kString;
    v.str = tok.substr(1, tok.size() - 2);
    return v;
  }
  if (tok == "true" || tok == "false") {
    v.kind = Value::kBool;
    v.boolean = (tok == "true");
    return v;
  }
  char* end = nullptr;
  v.num = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || !std::isfinite(v.num))
    fail(where, "cannot parse value '" + tok + "'");
  if (tok.find_first_not_of("0123456789") == std::string::npos) {
    v.is_uint = true;
    v.uint_val = std::strtoull(tok.c_str(), nullptr, 10);
  }
  return v;
}

Value parse_value(const std::string& raw, int line_no, const std::string& where) {
  const std::string tok = trim(raw);
  if (tok.empty()) fail(where, "empty value");
  if (tok.front() == '[') {
    if (tok.back() != ']') fail(where, "arrays must be closed on one line");
    Value v;
    v.line = line_no;
    std::string body = tok.substr(1, tok.size() - 2);
    std::vector<std::string> items;
    std::string cur;
    bool in_str = false;
    for (char c : body) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        items.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) items.push_back(trim(cur));
    bool strings = !items.empty() && items.front().size() && items.front().front() == '"';
    v.kind = strings ? Value::kStrArray : Value::kNumArray;
    for (const auto& it : items) {
      Value s = parse_scalar(it, line_no, where);
      if (strings) {
        if (s.kind != Value::kString) fail(where, "mixed array types");
        v.strs.push_back(s.str);
      } else {
        if (s.kind != Value::kNumber) fail(where, "mixed array types");
        v.nums.push_back(s.num);
      }
    }
    return v;
  }
  return parse_scalar(tok, line_no, where);
}

struct Document {
  // section name -> instances (singular tables have exactly one)
  std::map<std::string, std::vector<Table>> sections;
};

Document parse_document(const std::string& text) {
  Document doc;
  std::istringstream in(text);
  std::string line;
  std::string current = "scenario";
  doc.sections["scenario"].emplace_back();
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = "line " + std::to_string(line_no);
    std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      bool array = s.size() > 1 && s[1] == '[';
      const std::string close = array ? "]]" : "]";
      if (s.substr(s.size() - close.size()) != close) fail(where, "unterminated table header");
      std::string name = trim(s.substr(array ? 2 : 1, s.size() - 2 * (array ? 2 : 1)));
      if (name.empty()) fail(where, "empty table name");
      for (char c : name)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.')
          fail(where, "bad table name '" + name + "'");
      auto& list = doc.sections[name];
      if (array || list.empty()) list.emplace_back();
      if (!array && list.size() > 1) fail(where, "table '" + name + "' redefined");
      current = name;
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos) fail(where, "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) fail(where, "empty key");
    Table& tbl = doc.sections[current].back();
    if (tbl.count(key)) fail(where, "duplicate key '" + key + "'");
    tbl[key] = parse_value(s.substr(eq + 1), line_no, where + " (" + current + "." + key + ")");
  }
  return doc;
}

// Typed accessors that track key consumption so unknown keys are reported.
class Fields {
 public:
  Fields(const std::string& section, Table& tbl) : section_(section), tbl_(tbl) {}

  double num(const std::string& key, double fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    if (v->kind != Value::kNumber) fail(path(key), "expected a number");
    return v->num;
  }
  double required_num(const std::string& key) {
    const Value* v = take(key);
    if (!v) fail(path(key), "missing required key");
    if (v->kind != Value::kNumber) fail(path(key), "expected a number");
    return v->num;
  }
  std::uint64_t uint(const std::string& key, std::uint64_t fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    if (v->kind != Value::kNumber || !v->is_uint)
      fail(path(key), "expected a non-negative integer");
    return v->uint_val;
  }
  std::string str(const std::string& key, const std::string& fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    if (v->kind != Value::kString) fail(path(key), "expected a string");
    return v->str;
  }
  bool vec3(const std::string& key, lie::Vec3* out) {
    const Value* v = take(key);
    if (!v) return false;
    if (v->kind != Value::kNumArray || v->nums.size() != 3)
      fail(path(key), "expected an array of 3 numbers");
    *out = lie::Vec3(v->nums[0], v->nums[1], v->nums[2]);
    return true;
  }
  void finish() {
    for (const auto& [key, value] : tbl_)
      if (!used_.count(key)) fail(path(key), "unknown key");
  }

 private:
  const Value* take(const std::string& key) {
    auto it = tbl_.find(key);
    if (it == tbl_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }
  std::string path(const std::string& key) const { return section_ + "." + key; }
  std::string section_;
  Table& tbl_;
  std::set<std::string> used_;
};

void check_rate(const std::string& section, double rate, double delay, double phase) {
  if (rate < 0.0 || !std::isfinite(rate)) fail(section + ".rate_hz", "must be >= 0");
  if (delay < 0.0) fail(section + ".delay_s", "must be >= 0");
  if (phase < 0.0) fail(section + ".phase_s", "must be >= 0");
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
  Document doc = parse_document(text);
  Scenario out;

  static const std::set<std::string> known = {
      "scenario", "trajectory",  "trajectory.segment", "trajectory.waypoint",
      "trajectory.gp", "clock",  "imu",  "gnss", "pvt", "odometry", "speed", "degradation"};
  for (const auto& [name, tables] : doc.sections)
    if (!known.count(name)) fail(name, "unknown table");

  {
    Fields f("scenario", doc.sections["scenario"].front());
    out.duration_s = f.required_num("duration_s");
    if (out.duration_s <= 0.0) fail("scenario.duration_s", "must be > 0");
    out.seed = f.uint("seed", 0);
    lie::Vec3 llh(0, 0, 0);
    if (f.vec3("origin_llh_deg", &llh)) {
      out.origin = geodesy::GeodeticCoord{llh[0] * M_PI / 180.0, llh[1] * M_PI / 180.0, llh[2]};
      if (std::abs(llh[0]) > 90.0) fail("scenario.origin_llh_deg", "latitude out of range");
    }
    f.finish();
  }

  std::string kind = "twist_segments";
  if (doc.sections.count("trajectory")) {
    Fields f("trajectory", doc.sections["trajectory"].front());
    kind = f.str("kind", kind);
    f.finish();
  }
  if (kind == "twist_segments")
    out.trajectory = TrajectoryKind::kTwistSegments;
  else if (kind == "waypoint_spline")
    out.trajectory = TrajectoryKind::kWaypointSpline;
  else if (kind == "gp_sample")
    out.trajectory = TrajectoryKind::kGpSample;
  else
    fail("trajectory.kind", "expected twist_segments | waypoint_spline | gp_sample");

  if (doc.sections.count("trajectory.segment")) {
    for (auto& tbl : doc.sections["trajectory.segment"]) {
      Fields f("trajectory.segment", tbl);
      TwistSegmentSpec seg;
      seg.duration = f.required_num("duration");
      if (seg.duration <= 0.0) fail("trajectory.segment.duration", "must be > 0");
      seg.has_nu = f.vec3("nu", &seg.nu);
      f.vec3("omega", &seg.omega);
      f.vec3("accel", &seg.accel);
      if (seg.omega.norm() > 0.0 && seg.accel.norm() > 0.0)
        fail("trajectory.segment", "omega and accel cannot both be nonzero");
      f.finish();
      out.segments.push_back(seg);
    }
  }
  if (doc.sections.count("trajectory.waypoint")) {
    for (auto& tbl : doc.sections["trajectory.waypoint"]) {
      Fields f("trajectory.waypoint", tbl);
      WaypointSpec wp;
      wp.t = f.required_num("t");
      if (!f.vec3("pos_enu", &wp.pos_enu)) fail("trajectory.waypoint.pos_enu", "missing");
      f.finish();
      out.waypoints.push_back(wp);
    }
  }
  if (doc.sections.count("trajectory.gp")) {
    Fields f("trajectory.gp", doc.sections["trajectory.gp"].front());
    out.gp.knot_spacing_s = f.num("knot_spacing_s", out.gp.knot_spacing_s);
    out.gp.qc = f.num("qc", out.gp.qc);
    if (out.gp.knot_spacing_s <= 0.0) fail("trajectory.gp.knot_spacing_s", "must be > 0");
    if (out.gp.qc <= 0.0) fail("trajectory.gp.qc", "must be > 0");
    f.finish();
  }

  switch (out.trajectory) {
    case TrajectoryKind::kTwistSegments: {
      if (out.segments.empty()) fail("trajectory.segment", "at least one segment required");
      if (!out.segments.front().has_nu)
        fail("trajectory.segment", "first segment must specify nu");
      double total = 0.0;
      for (const auto& seg : out.segments) total += seg.duration;
      if (total + 1e-9 < out.duration_s)
        fail("trajectory.segment", "segments cover " + std::to_string(total) +
                                       " s but duration_s is " + std::to_string(out.duration_s));
      break;
    }
    case TrajectoryKind::kWaypointSpline: {
      if (out.waypoints.size() < 2) fail("trajectory.waypoint", "need at least 2 waypoints");
      for (size_t i = 1; i < out.waypoints.size(); ++i)
        if (out.waypoints[i].t <= out.waypoints[i - 1].t)
          fail("trajectory.waypoint.t", "times must be strictly increasing");
      if (out.waypoints.front().t != 0.0) fail("trajectory.waypoint.t", "first must be 0");
      if (out.waypoints.back().t + 1e-9 < out.duration_s)
        fail("trajectory.waypoint.t", "last waypoint before duration_s");
      break;
    }
    case TrajectoryKind::kGpSample:
      break;
  }

  if (doc.sections.count("clock")) {
    Fields f("clock", doc.sections["clock"].front());
    out.clock.bias0_m = f.num("bias0_m", 0.0);
    out.clock.drift0_mps = f.num("drift0_mps", 0.0);
    f.finish();
  }

  if (doc.sections.count("imu")) {
    Fields f("imu", doc.sections["imu"].front());
    out.imu.rate_hz = f.num("rate_hz", 0.0);
    out.imu.delay_s = f.num("delay_s", 0.0);
    out.imu.sigma_accel = f.num("sigma_accel", 0.0);
    out.imu.sigma_gyro = f.num("sigma_gyro", 0.0);
    out.imu.sigma_bias_acc_walk = f.num("sigma_bias_acc_walk", 0.0);
    out.imu.sigma_bias_gyro_walk = f.num("sigma_bias_gyro_walk", 0.0);
    f.vec3("bias_acc0", &out.imu.bias_acc0);
    f.vec3("bias_gyro0", &out.imu.bias_gyro0);
    check_rate("imu", out.imu.rate_hz, out.imu.delay_s, 0.0);
    f.finish();
  }

  if (doc.sections.count("gnss")) {
    Fields f("gnss", doc.sections["gnss"].front());
    out.gnss.rate_hz = f.num("rate_hz", 0.0);
    out.gnss.delay_s = f.num("delay_s", 0.0);
    out.gnss.phase_s = f.num("phase_s", 0.0);
    out.gnss.sat_count = static_cast<int>(f.uint("sat_count", 8));
    out.gnss.geometry_seed = f.uint("geometry_seed", 1);
    out.gnss.cn0_zenith_dbhz = f.num("cn0_zenith_dbhz", 45.0);
    out.gnss.cn0_slope_per_deg = f.num("cn0_slope_per_deg", 0.0);
    out.gnss.cn0_jitter_dbhz = f.num("cn0_jitter_dbhz", 0.0);
    out.gnss.lambda_pr = f.num("lambda_pr", 1e4);
    out.gnss.lambda_do = f.num("lambda_do", 100.0);
    out.gnss.mask_deg = f.num("mask_deg", 15.0);
    f.vec3("lever_arm", &out.gnss.lever_arm);
    check_rate("gnss", out.gnss.rate_hz, out.gnss.delay_s, out.gnss.phase_s);
    if (out.gnss.rate_hz > 0.0 && out.gnss.sat_count < 1)
      fail("gnss.sat_count", "must be >= 1 when the stream is enabled");
    if (out.gnss.mask_deg < 0.0 || out.gnss.mask_deg >= 90.0)
      fail("gnss.mask_deg", "must be in [0, 90)");
    if (out.gnss.lambda_pr <= 0.0 || out.gnss.lambda_do <= 0.0)
      fail("gnss.lambda_pr", "variance scales must be > 0");
    f.finish();
  }

  if (doc.sections.count("pvt")) {
    Fields f("pvt", doc.sections["pvt"].front());
    out.pvt.rate_hz = f.num("rate_hz", 0.0);
    out.pvt.delay_s = f.num("delay_s", 0.0);
    out.pvt.phase_s = f.num("phase_s", 0.0);
    out.pvt.sigma_pos_m = f.num("sigma_pos_m", 1.0);
    out.pvt.sigma_vel_mps = f.num("sigma_vel_mps", 0.1);
    out.pvt.lying_factor = f.num("lying_factor", 1.0);
    f.vec3("lever_arm", &out.pvt.lever_arm);
    check_rate("pvt", out.pvt.rate_hz, out.pvt.delay_s, out.pvt.phase_s);
    if (out.pvt.lying_factor <= 0.0) fail("pvt.lying_factor", "must be > 0");
    f.finish();
  }

  if (doc.sections.count("odometry")) {
    Fields f("odometry", doc.sections["odometry"].front());
    out.odometry.rate_hz = f.num("rate_hz", 0.0);
    out.odometry.delay_s = f.num("delay_s", 0.0);
    out.odometry.sigma_pos_m = f.num("sigma_pos_m", 0.02);
    out.odometry.sigma_rot_deg = f.num("sigma_rot_deg", 0.1);
    check_rate("odometry", out.odometry.rate_hz, out.odometry.delay_s, 0.0);
    f.finish();
  }

  if (doc.sections.count("speed")) {
    Fields f("speed", doc.sections["speed"].front());
    out.speed.rate_hz = f.num("rate_hz", 0.0);
    out.speed.delay_s = f.num("delay_s", 0.0);
    out.speed.phase_s = f.num("phase_s", 0.0);
    out.speed.sigma_mps = f.num("sigma_mps", 0.05);
    f.vec3("lever_arm", &out.speed.lever_arm);
    check_rate("speed", out.speed.rate_hz, out.speed.delay_s, out.speed.phase_s);
    f.finish();
  }

  if (doc.sections.count("degradation")) {
    for (auto& tbl : doc.sections["degradation"]) {
      Fields f("degradation", tbl);
      DegradationSpec d;
      const std::string k = f.str("kind", "");
      if (k == "outage")
        d.kind = DegradationKind::kOutage;
      else if (k == "multipath")
        d.kind = DegradationKind::kMultipath;
      else if (k == "reduced_sats")
        d.kind = DegradationKind::kReducedSats;
      else
        fail("degradation.kind", "expected outage | multipath | reduced_sats");
      d.t_start = f.required_num("t_start");
      d.t_end = f.required_num("t_end");
      d.bias_m = f.num("bias_m", d.bias_m);
      d.fraction = f.num("fraction", d.fraction);
      d.keep_n = static_cast<int>(f.uint("keep_n", d.keep_n));
      if (d.t_start < 0.0 || d.t_end > out.duration_s || d.t_start >= d.t_end)
        fail("degradation", "window must satisfy 0 <= t_start < t_end <= duration_s");
      if (d.fraction < 0.0 || d.fraction > 1.0) fail("degradation.fraction", "must be in [0,1]");
      f.finish();
      out.degradations.push_back(d);
    }
  }
  return out;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kIo, "scenario: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

}  // namespace ctnav::sim
