#include "v2p/scenario.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <thread>

#include "v2p/error.hpp"

namespace v2p::scenario {

using channel::SimTime;

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Crossing: return "crossing";
    case ScenarioKind::RightTurn: return "right-turn";
    case ScenarioKind::LeftTurn: return "left-turn";
    case ScenarioKind::AlongRoad: return "along-road";
    case ScenarioKind::Congestion: return "congestion";
    case ScenarioKind::Custom: return "custom";
  }
  return "?";
}

ScenarioKind parse_kind(const std::string& s) {
  for (auto k : {ScenarioKind::Crossing, ScenarioKind::RightTurn, ScenarioKind::LeftTurn, ScenarioKind::AlongRoad,
                 ScenarioKind::Congestion, ScenarioKind::Custom}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown scenario kind '" + s + "'");
}

const char* to_string(ActorKind k) { return k == ActorKind::Vehicle ? "vehicle" : "vru"; }

constexpr double kMaxSceneRadiusM = 50000.0;

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  auto finite = [](double v) { return std::isfinite(v); };
  if (!(duration_s > 0.0) || !finite(duration_s)) fail("duration_s must be positive");
  if (std::fabs(app_tick_s - 0.1) > 1e-12) fail("app_tick_s must be 0.1");
  if (bsm_on_air_bytes == 0 || psm_on_air_bytes == 0) fail("on-air sizes must be positive");
  if (vehicle_tx_rate_hz != 1 && vehicle_tx_rate_hz != 2 && vehicle_tx_rate_hz != 5 && vehicle_tx_rate_hz != 10) {
    fail("vehicle_tx_rate_hz must be one of 1, 2, 5, 10");
  }
  if (!(per_bin_width_m >= 10.0) || std::fmod(per_bin_width_m, 10.0) != 0.0) {
    fail("per_bin_width_m must be a positive multiple of 10");
  }
  if (!(propagation.exponent > 0.0) || !(propagation.min_distance_m > 0.0) ||
      !(propagation.ref_distance_m > 0.0) || !(propagation.shadowing_sigma_db >= 0.0)) {
    fail("propagation parameters invalid");
  }
  if (!(power_draws.gps_mw >= 0.0 && power_draws.rx_mw >= 0.0 && power_draws.tx_mw >= 0.0 &&
        power_draws.full_fix_rate_hz > 0.0)) {
    fail("power draws must be nonnegative");
  }
  if (!(map.expiry_s > 0.0) || map.history_capacity == 0 || !(map.prediction_step_s > 0.0) ||
      !(map.prediction_horizon_s >= 0.0)) {
    fail("map parameters invalid");
  }
  if (road.lanes < 1 || !(road.lane_width_m > 0.0) || !(road.length_m >= 0.0)) fail("road geometry invalid");

  try {
    geo::validate(origin);
    geo::validate(road.start);
    safety.validate();
    vehicle_radio.validate();
    phone_radio.validate();
    policy.validate();
    if (conflict_point) geo::validate(*conflict_point);
  } catch (const InvalidInput& e) {
    fail(e.what());
  }

  // The scene is simulated in a flat local frame around the origin.
  const geo::LocalTangentFrame frame(origin);
  auto near_origin = [&](const geo::GeodeticPosition& g) {
    const auto e = frame.to_enu(g);
    return std::hypot(e.east_m, e.north_m) <= kMaxSceneRadiusM;
  };
  if (road.length_m > 0.0 && !near_origin(road.start)) fail("road.start lies more than 50 km from the origin");

  int vehicles = 0;
  std::vector<TempId> ids;
  for (const auto& a : actors) {
    const std::string who = "actor " + std::to_string(a.id) + ": ";
    if (a.kind == ActorKind::Vehicle) ++vehicles;
    ids.push_back(a.id);
    try {
      geo::validate(a.position);
      if (a.corridor) {
        geo::validate(a.corridor->a);
        geo::validate(a.corridor->b);
      }
    } catch (const InvalidInput& e) {
      fail(who + e.what());
    }
    if (!near_origin(a.position) || (a.corridor && (!near_origin(a.corridor->a) || !near_origin(a.corridor->b)))) {
      fail(who + "position lies more than 50 km from the origin");
    }
    if (!(a.speed_mps >= 0.0) || !(a.max_speed_mps > 0.0) || a.speed_mps > a.max_speed_mps) {
      fail(who + "speed must lie in [0, max_speed_mps]");
    }
    if (!finite(a.heading_deg)) fail(who + "heading must be finite");
    if (!(a.position_noise_m >= 0.0)) fail(who + "position_noise_m must be nonnegative");
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& p : a.phases) {
      if (!finite(p.start_s) || !finite(p.accel_mps2) || !finite(p.yaw_rate_rps)) fail(who + "phase not finite");
      if (p.start_s < prev) fail(who + "phases must be ordered by start_s");
      prev = p.start_s;
    }
  }
  if (vehicles < 1) fail("a scenario needs at least one vehicle");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) fail("actor ids must be unique");
}

namespace {

constexpr double kKmh = 1.0 / 3.6;
constexpr TempId kFirstVehicleId = 1;
constexpr TempId kFirstVruId = 1001;
constexpr double kCrosswalkOffsetM = 6.0;  // crosswalk distance past the end of a turn

double ceil_to_tick(double t, double tick) { return std::ceil(t / tick - 1e-9) * tick; }

ActorConfig make_vehicle(TempId id, const geo::GeodeticPosition& pos, double heading, double speed) {
  ActorConfig a;
  a.id = id;
  a.kind = ActorKind::Vehicle;
  a.user_type = messages::UserType::Unavailable;
  a.position = pos;
  a.heading_deg = heading;
  a.speed_mps = speed;
  return a;
}

ActorConfig make_pedestrian(TempId id, const geo::GeodeticPosition& pos, double heading, double speed) {
  ActorConfig a;
  a.id = id;
  a.kind = ActorKind::Vru;
  a.user_type = messages::UserType::Pedestrian;
  a.position = pos;
  a.heading_deg = heading;
  a.speed_mps = speed;
  a.max_speed_mps = std::max(speed, 3.0);
  return a;
}

void check_positive(const std::optional<double>& v, const char* name) {
  if (v && !(*v > 0.0 && std::isfinite(*v))) throw ConfigError(std::string(name) + " must be positive");
}

}  // namespace

ScenarioConfig build_scenario(ScenarioKind kind, const ScenarioOverrides& o) {
  check_positive(o.speed_kmh, "speed_kmh");
  check_positive(o.start_distance_m, "start_distance_m");
  check_positive(o.duration_s, "duration_s");
  check_positive(o.ped_speed_mps, "ped_speed_mps");
  check_positive(o.turn_radius_m, "turn_radius_m");
  if (o.ped_lane_offset_m && !std::isfinite(*o.ped_lane_offset_m)) throw ConfigError("ped_lane_offset_m must be finite");
  if (o.pedestrians && *o.pedestrians < 0) throw ConfigError("pedestrians must be nonnegative");
  if (o.vehicles && *o.vehicles < 1) throw ConfigError("vehicles must be at least 1");

  ScenarioConfig c;
  c.kind = kind;
  c.seed = o.seed.value_or(1);
  const geo::LocalTangentFrame frame(c.origin);
  auto at = [&](double east, double north) { return frame.to_geodetic({east, north, 0.0}); };
  const double lw = c.safety.lane_width;
  const double vp = o.ped_speed_mps.value_or(1.4);
  const double tick = c.app_tick_s;
  c.road.lane_width_m = lw;

  auto crash_vehicle_only = [&](const char* what) {
    if (o.pedestrians && *o.pedestrians != 1) throw ConfigError(std::string(what) + " has exactly one pedestrian");
    if (o.vehicles && *o.vehicles != 1) throw ConfigError(std::string(what) + " has exactly one vehicle");
  };

  switch (kind) {
    case ScenarioKind::Crossing: {
      crash_vehicle_only("crossing");
      const double v = o.speed_kmh.value_or(70.0) * kKmh;
      const double d = o.start_distance_m.value_or(300.0);
      const double tc = d / v;
      // Northbound in the right lane; the pedestrian crosses from the left.
      c.road.start = at(-lw / 2.0, 0.0);
      c.road.length_m = d + 100.0;
      c.actors.push_back(make_vehicle(kFirstVehicleId, at(0.0, 0.0), 0.0, v));
      c.actors.push_back(make_pedestrian(kFirstVruId, at(-vp * tc, d), 90.0, vp));
      c.conflict_point = at(0.0, d);
      c.conflict_time_s = tc;
      c.duration_s = o.duration_s.value_or(ceil_to_tick(tc + 5.0, tick));
      break;
    }
    case ScenarioKind::RightTurn:
    case ScenarioKind::LeftTurn: {
      const bool right = kind == ScenarioKind::RightTurn;
      crash_vehicle_only(right ? "right-turn" : "left-turn");
      const double v = o.speed_kmh.value_or(20.0) * kKmh;
      const double r = o.turn_radius_m.value_or(right ? 12.0 : 18.0);
      const double arc = geo::kPi / 2.0 * r;
      const double total = o.start_distance_m.value_or(60.0 + arc + kCrosswalkOffsetM);
      const double approach = total - arc - kCrosswalkOffsetM;
      if (approach < 0.0) throw ConfigError("start_distance_m is shorter than the turn itself");
      const double side = right ? 1.0 : -1.0;  // east of the approach leg for a right turn
      const double yaw = right ? -v / r : v / r;
      const double t_turn = approach / v;
      const double tc = total / v;
      const double exit_north = approach + r;
      const double conflict_east = side * (r + kCrosswalkOffsetM);

      c.road.start = at(-lw / 2.0, 0.0);
      c.road.length_m = approach;
      c.road.intersection = true;
      ActorConfig car = make_vehicle(kFirstVehicleId, at(0.0, 0.0), 0.0, v);
      car.phases = {{t_turn, 0.0, yaw}, {t_turn + arc / v, 0.0, 0.0}};
      c.actors.push_back(car);
      c.actors.push_back(make_pedestrian(kFirstVruId, at(conflict_east, exit_north + vp * tc), 180.0, vp));
      c.conflict_point = at(conflict_east, exit_north);
      c.conflict_time_s = tc;
      c.duration_s = o.duration_s.value_or(ceil_to_tick(tc + 5.0, tick));
      break;
    }
    case ScenarioKind::AlongRoad: {
      crash_vehicle_only("along-road");
      const double v = o.speed_kmh.value_or(70.0) * kKmh;
      const double d = o.start_distance_m.value_or(300.0);
      if (v <= vp) throw ConfigError("the vehicle must be faster than the pedestrian");
      const double offset = o.ped_lane_offset_m.value_or(1.0);
      const double ped_east = lw / 2.0 + offset;
      const double tc = d / (v - vp);
      c.road.start = at(-lw / 2.0, 0.0);
      c.road.length_m = d + v * tc;
      c.actors.push_back(make_vehicle(kFirstVehicleId, at(0.0, 0.0), 0.0, v));
      c.actors.push_back(make_pedestrian(kFirstVruId, at(ped_east, d), 0.0, vp));
      c.conflict_point = at(ped_east, d + vp * tc);
      c.conflict_time_s = tc;
      c.duration_s = o.duration_s.value_or(ceil_to_tick(tc + 5.0, tick));
      break;
    }
    case ScenarioKind::Congestion: {
      const int peds = o.pedestrians.value_or(400);
      const int vehicles = o.vehicles.value_or(4);
      const double v = o.speed_kmh ? *o.speed_kmh * kKmh : 24.0;
      const double length = 1200.0;
      const double sidewalk = lw + c.road.sidewalk_offset_m;  // two lanes, so the edge is one lane width out
      c.road.start = at(0.0, 0.0);
      c.road.heading_deg = 90.0;
      c.road.length_m = length;
      c.duration_s = o.duration_s.value_or(50.0);
      std::mt19937_64 rng(c.seed);
      std::uniform_real_distribution<double> along(0.0, length);
      std::bernoulli_distribution coin(0.5);
      // Vehicles enter from both ends in alternation, 25 m apart.
      for (int i = 0; i < vehicles; ++i) {
        const double gap = 25.0 * (i / 2);
        const bool east = i % 2 == 0;
        c.actors.push_back(make_vehicle(kFirstVehicleId + i, east ? at(-gap, -lw / 2.0) : at(length + gap, lw / 2.0),
                                        east ? 90.0 : 270.0, v));
      }
      for (int i = 0; i < peds; ++i) {
        const double north = coin(rng) ? sidewalk : -sidewalk;
        const double heading = coin(rng) ? 90.0 : 270.0;
        ActorConfig p = make_pedestrian(kFirstVruId + i, at(along(rng), north), heading, vp);
        p.corridor = Corridor{at(0.0, north), at(length, north)};
        c.actors.push_back(p);
      }
      break;
    }
    case ScenarioKind::Custom: {
      const double v = o.speed_kmh.value_or(50.0) * kKmh;
      c.road.start = at(-lw / 2.0, 0.0);
      c.road.length_m = 500.0;
      c.duration_s = o.duration_s.value_or(20.0);
      const int vehicles = o.vehicles.value_or(1);
      for (int i = 0; i < vehicles; ++i) {
        c.actors.push_back(make_vehicle(kFirstVehicleId + i, at(0.0, -30.0 * i), 0.0, v));
      }
      // Optional bystanders standing on the right-hand sidewalk.
      for (int i = 0; i < o.pedestrians.value_or(0); ++i) {
        c.actors.push_back(make_pedestrian(kFirstVruId + i, at(lw + c.road.sidewalk_offset_m, 20.0 * (i + 1)), 0.0, 0.0));
      }
      break;
    }
  }

  if (o.congestion_control) c.policy.congestion_control_on = *o.congestion_control;
  if (o.power_control) c.policy.power_control_on = *o.power_control;
  if (o.braking_response) c.braking_response = *o.braking_response;
  if (o.radios_on) {
    for (auto& a : c.actors) a.radio_on = *o.radios_on;
  }
  c.validate();
  return c;
}

ScenarioConfig desk_congestion(std::uint64_t seed, bool policies_on) {
  ScenarioOverrides o;
  o.seed = seed;
  o.pedestrians = 100;
  o.duration_s = 20.0;
  o.congestion_control = policies_on;
  o.power_control = policies_on;
  return build_scenario(ScenarioKind::Congestion, o);
}

void TraceLog::add(double time_s, std::string type, TempId device, std::string detail) {
  records_.push_back({time_s, std::move(type), device, std::move(detail)});
}

std::map<int, double> RunResult::mean_cbp_by_window() const {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& s : channel.cbp_series) {
    auto& [sum, n] = acc[static_cast<int>(std::lround(s.window_start_s))];
    sum += s.cbp;
    ++n;
  }
  std::map<int, double> out;
  for (const auto& [w, sn] : acc) out[w] = sn.first / sn.second;
  return out;
}

namespace {

struct Pose {
  double east = 0.0;
  double north = 0.0;
  double heading_deg = 0.0;  // compass
  double speed = 0.0;
  double accel = 0.0;
  double yaw_rate = 0.0;  // counter-clockwise, rad/s
};

// Ground-truth motion: piecewise-constant acceleration and yaw rate,
// integrated in short sub-steps split exactly at phase boundaries.
class Mover {
 public:
  Mover(const ActorConfig& a, const geo::LocalTangentFrame& frame) : phases_(a.phases), max_speed_(a.max_speed_mps) {
    const auto e = frame.to_enu(a.position);
    pose_.east = e.east_m;
    pose_.north = e.north_m;
    pose_.heading_deg = geo::normalize_heading(a.heading_deg);
    pose_.speed = a.speed_mps;
    if (a.corridor) {
      const auto ea = frame.to_enu(a.corridor->a);
      const auto eb = frame.to_enu(a.corridor->b);
      corridor_a_ = {ea.east_m, ea.north_m};
      const double dx = eb.east_m - ea.east_m, dy = eb.north_m - ea.north_m;
      corridor_len_ = std::hypot(dx, dy);
      if (corridor_len_ > 0.0) corridor_u_ = {dx / corridor_len_, dy / corridor_len_};
    }
    refresh_controls();
  }

  void set_brake(double decel) { brake_ = decel; }

  void advance_to(double t) {
    constexpr double kSubstep = 0.01;
    while (t - time_ > 1e-12) {
      double next = std::min(t, time_ + kSubstep);
      for (const auto& p : phases_) {
        if (p.start_s > time_ + 1e-12 && p.start_s < next) next = p.start_s;
      }
      step(next - time_);
      time_ = next;
      refresh_controls();
    }
  }

  const Pose& pose() const { return pose_; }

 private:
  void refresh_controls() {
    double a = 0.0, w = 0.0;
    for (const auto& p : phases_) {
      if (p.start_s <= time_ + 1e-12) {
        a = p.accel_mps2;
        w = p.yaw_rate_rps;
      }
    }
    if (brake_) a = *brake_;
    pose_.accel = a;
    pose_.yaw_rate = w;
  }

  void step(double dt) {
    const double v0 = pose_.speed;
    const double a = pose_.accel;
    double v1 = std::clamp(v0 + a * dt, 0.0, max_speed_);
    double dist;
    if (a < 0.0 && v0 + a * dt < 0.0) {
      dist = v0 * v0 / (2.0 * -a);  // stops within the sub-step
    } else {
      dist = 0.5 * (v0 + v1) * dt;
    }
    const double w = (v0 > 0.0 || v1 > 0.0) ? pose_.yaw_rate : 0.0;
    // Compass heading turns clockwise, the yaw rate counter-clockwise.
    const double dpsi = -w * dt;
    const double h0 = geo::deg_to_rad(pose_.heading_deg);
    const double hm = h0 + dpsi / 2.0;
    const double half = dpsi / 2.0;
    const double chord = std::fabs(half) < 1e-9 ? dist : dist * std::sin(half) / half;
    pose_.east += chord * std::sin(hm);
    pose_.north += chord * std::cos(hm);
    pose_.heading_deg = geo::normalize_heading(geo::rad_to_deg(h0 + dpsi));
    pose_.speed = v1;
    if (corridor_len_ > 0.0) reflect();
  }

  void reflect() {
    const double s = (pose_.east - corridor_a_[0]) * corridor_u_[0] + (pose_.north - corridor_a_[1]) * corridor_u_[1];
    double push = 0.0;
    if (s < 0.0) push = -2.0 * s;
    if (s > corridor_len_) push = -2.0 * (s - corridor_len_);
    if (push == 0.0) return;
    pose_.east += push * corridor_u_[0];
    pose_.north += push * corridor_u_[1];
    pose_.heading_deg = geo::normalize_heading(pose_.heading_deg + 180.0);
  }

  std::vector<MotionPhase> phases_;
  double max_speed_;
  double time_ = 0.0;
  Pose pose_;
  std::optional<double> brake_;
  std::array<double, 2> corridor_a_{};
  std::array<double, 2> corridor_u_{};
  double corridor_len_ = 0.0;
};

constexpr int kNeverSent = 1 << 30;

int period_ticks(double rate_hz, double tick) {
  if (rate_hz <= 0.0) return kNeverSent;
  return std::max(1, static_cast<int>(std::lround(1.0 / (rate_hz * tick))));
}

struct Device {
  Device(const ActorConfig& a, const ScenarioConfig& sc, const geo::LocalTangentFrame& frame)
      : cfg(a),
        vehicle(a.kind == ActorKind::Vehicle),
        mover(a, frame),
        map(sc.map),
        monitor(vehicle ? safety::MonitorRole::Vehicle : safety::MonitorRole::Phone, sc.safety, sc.map) {}

  std::size_t node = 0;
  ActorConfig cfg;
  bool vehicle = false;
  Mover mover;
  awareness::RealTimeMap map;
  safety::CollisionMonitor monitor;
  MsgCounter counter;
  int ticks_since_tx = kNeverSent;
  int ticks_since_fix = kNeverSent;
  bool have_fix = false;
  geo::GeodeticPosition fix_position{};
  double fix_heading_deg = 0.0;
  awareness::KinematicState fix_kin{};
  std::optional<policy::ContextEvaluator> context;
  policy::PolicyState state{};
  policy::EnergyLedger energy{};
  SimTime airtime_ns = 0;
  bool braking = false;
};

awareness::KinematicState kinematics(const Pose& p) {
  return {p.speed, p.accel, p.heading_deg, p.yaw_rate};
}

geo::LocalFramePoint relative(const Pose& observer, const Pose& target) {
  return geo::enu_to_local_frame({target.east - observer.east, target.north - observer.north, 0.0},
                                 observer.heading_deg);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

RunResult run(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto wall_start = std::chrono::steady_clock::now();
  const geo::LocalTangentFrame frame(cfg.origin);
  const double tick = cfg.app_tick_s;
  const SimTime tick_ns = channel::from_seconds(tick);
  const int ticks = static_cast<int>(std::lround(cfg.duration_s / tick));
  const SimTime end_ns = tick_ns * ticks;

  std::mt19937_64 rng(cfg.seed);
  channel::Channel ch(cfg.propagation, rng(), 10.0);

  RunResult out;
  out.kind = cfg.kind;
  out.duration_s = ticks * tick;
  out.app_tick_s = tick;
  out.per_bin_width_m = cfg.per_bin_width_m;

  std::vector<Device> devices;
  devices.reserve(cfg.actors.size());
  std::uniform_int_distribution<SimTime> offset(0, tick_ns - 1);
  for (const auto& a : cfg.actors) {
    const bool vehicle = a.kind == ActorKind::Vehicle;
    Device d(a, cfg, frame);
    const Pose& p = d.mover.pose();
    d.node = ch.add_node(vehicle ? channel::NodeKind::Vehicle : channel::NodeKind::Phone,
                         vehicle ? cfg.vehicle_radio : cfg.phone_radio, {p.east, p.north, 0.0});
    if (!vehicle) {
      const bool high_risk = a.high_risk || a.user_type == messages::UserType::PublicSafetyWorker;
      d.context.emplace(cfg.policy, cfg.safety, high_risk);
      d.state = policy::PolicyState{true, cfg.policy.full_fix_rate_hz, policy::RadioMode::TxRx,
                                    cfg.policy.fixed_rate_hz, cfg.policy.baseline_power_dbm};
      ch.set_tx_power(d.node, d.state.tx_power_dbm);
    }
    if (!a.radio_on) ch.set_radio_on(d.node, false, 0);
    out.actor_ids.push_back(a.id);
    out.actor_kinds.push_back(a.kind);
    devices.push_back(std::move(d));
  }


  std::optional<std::size_t> first_vehicle, first_vru;
  for (std::size_t i = 0; i < devices.size(); ++i) {
    if (devices[i].vehicle && !first_vehicle) first_vehicle = i;
    if (!devices[i].vehicle && !first_vru) first_vru = i;
  }

  const double road_half_width = cfg.road.lanes * cfg.road.lane_width_m / 2.0;
  const auto road_start = frame.to_enu(cfg.road.start);
  const double road_h = geo::deg_to_rad(cfg.road.heading_deg);
  auto on_road = [&](const geo::GeodeticPosition& g) {
    const auto e = frame.to_enu(g);
    const double dx = e.east_m - road_start.east_m, dy = e.north_m - road_start.north_m;
    const double along = dx * std::sin(road_h) + dy * std::cos(road_h);
    const double across = dx * std::cos(road_h) - dy * std::sin(road_h);
    return along >= 0.0 && along <= cfg.road.length_m && std::fabs(across) <= road_half_width;
  };

  std::optional<geo::EnuPosition> conflict;
  if (cfg.conflict_point) conflict = frame.to_enu(*cfg.conflict_point);
  out.summary.conflict_time_s = cfg.conflict_time_s;

  std::normal_distribution<double> noise(0.0, 1.0);
  channel::DropCauses last_drops{};

  for (int k = 0; k <= ticks; ++k) {
    const double t = k * tick;
    const SimTime tk = tick_ns * k;
    ch.run_until(tk);
    auto deliveries = ch.take_deliveries();
    for (const auto& e : ch.take_transmissions()) {
      devices[e.sender].airtime_ns += e.end - e.start;
      out.trace.add(channel::to_seconds(e.start), "tx", devices[e.sender].cfg.id,
                    "end=" + fmt("%.6f", channel::to_seconds(e.end)) + ";bytes=" + std::to_string(e.payload->size()));
    }
    const auto& drops = ch.metrics().drops;
    if (drops.below_sensitivity != last_drops.below_sensitivity || drops.collision != last_drops.collision ||
        drops.noise_limited != last_drops.noise_limited || drops.busy_expired != last_drops.busy_expired) {
      out.trace.add(t, "drops", 0,
                    "below_sensitivity=" + std::to_string(drops.below_sensitivity - last_drops.below_sensitivity) +
                        ";collision=" + std::to_string(drops.collision - last_drops.collision) +
                        ";noise_limited=" + std::to_string(drops.noise_limited - last_drops.noise_limited) +
                        ";busy_expired=" + std::to_string(drops.busy_expired - last_drops.busy_expired));
      last_drops = drops;
    }

    // Energy for the interval that just ended, under the state chosen for it.
    if (k > 0) {
      for (auto& d : devices) {
        if (d.vehicle) continue;
        d.energy = policy::account_energy(d.energy, d.state, tick, channel::to_seconds(d.airtime_ns), cfg.power_draws);
        d.airtime_ns = 0;
      }
    }

    // (a) ground truth, GPS fixes and self pose.
    for (auto& d : devices) {
      if (d.braking) d.mover.set_brake(cfg.safety.d_mod);
      d.mover.advance_to(t);
      const Pose& p = d.mover.pose();
      ch.set_position(d.node, {p.east, p.north, 0.0});
    }
    for (const auto& v : devices) {
      if (!v.vehicle) continue;
      for (const auto& w : devices) {
        if (w.vehicle) continue;
        const double sep = std::hypot(v.mover.pose().east - w.mover.pose().east, v.mover.pose().north - w.mover.pose().north);
        if (sep < out.summary.min_separation_m) {
          out.summary.min_separation_m = sep;
          out.summary.min_separation_time_s = t;
        }
      }
    }
    for (auto& d : devices) {
      const bool gps_on = d.vehicle || d.state.gps_on;
      const int period = d.vehicle ? 1 : period_ticks(d.state.gps_fix_rate_hz, tick);
      if (!gps_on || !d.cfg.gps_signal) {
        ++d.ticks_since_fix;
        continue;
      }
      if (d.ticks_since_fix + 1 < period) {
        ++d.ticks_since_fix;
        continue;
      }
      d.ticks_since_fix = 0;
      const Pose& p = d.mover.pose();
      double e = p.east, n = p.north;
      if (d.cfg.position_noise_m > 0.0) {
        e += d.cfg.position_noise_m * noise(rng);
        n += d.cfg.position_noise_m * noise(rng);
      }
      d.fix_position = frame.to_geodetic({e, n, 0.0});
      d.fix_heading_deg = p.heading_deg;
      d.fix_kin = kinematics(p);
      d.have_fix = true;
      d.map.update_self(d.fix_position, d.fix_heading_deg, d.fix_kin, t);
    }

    // (d) deliveries from the previous interval, at their reception times.
    std::map<const std::vector<std::uint8_t>*, messages::Message> decoded;
    for (const auto& del : deliveries) {
      auto it = decoded.find(del.payload.get());
      if (it == decoded.end()) it = decoded.emplace(del.payload.get(), messages::decode(*del.payload)).first;
      Device& rx = devices[del.receiver];
      if (!rx.have_fix) continue;  // no frame to place it in yet
      rx.map.ingest(it->second, channel::to_seconds(del.time));
    }
    out.summary.deliveries += deliveries.size();
    for (auto& d : devices) {
      d.map.expire_records(t);
      if (d.vehicle) safety::update_track_context(d.map, t, cfg.discrimination, on_road);
    }

    // (b) phone policies.
    for (auto& d : devices) {
      if (d.vehicle || !d.cfg.radio_on) continue;
      const Pose& p = d.mover.pose();
      policy::SensorSnapshot s;
      s.time_s = t;
      s.gyro_variance = p.speed > 0.05 ? 0.05 : 0.0;
      s.gps_signal = d.cfg.gps_signal;
      s.position = d.have_fix ? d.fix_position : frame.to_geodetic({p.east, p.north, 0.0});
      s.speed_mps = p.speed;
      const policy::DeviceContext ctx = d.context->evaluate(s, d.map);
      const policy::PolicyState next = policy::decide(ctx, cfg.policy);
      if (next != d.state) {
        out.trace.add(t, "policy", d.cfg.id,
                      policy::to_string(d.state) + " -> " + policy::to_string(next) + ";flags=" +
                          policy::to_string(ctx.flags));
        ch.set_radio_on(d.node, next.radio_mode != policy::RadioMode::Off, tk);
        if (next.radio_mode == policy::RadioMode::TxRx) ch.set_tx_power(d.node, next.tx_power_dbm);
        if (next.radio_mode != policy::RadioMode::TxRx) d.ticks_since_tx = kNeverSent;
        if (!next.gps_on) d.ticks_since_fix = kNeverSent;
        d.state = next;
      }
    }

    // (e) collision checks.
    for (auto& d : devices) {
      if (!d.have_fix) continue;
      const auto batch = d.monitor.evaluate(d.map, t);
      const auto role = d.vehicle ? safety::MonitorRole::Vehicle : safety::MonitorRole::Phone;
      for (const auto& ev : batch.evaluations) {
        const auto& a = ev.assessment;
        out.dts_trace.push_back({t, d.cfg.id, role, a.target, a.rel.d_lon, a.rel.d_lat, a.zones, a.label, ev.state.level});
      }
      for (const auto& e : batch.events) {
        out.warnings.push_back({d.cfg.id, role, e});
        ++out.summary.warnings;
        out.trace.add(t, "warning", d.cfg.id,
                      std::string("target=") + std::to_string(e.target) + ";level=" + safety::to_string(e.level) +
                          ";previous=" + safety::to_string(e.previous) + ";label=" + safety::to_string(e.label) +
                          ";d_lon=" + fmt("%.3f", e.d_lon));
        if (e.level <= e.previous) continue;
        const Pose& p = d.mover.pose();
        std::optional<double> to_conflict;
        if (conflict) to_conflict = std::hypot(p.east - conflict->east_m, p.north - conflict->north_m);
        auto& s = out.summary;
        if (d.vehicle) {
          if (!s.first_advisory_time_s) {
            s.first_advisory_time_s = t;
            s.first_advisory_d_lon_m = e.d_lon;
            s.first_advisory_conflict_distance_m = to_conflict;
          }
          if (e.level == safety::WarningLevel::Imminent && !s.first_imminent_time_s) {
            s.first_imminent_time_s = t;
            s.first_imminent_d_lon_m = e.d_lon;
            s.first_imminent_conflict_distance_m = to_conflict;
          }
        } else if (e.level == safety::WarningLevel::Imminent && !s.phone_first_imminent_time_s) {
          s.phone_first_imminent_time_s = t;
        }
      }
      if (d.vehicle && cfg.braking_response && d.monitor.max_level() >= safety::WarningLevel::Advisory) {
        d.braking = true;
      }
      if (cfg.trace_map_snapshots) {
        for (const auto& [id, r] : d.map.records()) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "id=%u;kind=%s;x=%.3f;y=%.3f;v=%.3f", id, awareness::to_string(r.kind),
                        r.position.x_m, r.position.y_m, r.kin.speed_mps);
          out.trace.add(t, "map", d.cfg.id, buf);
        }
      }

      // Relative paths for the first vehicle / first VRU pair.
      if (first_vehicle && first_vru) {
        const bool observer_vehicle = devices.data() + *first_vehicle == &d;
        const bool observer_vru = devices.data() + *first_vru == &d;
        if (observer_vehicle || observer_vru) {
          const Device& other = devices[observer_vehicle ? *first_vru : *first_vehicle];
          RelPathRow row;
          row.time_s = t;
          const awareness::MapRecord* r = d.map.find(other.cfg.id);
          const auto hit = std::find_if(batch.evaluations.begin(), batch.evaluations.end(),
                                        [&](const safety::Evaluation& e) { return e.assessment.target == other.cfg.id; });
          if (r && hit != batch.evaluations.end()) {
            const auto p = awareness::predict_point(*r, std::max(0.0, t - r->measured_at_s), cfg.map);
            row.x_m = p.x_m;
            row.y_m = p.y_m;
            row.zone = hit->assessment.label;
          } else {
            const auto p = relative(d.mover.pose(), other.mover.pose());
            row.x_m = p.x_m;
            row.y_m = p.y_m;
          }
          (observer_vehicle ? out.relpath_vehicle : out.relpath_phone).push_back(row);
        }
      }
    }
    // Keep one relpath row per tick even before the observer's first fix.
    if (first_vehicle && first_vru) {
      auto pad = [&](std::vector<RelPathRow>& rows, std::size_t obs, std::size_t other) {
        if (rows.size() == static_cast<std::size_t>(k) + 1) return;
        const auto p = relative(devices[obs].mover.pose(), devices[other].mover.pose());
        rows.push_back({t, p.x_m, p.y_m, std::nullopt});
      };
      pad(out.relpath_vehicle, *first_vehicle, *first_vru);
      pad(out.relpath_phone, *first_vru, *first_vehicle);
    }

    // (c) broadcasts for this tick, each at a fresh random offset inside the
    // tick so that no pair of senders stays synchronised.
    if (k == ticks) break;
    std::vector<std::pair<SimTime, std::size_t>> senders;
    for (std::size_t i = 0; i < devices.size(); ++i) {
      Device& d = devices[i];
      if (!ch.radio_on(d.node) || !d.have_fix) continue;
      const double rate = d.vehicle ? cfg.vehicle_tx_rate_hz
                                    : (d.state.radio_mode == policy::RadioMode::TxRx ? d.state.tx_rate_hz : 0);
      if (rate <= 0.0) continue;
      if (d.ticks_since_tx != kNeverSent && d.ticks_since_tx + 1 < period_ticks(rate, tick)) {
        ++d.ticks_since_tx;
        continue;
      }
      d.ticks_since_tx = 0;
      senders.emplace_back(offset(rng), i);
    }
    std::sort(senders.begin(), senders.end());
    for (const auto& [tx_at, i] : senders) {
      Device& d = devices[i];
      messages::CommonSafetyFields c;
      c.msg_count = d.counter.next();
      c.temp_id = d.cfg.id;
      c.dsecond = awareness::dsecond_at(t);
      c.position = d.fix_position;
      c.speed = std::min(d.fix_kin.speed_mps, 163.8);
      c.heading_deg = geo::normalize_heading(d.fix_heading_deg);
      if (c.heading_deg >= 359.99) c.heading_deg = 0.0;
      c.accel.lon_accel = std::clamp(d.fix_kin.accel_mps2, -20.0, 20.0);
      c.accel.yaw_rate_dps = std::clamp(geo::rad_to_deg(d.fix_kin.yaw_rate_rps), -327.0, 327.0);
      std::vector<std::uint8_t> bytes;
      std::size_t on_air = 0;
      if (d.vehicle) {
        messages::Bsm m;
        m.common = c;
        m.transmission_state = messages::TransmissionState::ForwardGears;
        m.brake_status.brake_applied = d.braking;
        m.vehicle_size = {4.8, 1.8};
        bytes = messages::encode_bsm(m);
        on_air = cfg.bsm_on_air_bytes;
      } else {
        messages::Psm m;
        m.common = c;
        m.user_type = d.cfg.user_type;
        bytes = messages::encode_psm(m);
        on_air = cfg.psm_on_air_bytes;
      }
      ch.enqueue(d.node, std::move(bytes), on_air, tk + tx_at);
    }
  }

  ch.run_until(end_ns);
  ch.finalize(end_ns);
  out.channel = ch.metrics();
  for (const auto& d : devices) {
    out.summary.stale_drops += d.map.stale_drops();
    if (!d.vehicle) out.energy.push_back({d.cfg.id, d.energy});
  }
  std::sort(out.energy.begin(), out.energy.end(), [](const EnergyRow& a, const EnergyRow& b) { return a.device < b.device; });
  out.summary.transmissions = out.channel.transmissions;
  out.summary.drops = out.channel.drops;
  double cbp_sum = 0.0;
  for (const auto& s : out.channel.cbp_series) cbp_sum += s.cbp;
  out.summary.mean_cbp = out.channel.cbp_series.empty() ? 0.0 : cbp_sum / out.channel.cbp_series.size();
  out.summary.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return out;
}

AbReport run_ab(const std::function<ScenarioConfig(std::uint64_t seed, bool on)>& make,
                const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  const std::size_t n = seeds.size() * 2;
  std::vector<std::optional<RunResult>> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = run(make(seeds[i / 2], i % 2 == 1));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  AbReport rep;
  rep.seeds = seeds;
  if (n == 0) return rep;
  rep.bin_width_m = results[0]->per_bin_width_m;
  std::map<int, AbBin> bins;
  const auto link = std::make_pair(channel::NodeKind::Vehicle, channel::NodeKind::Phone);
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const RunResult& off = *results[2 * s];
    const RunResult& on = *results[2 * s + 1];
    std::vector<AbWindow> windows;
    const auto w_off = off.mean_cbp_by_window();
    const auto w_on = on.mean_cbp_by_window();
    for (const auto& [w, c] : w_off) {
      auto it = w_on.find(w);
      windows.push_back({w, c, it == w_on.end() ? 0.0 : it->second});
    }
    rep.cbp.push_back(std::move(windows));

    auto add = [&](const RunResult& r, bool is_on) {
      if (!r.channel.per_by_link.count(link)) return;
      for (const auto& [b, pb] : r.channel.aggregated(rep.bin_width_m, link.first, link.second)) {
        AbBin& dst = bins[b];
        dst.bin = b;
        channel::PerBin& acc = is_on ? dst.on : dst.off;
        acc.attempted += pb.attempted;
        acc.failed += pb.failed;
      }
    };
    add(off, false);
    add(on, true);

    std::map<TempId, policy::EnergyLedger> on_energy;
    for (const auto& e : on.energy) on_energy[e.device] = e.ledger;
    for (const auto& e : off.energy) {
      rep.energy.push_back({e.device, seeds[s], e.ledger, on_energy[e.device]});
    }
  }
  for (const auto& [b, ab] : bins) rep.per.push_back(ab);
  return rep;
}

}  // namespace v2p::scenario
