#include "v2p/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "v2p/error.hpp"

namespace v2p::policy {

bool contains(const GeoPolygon& polygon, const geo::GeodeticPosition& p) {
  const auto& v = polygon.vertices;
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const double yi = v[i].lat_deg, yj = v[j].lat_deg;
    const double xi = v[i].lon_deg, xj = v[j].lon_deg;
    if ((yi > p.lat_deg) != (yj > p.lat_deg) &&
        p.lon_deg < (xj - xi) * (p.lat_deg - yi) / (yj - yi) + xi) {
      inside = !inside;
    }
  }
  return inside;
}

void PolicyConfig::validate() const {
  if (!(slow_speed_mps > 0.0 && fast_speed_mps >= slow_speed_mps)) throw InvalidInput("rate table speeds out of order");
  if (!(0 < slow_rate_hz && slow_rate_hz <= mid_rate_hz && mid_rate_hz <= fast_rate_hz)) {
    throw InvalidInput("rate table must be positive and nondecreasing");
  }
  for (double dbm : {baseline_power_dbm, reduced_power_dbm, high_risk_power_dbm}) {
    if (!(dbm >= 0.0 && dbm <= 10.0)) throw InvalidInput("phone tx power must be within [0, 10] dBm");
  }
  if (fixed_rate_hz <= 0 || high_risk_rate_hz <= 0) throw InvalidInput("tx rates must be positive");
  if (gyro_variance_threshold < 0.0 || stationary_dwell_s < 0.0 || co_moving_time_s < 0.0) {
    throw InvalidInput("context thresholds must be nonnegative");
  }
  if (nearby_radius_m <= 0.0 || approach_radius_m <= 0.0 || approach_horizon_s <= 0.0) {
    throw InvalidInput("context radii and horizon must be positive");
  }
  if (!(stationary_fix_rate_hz > 0.0 && full_fix_rate_hz >= stationary_fix_rate_hz)) {
    throw InvalidInput("GPS fix rates invalid");
  }
  for (const auto* list : {&buildings, &parks}) {
    for (const auto& poly : *list) {
      if (poly.vertices.size() < 3) throw InvalidInput("polygon needs at least 3 vertices");
    }
  }
}

std::string to_string(const ContextFlags& f) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '|';
    out += name;
  };
  add(f.stationary, "stationary");
  add(f.indoor, "indoor");
  add(f.in_vehicle, "in_vehicle");
  add(f.no_nearby_vehicles, "no_nearby_vehicles");
  add(f.in_park, "in_park");
  return out.empty() ? "none" : out;
}

const char* to_string(RadioMode m) {
  switch (m) {
    case RadioMode::Off: return "off";
    case RadioMode::ListenOnly: return "listen";
    case RadioMode::TxRx: return "txrx";
  }
  return "?";
}

std::string to_string(const PolicyState& s) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "gps=%s@%gHz radio=%s rate=%dHz power=%gdBm", s.gps_on ? "on" : "off",
                s.gps_fix_rate_hz, to_string(s.radio_mode), s.tx_rate_hz, s.tx_power_dbm);
  return buf;
}

ContextEvaluator::ContextEvaluator(PolicyConfig config, safety::SafetyParams safety, bool high_risk_user)
    : config_(std::move(config)), safety_(safety), high_risk_(high_risk_user) {
  config_.validate();
}

namespace {

// True when the vehicle's own predicted path brings it closer to the device
// (held at its current position) than it is now.
bool approaching(const awareness::MapRecord& r, double now_s, double current, const PolicyConfig& cfg,
                 const awareness::MapConfig& mc) {
  const double age = std::max(0.0, now_s - r.measured_at_s);
  const auto path = awareness::predict_path(r, age + cfg.approach_horizon_s, mc.prediction_step_s, mc);
  double closest = std::numeric_limits<double>::infinity();
  for (const auto& tp : path) {
    const double dt = tp.time_s - now_s;
    if (dt <= 0.0) continue;
    closest = std::min(closest, std::hypot(tp.point.x_m, tp.point.y_m));
  }
  return closest < current - 1e-6;
}

}  // namespace

DeviceContext ContextEvaluator::evaluate(const SensorSnapshot& sensors, const awareness::RealTimeMap& map) {
  const double now = sensors.time_s;
  const auto& mc = map.config();
  DeviceContext ctx;
  ctx.own_speed_mps = sensors.speed_mps;
  ctx.is_high_risk_user = high_risk_;

  if (sensors.gyro_variance < config_.gyro_variance_threshold) {
    if (!quiet_since_s_) quiet_since_s_ = now;
  } else {
    quiet_since_s_.reset();
  }
  ctx.flags.stationary = quiet_since_s_ && now - *quiet_since_s_ >= config_.stationary_dwell_s;

  ctx.flags.indoor = !sensors.gps_signal ||
                     std::any_of(config_.buildings.begin(), config_.buildings.end(),
                                 [&](const GeoPolygon& b) { return contains(b, sensors.position); });
  ctx.flags.in_park = std::any_of(config_.parks.begin(), config_.parks.end(),
                                  [&](const GeoPolygon& b) { return contains(b, sensors.position); });

  bool co_moving = false;
  for (const auto& [id, r] : map.records()) {
    const auto p = awareness::predict_point(r, std::max(0.0, now - r.measured_at_s), mc);
    const double d = std::hypot(p.x_m, p.y_m);
    if (r.kind == awareness::EntityKind::Vru) {
      if (d <= config_.nearby_radius_m) ++ctx.nearby_vru_count;
      continue;
    }
    if (d <= config_.nearby_radius_m) ++ctx.nearby_vehicle_count;
    if (d <= config_.co_moving_distance_m && sensors.speed_mps >= config_.in_vehicle_min_speed_mps) {
      co_moving = true;
    }
    if (d <= safety::compute_zone_set(r.kin, safety_).dts_mod) ctx.vehicle_within_dts_mod = true;
    if (d <= config_.approach_radius_m) {
      if (approaching(r, now, d, config_, mc) &&
          (!ctx.nearest_approaching_vehicle_distance_m || d < *ctx.nearest_approaching_vehicle_distance_m)) {
        ctx.nearest_approaching_vehicle_distance_m = d;
      }
    }
  }
  ctx.flags.no_nearby_vehicles = ctx.nearby_vehicle_count == 0;

  // Once inside a vehicle the radio goes quiet, so the latch is held by own
  // speed alone rather than by hearing the vehicle.
  if (co_moving) {
    if (!co_moving_since_s_) co_moving_since_s_ = now;
  } else {
    co_moving_since_s_.reset();
  }
  if (co_moving_since_s_ && now - *co_moving_since_s_ >= config_.co_moving_time_s) in_vehicle_ = true;
  if (sensors.speed_mps < config_.in_vehicle_min_speed_mps) in_vehicle_ = false;
  ctx.flags.in_vehicle = in_vehicle_;
  return ctx;
}

PowerDecision apply_power_policy(const DeviceContext& ctx, const PolicyConfig& cfg) {
  if (!cfg.power_control_on) return {true, cfg.full_fix_rate_hz, true};
  const auto& f = ctx.flags;
  if (f.indoor || f.in_vehicle || (f.no_nearby_vehicles && f.in_park)) return {false, 0.0, false};
  if (f.stationary) return {true, cfg.stationary_fix_rate_hz, true};
  return {true, cfg.full_fix_rate_hz, true};
}

PolicyState apply_congestion_policy(const DeviceContext& ctx, const PolicyConfig& cfg) {
  PolicyState s;
  s.gps_on = true;
  s.gps_fix_rate_hz = cfg.full_fix_rate_hz;
  if (!cfg.congestion_control_on) {
    s.radio_mode = RadioMode::TxRx;
    s.tx_rate_hz = cfg.fixed_rate_hz;
    s.tx_power_dbm = cfg.baseline_power_dbm;
    return s;
  }
  if (ctx.is_high_risk_user) {
    s.radio_mode = RadioMode::TxRx;
    s.tx_rate_hz = cfg.high_risk_rate_hz;
    s.tx_power_dbm = cfg.high_risk_power_dbm;
    return s;
  }
  const bool approach =
      ctx.nearest_approaching_vehicle_distance_m && *ctx.nearest_approaching_vehicle_distance_m <= cfg.approach_radius_m;
  if (!approach && !ctx.vehicle_within_dts_mod) {
    s.radio_mode = RadioMode::ListenOnly;
    s.tx_rate_hz = 0;
    s.tx_power_dbm = 0.0;
    return s;
  }
  s.radio_mode = RadioMode::TxRx;
  const double v = ctx.own_speed_mps;
  s.tx_rate_hz = v < cfg.slow_speed_mps ? cfg.slow_rate_hz : v <= cfg.fast_speed_mps ? cfg.mid_rate_hz : cfg.fast_rate_hz;
  const bool dense = ctx.nearby_vru_count > cfg.density_vru_threshold &&
                     ctx.nearby_vehicle_count < cfg.density_vehicle_threshold;
  s.tx_power_dbm = dense ? cfg.reduced_power_dbm : cfg.baseline_power_dbm;
  return s;
}

PolicyState decide(const DeviceContext& ctx, const PolicyConfig& cfg) {
  const PowerDecision power = apply_power_policy(ctx, cfg);
  if (!power.radio_allowed) return {false, 0.0, RadioMode::Off, 0, 0.0};
  PolicyState s = apply_congestion_policy(ctx, cfg);
  s.gps_on = power.gps_on;
  s.gps_fix_rate_hz = power.gps_fix_rate_hz;
  if (cfg.power_control_on) {
    const double needed = s.radio_mode == RadioMode::TxRx ? static_cast<double>(s.tx_rate_hz) : 0.0;
    s.gps_fix_rate_hz = std::clamp(needed, cfg.stationary_fix_rate_hz, power.gps_fix_rate_hz);
  }
  return s;
}

EnergyLedger account_energy(const EnergyLedger& ledger, const PolicyState& state, double dt_s,
                            double tx_airtime_s, const PowerDraws& draws) {
  if (!(dt_s >= 0.0) || !(tx_airtime_s >= 0.0)) throw InvalidInput("energy intervals must be nonnegative");
  constexpr double kSecondsPerHour = 3600.0;
  EnergyLedger out = ledger;
  if (state.gps_on) {
    const double duty = std::min(1.0, state.gps_fix_rate_hz / draws.full_fix_rate_hz);
    out.gps_mwh += draws.gps_mw * duty * dt_s / kSecondsPerHour;
  }
  if (state.radio_mode != RadioMode::Off) out.radio_rx_mwh += draws.rx_mw * dt_s / kSecondsPerHour;
  out.radio_tx_mwh += draws.tx_mw * tx_airtime_s / kSecondsPerHour;
  return out;
}

}  // namespace v2p::policy
