#include "v2p/safety.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "v2p/error.hpp"

namespace v2p::safety {

using awareness::EntityKind;
using awareness::VruClass;

const char* to_string(ZoneLabel l) {
  switch (l) {
    case ZoneLabel::Safe: return "safe";
    case ZoneLabel::Risk: return "risk";
    case ZoneLabel::Danger: return "danger";
    case ZoneLabel::UnavoidableCrash: return "unavoidable";
  }
  return "?";
}

const char* to_string(WarningLevel l) {
  switch (l) {
    case WarningLevel::None: return "none";
    case WarningLevel::Advisory: return "advisory";
    case WarningLevel::Imminent: return "imminent";
  }
  return "?";
}

void SafetyParams::validate() const {
  const double all[] = {t_drd, t_guard, t_mod, d_mod, dmax_c0, dmax_c1, lane_width, yaw_rate_min,
                        max_lookahead_s};
  for (double v : all) {
    if (!std::isfinite(v)) throw InvalidInput("safety parameters must be finite");
  }
  if (t_drd < 0.0 || t_guard < 0.0 || t_mod < 0.0) throw InvalidInput("safety time constants must be >= 0");
  if (d_mod >= 0.0) throw InvalidInput("d_mod must be negative");
  if (dmax_c0 >= 0.0 || dmax_c1 > 0.0) throw InvalidInput("d_max coefficients must make d_max negative");
  if (std::fabs(d_mod) > std::fabs(dmax_c0)) throw InvalidInput("|d_mod| must not exceed |d_max(0)|");
  if (lane_width <= 0.0) throw InvalidInput("lane_width must be positive");
  if (yaw_rate_min <= 0.0) throw InvalidInput("yaw_rate_min must be positive");
  if (max_lookahead_s < 0.0) throw InvalidInput("max_lookahead_s must be >= 0");
}

double max_decel(double v_brk, const SafetyParams& p) {
  if (!(v_brk >= 0.0)) throw InvalidInput("v_brk must be >= 0, got " + std::to_string(v_brk));
  return p.dmax_c0 + p.dmax_c1 * v_brk;
}

double v_brk(const KinematicState& kin, const SafetyParams& p) {
  return std::max(0.0, kin.accel_mps2 * p.t_drd + kin.speed_mps);
}

double compute_tts_min(const KinematicState& kin, const SafetyParams& p) {
  const double vb = v_brk(kin, p);
  return -vb / max_decel(vb, p) + p.t_drd;
}

namespace {

double free_run_distance(double v, double a, double t) {
  if (t <= 0.0 || (v <= 0.0 && a <= 0.0)) return 0.0;
  if (a < 0.0) {
    const double t_stop = -v / a;
    if (t >= t_stop) return v * v / (2.0 * -a);
  }
  return v * t + 0.5 * a * t * t;
}

}  // namespace

double stopping_distance(double speed, double accel, double t_free, double decel) {
  if (speed <= 0.0 && accel <= 0.0) return 0.0;
  // Already braking harder than `decel`: the vehicle just keeps slowing down.
  if (accel < 0.0 && accel <= decel) return speed * speed / (2.0 * -accel);
  const double v_f = std::max(0.0, speed + accel * t_free);
  const double brake_dist = v_f > 0.0 ? v_f * v_f / (2.0 * -decel) : 0.0;
  return free_run_distance(speed, accel, t_free) + brake_dist;
}

double compute_dts_min(const KinematicState& kin, const SafetyParams& p) {
  const double vb = v_brk(kin, p);
  return stopping_distance(kin.speed_mps, kin.accel_mps2, p.t_drd, max_decel(vb, p));
}

ZoneSet compute_zone_set(const KinematicState& kin, const SafetyParams& p) {
  const double v = kin.speed_mps;
  const double a = kin.accel_mps2;
  const double t_guard = p.t_drd + p.t_guard;
  const double v_guard = std::max(0.0, v + a * t_guard);
  ZoneSet z;
  z.dts_min = compute_dts_min(kin, p);
  z.dts_guard = stopping_distance(v, a, t_guard, max_decel(v_guard, p));
  z.dts_mod = stopping_distance(v, a, t_guard + p.t_mod, p.d_mod);
  z.half_width = p.lane_width / 2.0;
  z.tts_min = compute_tts_min(kin, p);
  return z;
}

RelativePosition project_straight(const geo::LocalFramePoint& target) {
  return {target.y_m, target.x_m};
}

RelativePosition project_curved(const geo::LocalFramePoint& target, const KinematicState& kin,
                                const SafetyParams& p) {
  const double w = kin.yaw_rate_rps;
  if (std::fabs(w) < p.yaw_rate_min || kin.speed_mps <= 0.0) {
    throw InvalidInput("curved projection needs |yaw_rate| >= yaw_rate_min and positive speed");
  }
  const double s = w > 0.0 ? 1.0 : -1.0;
  const double radius = kin.speed_mps / std::fabs(w);
  const double qx = target.x_m;
  const double qy = target.y_m - s * radius;
  const double dist = std::hypot(qx, qy);
  if (dist <= 1e-9 * std::max(1.0, radius)) {
    throw InvalidInput("target coincides with the turn centre");
  }
  const double start = -s * geo::kPi / 2.0;  // the vehicle seen from the centre
  const double sweep = geo::wrap_pi(s * (std::atan2(qy, qx) - start));
  return {s * (radius - dist), radius * sweep};
}

RelativePosition project(const geo::LocalFramePoint& target, const KinematicState& kin,
                         const SafetyParams& p) {
  if (std::fabs(kin.yaw_rate_rps) < p.yaw_rate_min || kin.speed_mps <= 0.0) {
    return project_straight(target);
  }
  try {
    return project_curved(target, kin, p);
  } catch (const InvalidInput&) {
    const double radius = kin.speed_mps / std::fabs(kin.yaw_rate_rps);
    return {kin.yaw_rate_rps > 0.0 ? radius : -radius, 0.0};
  }
}

ZoneLabel classify_target(const RelativePosition& rel, const ZoneSet& zones) {
  if (std::fabs(rel.d_lat) > zones.half_width || rel.d_lon < 0.0 || rel.d_lon > zones.dts_mod) {
    return ZoneLabel::Safe;
  }
  if (rel.d_lon <= zones.dts_min) return ZoneLabel::UnavoidableCrash;
  if (rel.d_lon <= zones.dts_guard) return ZoneLabel::Danger;
  return ZoneLabel::Risk;
}

WarningState detect_collision(const WarningState& prev, const RelativePosition& rel,
                              const ZoneSet& zones) {
  WarningState next = prev;
  if (classify_target(rel, zones) == ZoneLabel::Safe) {
    next.safe_streak = std::min(prev.safe_streak + 1, kLatchEvaluations);
    if (next.safe_streak >= kLatchEvaluations) next.level = WarningLevel::None;
    return next;
  }
  next.safe_streak = 0;
  WarningLevel seen = WarningLevel::None;
  if (rel.d_lon < zones.dts_guard) {
    seen = WarningLevel::Imminent;
  } else if (rel.d_lon < zones.dts_mod) {
    seen = WarningLevel::Advisory;
  }
  next.level = std::max(prev.level, seen);
  return next;
}

VruClass from_user_type(messages::UserType t) {
  switch (t) {
    case messages::UserType::Pedestrian: return VruClass::Pedestrian;
    case messages::UserType::Pedalcyclist: return VruClass::Cyclist;
    case messages::UserType::PublicSafetyWorker: return VruClass::PublicSafetyWorker;
    case messages::UserType::Animal: return VruClass::Animal;
    case messages::UserType::Unavailable: break;
  }
  return VruClass::Unknown;
}

VruClass discriminate_vru(const MapRecord& record, double now_s, const DiscriminationConfig& cfg) {
  if (record.kind != EntityKind::Vru) return VruClass::Unknown;
  if (record.declared_type && *record.declared_type != messages::UserType::Unavailable) {
    return from_user_type(*record.declared_type);
  }
  if (now_s - record.first_seen_s < cfg.min_history_s) return VruClass::Unknown;

  double sum = 0.0;
  int n = 0;
  for (const auto& s : record.speed_samples) {
    if (s.time_s >= record.measured_at_s - cfg.smoothing_window_s) {
      sum += s.speed_mps;
      ++n;
    }
  }
  const double v_bar = n > 0 ? sum / n : record.kin.speed_mps;

  if (v_bar < cfg.pedestrian_max_mps) {
    if (record.on_road_since_s && now_s - *record.on_road_since_s > cfg.road_dwell_s) {
      return VruClass::PublicSafetyWorker;
    }
    return VruClass::Pedestrian;
  }
  if (v_bar < cfg.cyclist_max_mps) return VruClass::Cyclist;
  if (record.co_moving_since_s && now_s - *record.co_moving_since_s >= cfg.co_moving_time_s) {
    return VruClass::InVehicle;
  }
  return VruClass::Motorcyclist;
}

void update_track_context(awareness::RealTimeMap& map, double now_s, const DiscriminationConfig& cfg,
                          const std::function<bool(const geo::GeodeticPosition&)>& on_road) {
  std::vector<geo::LocalFramePoint> vehicles;
  for (const auto& [id, r] : map.records()) {
    if (r.kind == EntityKind::Vehicle) vehicles.push_back(r.position);
  }
  for (const auto& [id, cr] : map.records()) {
    if (cr.kind != EntityKind::Vru) continue;
    MapRecord& r = *map.find(id);
    const bool co_moving = std::any_of(vehicles.begin(), vehicles.end(), [&](const geo::LocalFramePoint& v) {
      return std::hypot(v.x_m - r.position.x_m, v.y_m - r.position.y_m) <= cfg.co_moving_distance_m;
    });
    if (!co_moving) {
      r.co_moving_since_s.reset();
    } else if (!r.co_moving_since_s) {
      r.co_moving_since_s = now_s;
    }
    if (!on_road || !on_road(r.geodetic)) {
      r.on_road_since_s.reset();
    } else if (!r.on_road_since_s) {
      r.on_road_since_s = now_s;
    }
    r.vru_class = discriminate_vru(r, now_s, cfg);
  }
}

Assessment assess_target(const MapRecord& target, const KinematicState& vehicle, const ZoneSet& zones,
                         double now_s, const SafetyParams& p, const awareness::MapConfig& mc) {
  const double age = std::max(0.0, now_s - target.measured_at_s);
  Assessment out;
  out.target = target.id;
  out.zones = zones;
  out.predicted = awareness::predict_point(target, age, mc);
  out.rel = project(out.predicted, vehicle, p);

  // Fixed point of "where will the target be when the vehicle gets there".
  const double v = vehicle.speed_mps;
  if (v >= mc.stationary_speed_mps && target.kin.speed_mps >= mc.stationary_speed_mps) {
    for (int i = 0; i < 4; ++i) {
      const double t = std::clamp(out.rel.d_lon / v, 0.0, p.max_lookahead_s);
      if (std::fabs(t - out.lookahead_s) < 1e-3) break;
      out.lookahead_s = t;
      out.predicted = awareness::predict_point(target, age + t, mc);
      out.rel = project(out.predicted, vehicle, p);
    }
  }
  out.label = classify_target(out.rel, zones);
  return out;
}

Assessment assess_from_phone(const MapRecord& vehicle, const KinematicState& phone_kin, double now_s,
                             const SafetyParams& p, const awareness::MapConfig& mc) {
  const double age = std::max(0.0, now_s - vehicle.measured_at_s);
  const geo::LocalFramePoint vp = awareness::predict_point(vehicle, age, mc);
  double theta = vehicle.local_heading_rad;
  if (vehicle.kin.speed_mps >= mc.stationary_speed_mps &&
      std::fabs(vehicle.kin.yaw_rate_rps) >= mc.straight_yaw_rate_rps) {
    theta += vehicle.kin.yaw_rate_rps * age;
  }
  const double c = std::cos(theta), s = std::sin(theta);
  const double dx = -vp.x_m, dy = -vp.y_m;

  MapRecord phone;
  phone.id = vehicle.id;
  phone.kind = EntityKind::Vru;
  phone.position = {c * dx + s * dy, -s * dx + c * dy};
  phone.local_heading_rad = geo::wrap_pi(-theta);
  phone.kin = phone_kin;
  phone.measured_at_s = now_s;
  phone.last_update_s = now_s;

  const ZoneSet zones = compute_zone_set(vehicle.kin, p);
  return assess_target(phone, vehicle.kin, zones, now_s, p, mc);
}

CollisionMonitor::CollisionMonitor(MonitorRole role, SafetyParams params, awareness::MapConfig map_config)
    : role_(role), params_(params), map_config_(map_config) {
  params_.validate();
}

EvaluationBatch CollisionMonitor::evaluate(const awareness::RealTimeMap& map, double now_s) {
  EvaluationBatch batch;
  const EntityKind wanted = role_ == MonitorRole::Vehicle ? EntityKind::Vru : EntityKind::Vehicle;
  ZoneSet own_zones;
  if (role_ == MonitorRole::Vehicle) own_zones = compute_zone_set(map.self_kin(), params_);

  auto step = [&](TempId id, const Assessment& a) {
    WarningState& st = states_[id];
    const WarningState next = detect_collision(st, a.rel, a.zones);
    if (next.level != st.level) {
      batch.events.push_back(
          {now_s, id, next.level, st.level, a.label, a.rel.d_lon, a.rel.d_lat, a.zones});
    }
    st = next;
    return next;
  };

  for (const auto& [id, r] : map.records()) {
    if (r.kind != wanted) continue;
    const Assessment a = role_ == MonitorRole::Vehicle
                             ? assess_target(r, map.self_kin(), own_zones, now_s, params_, map_config_)
                             : assess_from_phone(r, map.self_kin(), now_s, params_, map_config_);
    batch.evaluations.push_back({a, step(id, a)});
  }

  // Targets no longer in the map are evaluated as Safe so their latch runs out.
  for (auto it = states_.begin(); it != states_.end();) {
    const MapRecord* r = map.find(it->first);
    if (r != nullptr && r->kind == wanted) {
      ++it;
      continue;
    }
    Assessment gone;
    gone.target = it->first;
    gone.rel = {0.0, -1.0};
    const WarningState next = step(it->first, gone);
    if (next.level == WarningLevel::None) {
      it = states_.erase(it);
    } else {
      ++it;
    }
  }
  return batch;
}

WarningLevel CollisionMonitor::level(TempId target) const {
  auto it = states_.find(target);
  return it == states_.end() ? WarningLevel::None : it->second.level;
}

WarningLevel CollisionMonitor::max_level() const {
  WarningLevel m = WarningLevel::None;
  for (const auto& [id, st] : states_) m = std::max(m, st.level);
  return m;
}

}  // namespace v2p::safety
