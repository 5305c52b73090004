#include "v2p/awareness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace v2p::awareness {

const char* to_string(EntityKind k) { return k == EntityKind::Vehicle ? "vehicle" : "vru"; }

const char* to_string(VruClass c) {
  switch (c) {
    case VruClass::Unknown: return "unknown";
    case VruClass::Pedestrian: return "pedestrian";
    case VruClass::Cyclist: return "cyclist";
    case VruClass::Motorcyclist: return "motorcyclist";
    case VruClass::PublicSafetyWorker: return "public-safety-worker";
    case VruClass::InVehicle: return "in-vehicle";
    case VruClass::Animal: return "animal";
  }
  return "?";
}

std::uint16_t dsecond_at(double t_s) {
  const long long ms = std::llround(t_s * 1000.0);
  return static_cast<std::uint16_t>(((ms % 60000) + 60000) % 60000);
}

double message_time(double now_s, std::uint16_t dsecond) {
  const long long now_ms = std::llround(now_s * 1000.0);
  const long long now_ds = ((now_ms % 60000) + 60000) % 60000;
  const long long age = ((now_ds - dsecond) % 60000 + 60000) % 60000;
  return static_cast<double>(now_ms - age) / 1000.0;
}

RealTimeMap::RealTimeMap(MapConfig config) : config_(config) {}

void RealTimeMap::update_self(const geo::GeodeticPosition& position, double heading_deg,
                              const KinematicState& kin, double /*now_s*/) {
  self_position_ = position;
  self_heading_deg_ = heading_deg;
  self_kin_ = kin;
  frame_ = geo::LocalTangentFrame(position);
  const double h = geo::deg_to_rad(heading_deg);
  sin_heading_ = std::sin(h);
  cos_heading_ = std::cos(h);
  for (auto& [id, r] : records_) refresh_local_views(r);
}

geo::LocalFramePoint RealTimeMap::to_local(const geo::EcefPosition& p) const {
  const geo::EnuPosition e = frame_.to_enu(p);
  return {e.east_m * sin_heading_ + e.north_m * cos_heading_,
          -e.east_m * cos_heading_ + e.north_m * sin_heading_};
}

geo::LocalFramePoint RealTimeMap::to_local(const geo::GeodeticPosition& p) const {
  return to_local(geo::geodetic_to_ecef(p));
}

double RealTimeMap::to_local_heading_rad(double compass_heading_deg) const {
  return geo::wrap_pi(geo::deg_to_rad(self_heading_deg_ - compass_heading_deg));
}

void RealTimeMap::refresh_local_views(MapRecord& r) const {
  r.position = to_local(r.ecef);
  r.local_heading_rad = to_local_heading_rad(r.kin.heading_deg);
  r.path_history.resize(r.history_ecef.size());
  for (std::size_t i = 0; i < r.history_ecef.size(); ++i) {
    r.path_history[i] = {r.history_ecef[i].time_s, to_local(r.history_ecef[i].ecef)};
  }
  if (r.update_count >= 2) {
    r.predicted_path =
        predict_path(r, config_.prediction_horizon_s, config_.prediction_step_s, config_);
  } else {
    r.predicted_path.clear();
  }
}

IngestOutcome RealTimeMap::ingest(const messages::Bsm& msg, double now_s) {
  return ingest_common(msg.common, EntityKind::Vehicle, std::nullopt, now_s);
}

IngestOutcome RealTimeMap::ingest(const messages::Psm& msg, double now_s) {
  return ingest_common(msg.common, EntityKind::Vru, msg.user_type, now_s);
}

IngestOutcome RealTimeMap::ingest(const messages::Message& msg, double now_s) {
  return std::visit([&](const auto& m) { return ingest(m, now_s); }, msg);
}

IngestOutcome RealTimeMap::ingest_common(const messages::CommonSafetyFields& c, EntityKind kind,
                                         std::optional<messages::UserType> declared,
                                         double now_s) {
  auto it = records_.find(c.temp_id);
  IngestOutcome outcome = IngestOutcome::Updated;
  if (it == records_.end()) {
    MapRecord fresh;
    fresh.id = c.temp_id;
    fresh.first_seen_s = now_s;
    it = records_.emplace(c.temp_id, std::move(fresh)).first;
    outcome = IngestOutcome::Created;
  } else {
    // dsecond wraps every minute; anything not strictly newer within half a
    // minute is a duplicate or a reordered older message.
    const int diff = ((static_cast<int>(c.dsecond) - it->second.last_dsecond) % 60000 + 60000) % 60000;
    if (diff == 0 || diff > 30000) {
      ++stale_drops_;
      return IngestOutcome::Stale;
    }
  }

  MapRecord& r = it->second;
  r.kind = kind;
  r.declared_type = declared;
  r.geodetic = c.position;
  r.ecef = geo::geodetic_to_ecef(c.position);
  r.kin = {c.speed, c.accel.lon_accel, c.heading_deg, geo::deg_to_rad(c.accel.yaw_rate_dps)};
  r.last_update_s = now_s;
  r.measured_at_s = message_time(now_s, c.dsecond);
  r.last_dsecond = c.dsecond;
  ++r.update_count;

  r.speed_samples.push_back({r.measured_at_s, c.speed});
  const double horizon = r.measured_at_s - config_.speed_sample_window_s;
  r.speed_samples.erase(
      r.speed_samples.begin(),
      std::find_if(r.speed_samples.begin(), r.speed_samples.end(),
                   [&](const SpeedSample& s) { return s.time_s >= horizon; }));

  bool append = r.history_ecef.empty();
  if (!append) {
    const auto& last = r.history_ecef.back();
    const double moved = std::sqrt(std::pow(r.ecef.x_m - last.ecef.x_m, 2) +
                                   std::pow(r.ecef.y_m - last.ecef.y_m, 2) +
                                   std::pow(r.ecef.z_m - last.ecef.z_m, 2));
    const double turned =
        std::fabs(geo::rad_to_deg(geo::wrap_pi(geo::deg_to_rad(c.heading_deg - last.heading_deg))));
    append = moved >= config_.history_min_distance_m || turned >= config_.history_min_heading_deg;
  }
  if (append) {
    r.history_ecef.push_back({r.measured_at_s, r.ecef, c.heading_deg});
    if (r.history_ecef.size() > config_.history_capacity) {
      r.history_ecef.erase(r.history_ecef.begin(),
                           r.history_ecef.begin() +
                               static_cast<std::ptrdiff_t>(r.history_ecef.size() - config_.history_capacity));
    }
  }

  refresh_local_views(r);
  return outcome;
}

std::size_t RealTimeMap::expire_records(double now_s) {
  return std::erase_if(records_, [&](const auto& kv) {
    return now_s - kv.second.last_update_s > config_.expiry_s;
  });
}

const MapRecord* RealTimeMap::find(TempId id) const {
  auto it = records_.find(id);
  return it == records_.end() ? nullptr : &it->second;
}

MapRecord* RealTimeMap::find(TempId id) {
  auto it = records_.find(id);
  return it == records_.end() ? nullptr : &it->second;
}

geo::LocalFramePoint predict_point(const MapRecord& record, double dt_s, const MapConfig& config) {
  const double v = record.kin.speed_mps;
  if (v < config.stationary_speed_mps || dt_s <= 0.0) return record.position;
  const double theta = record.local_heading_rad;
  const double w = record.kin.yaw_rate_rps;
  const auto& p = record.position;
  if (std::fabs(w) < config.straight_yaw_rate_rps) {
    return {p.x_m + v * dt_s * std::cos(theta), p.y_m + v * dt_s * std::sin(theta)};
  }
  const double radius = v / w;  // signed: positive turns left
  const double phi = theta + w * dt_s;
  return {p.x_m + radius * (std::sin(phi) - std::sin(theta)),
          p.y_m - radius * (std::cos(phi) - std::cos(theta))};
}

std::vector<TimedPoint> predict_path(const MapRecord& record, double horizon_s, double step_s,
                                     const MapConfig& config) {
  std::vector<TimedPoint> out;
  const double horizon = std::max(0.0, horizon_s);
  const auto steps = step_s > 0.0 ? static_cast<long>(std::floor(horizon / step_s + 1e-9)) : 0L;
  out.reserve(static_cast<std::size_t>(steps) + 2);
  for (long k = 0; k <= steps; ++k) {
    const double dt = std::min(horizon, static_cast<double>(k) * step_s);
    out.push_back({record.measured_at_s + dt, predict_point(record, dt, config)});
  }
  if (horizon - static_cast<double>(steps) * step_s > 1e-9) {
    out.push_back({record.measured_at_s + horizon, predict_point(record, horizon, config)});
  }
  return out;
}

void write_snapshot(std::ostream& os, const RealTimeMap& map, double now_s, std::uint32_t device_id) {
  char buf[192];
  for (const auto& [id, r] : map.records()) {
    std::snprintf(buf, sizeof buf, "%.3f,%u,%u,%s,%.3f,%.3f,%.3f,%.3f\n", now_s, device_id, id,
                  to_string(r.kind), r.position.x_m, r.position.y_m, r.kin.speed_mps,
                  r.kin.heading_deg);
    os << buf;
  }
}

}  // namespace v2p::awareness
