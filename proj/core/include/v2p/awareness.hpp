#pragma once

// Situational awareness: the per-device real-time map of neighbours, kept in
// the device's heading-aligned local frame, plus track history and
// constant-speed / constant-yaw-rate path prediction.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <vector>

#include "v2p/geo.hpp"
#include "v2p/messages.hpp"

namespace v2p::awareness {

using messages::TempId;

struct KinematicState {
  double speed_mps = 0.0;
  double accel_mps2 = 0.0;  // longitudinal, signed
  double heading_deg = 0.0;  // compass
  double yaw_rate_rps = 0.0;  // counter-clockwise positive
};

enum class EntityKind { Vehicle, Vru };

enum class VruClass { Unknown, Pedestrian, Cyclist, Motorcyclist, PublicSafetyWorker, InVehicle, Animal };

const char* to_string(EntityKind k);
const char* to_string(VruClass c);

struct TimedPoint {
  double time_s = 0.0;
  geo::LocalFramePoint point{};
};

struct SpeedSample {
  double time_s = 0.0;
  double speed_mps = 0.0;
};

struct MapConfig {
  double expiry_s = 1.0;
  double history_min_distance_m = 1.0;
  double history_min_heading_deg = 5.0;
  std::size_t history_capacity = 23;
  double prediction_horizon_s = 5.0;
  double prediction_step_s = 0.1;
  double stationary_speed_mps = 0.1;
  double straight_yaw_rate_rps = 0.01;
  double speed_sample_window_s = 2.0;

  bool operator==(const MapConfig&) const = default;
};

struct MapRecord {
  TempId id = 0;
  EntityKind kind = EntityKind::Vru;
  VruClass vru_class = VruClass::Unknown;
  geo::LocalFramePoint position{};
  /// Heading of the target in the local frame, radians CCW from +x.
  double local_heading_rad = 0.0;
  KinematicState kin{};
  double last_update_s = 0.0;  // reception time
  double measured_at_s = 0.0;  // sender timestamp (from dsecond)
  double first_seen_s = 0.0;
  int update_count = 0;
  std::vector<TimedPoint> path_history;    // oldest first
  std::vector<TimedPoint> predicted_path;  // empty until the track is established

  // Tracking state. Positions are retained in ECEF so the local views above
  // can be re-derived exactly whenever the host pose changes.
  geo::GeodeticPosition geodetic{};
  geo::EcefPosition ecef{};
  std::uint16_t last_dsecond = 0;
  std::optional<messages::UserType> declared_type;
  std::vector<SpeedSample> speed_samples;
  std::optional<double> co_moving_since_s;
  std::optional<double> on_road_since_s;

  struct HistoryEntry {
    double time_s;
    geo::EcefPosition ecef;
    double heading_deg;
  };
  std::vector<HistoryEntry> history_ecef;
};

enum class IngestOutcome { Created, Updated, Stale };

/// Milliseconds within the current minute for simulation time `t`; the
/// simulation clock starts on a minute boundary.
std::uint16_t dsecond_at(double t_s);
/// Latest simulation time not after `now_s` whose dsecond equals `dsecond`.
double message_time(double now_s, std::uint16_t dsecond);

class RealTimeMap {
 public:
  explicit RealTimeMap(MapConfig config = {});

  /// Moves the frame origin to the new self pose and re-projects every record.
  void update_self(const geo::GeodeticPosition& position, double heading_deg,
                   const KinematicState& kin, double now_s);

  IngestOutcome ingest(const messages::Bsm& msg, double now_s);
  IngestOutcome ingest(const messages::Psm& msg, double now_s);
  IngestOutcome ingest(const messages::Message& msg, double now_s);

  /// Drops records not refreshed within the expiry horizon. Returns how many.
  std::size_t expire_records(double now_s);

  const geo::GeodeticPosition& self_position() const { return self_position_; }
  double self_heading_deg() const { return self_heading_deg_; }
  const KinematicState& self_kin() const { return self_kin_; }
  const MapConfig& config() const { return config_; }

  const std::map<TempId, MapRecord>& records() const { return records_; }
  const MapRecord* find(TempId id) const;
  MapRecord* find(TempId id);
  std::uint64_t stale_drops() const { return stale_drops_; }

  geo::LocalFramePoint to_local(const geo::EcefPosition& p) const;
  geo::LocalFramePoint to_local(const geo::GeodeticPosition& p) const;
  double to_local_heading_rad(double compass_heading_deg) const;

 private:
  IngestOutcome ingest_common(const messages::CommonSafetyFields& c, EntityKind kind,
                              std::optional<messages::UserType> declared, double now_s);
  void refresh_local_views(MapRecord& r) const;

  MapConfig config_;
  geo::GeodeticPosition self_position_{};
  double self_heading_deg_ = 0.0;
  KinematicState self_kin_{};
  geo::LocalTangentFrame frame_;
  double sin_heading_ = 0.0;
  double cos_heading_ = 1.0;
  std::map<TempId, MapRecord> records_;
  std::uint64_t stale_drops_ = 0;
};

/// Position of the target `dt_s` after its last measurement, in the map frame.
geo::LocalFramePoint predict_point(const MapRecord& record, double dt_s, const MapConfig& config = {});

/// Points at multiples of step_s from 0 up to horizon_s (the horizon itself
/// is always the final point). Times are absolute: measured_at_s + offset.
std::vector<TimedPoint> predict_path(const MapRecord& record, double horizon_s, double step_s,
                                     const MapConfig& config = {});

/// One line per record: time,device,id,kind,x,y,v,heading.
void write_snapshot(std::ostream& os, const RealTimeMap& map, double now_s, std::uint32_t device_id);

}  // namespace v2p::awareness
