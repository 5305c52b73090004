#pragma once

// Zone-based VRU collision detection: stopping-distance zones ahead of a
// vehicle, projection of a target onto the vehicle's (straight or circular)
// path, zone labelling, latched advisory/imminent warnings, and a heuristic
// VRU classifier.

#include <functional>
#include <map>
#include <vector>

#include "v2p/awareness.hpp"

namespace v2p::safety {

using awareness::KinematicState;
using awareness::MapRecord;
using awareness::TempId;

struct SafetyParams {
  double t_drd = 2.5;  // driver reaction delay, s
  double t_guard = 1.0;
  double t_mod = 2.0;
  double d_mod = -3.4;  // moderate deceleration, m/s^2
  double dmax_c0 = -5.308;
  double dmax_c1 = -0.086;
  double lane_width = 3.5;
  double yaw_rate_min = 0.01;  // rad/s; below this the path is straight
  /// Upper bound on how far ahead the target's predicted position is taken.
  double max_lookahead_s = 10.0;

  /// Throws InvalidInput when the invariants on the parameters do not hold.
  void validate() const;

  bool operator==(const SafetyParams&) const = default;
};

struct ZoneSet {
  double dts_min = 0.0;
  double dts_guard = 0.0;
  double dts_mod = 0.0;
  double half_width = 0.0;
  double tts_min = 0.0;
};

struct RelativePosition {
  double d_lat = 0.0;  // left positive
  double d_lon = 0.0;  // along the path, forward positive
};

enum class ZoneLabel { Safe, Risk, Danger, UnavoidableCrash };
enum class WarningLevel { None = 0, Advisory = 1, Imminent = 2 };

inline constexpr int kLatchEvaluations = 5;

struct WarningState {
  WarningLevel level = WarningLevel::None;
  int safe_streak = 0;  // consecutive Safe evaluations

  bool operator==(const WarningState&) const = default;
};

const char* to_string(ZoneLabel l);
const char* to_string(WarningLevel l);

/// d_max(v_brk) = c0 + c1 * v_brk. Throws InvalidInput for negative v_brk.
double max_decel(double v_brk, const SafetyParams& p);

/// Speed when braking starts: max(0, v + a * t_drd).
double v_brk(const KinematicState& kin, const SafetyParams& p);

double compute_tts_min(const KinematicState& kin, const SafetyParams& p);

/// Distance covered running freely at `accel` for `t_free` seconds (never
/// reversing), then braking to a stop at `decel`. If the vehicle is already
/// decelerating harder than `decel`, it keeps its own deceleration.
double stopping_distance(double speed, double accel, double t_free, double decel);

double compute_dts_min(const KinematicState& kin, const SafetyParams& p);
ZoneSet compute_zone_set(const KinematicState& kin, const SafetyParams& p);

RelativePosition project_straight(const geo::LocalFramePoint& target);

/// Projection onto the circular path of radius v/|yaw|. Throws InvalidInput
/// when the target sits on the turn centre, where the projection is undefined.
RelativePosition project_curved(const geo::LocalFramePoint& target, const KinematicState& kin,
                                const SafetyParams& p);

/// Chooses straight or curved projection from the yaw rate. A target on the
/// turn centre is reported at d_lon 0, one radius off the path.
RelativePosition project(const geo::LocalFramePoint& target, const KinematicState& kin,
                         const SafetyParams& p);

ZoneLabel classify_target(const RelativePosition& rel, const ZoneSet& zones);

WarningState detect_collision(const WarningState& prev, const RelativePosition& rel,
                              const ZoneSet& zones);

struct DiscriminationConfig {
  double pedestrian_max_mps = 3.0;
  double cyclist_max_mps = 9.0;
  double smoothing_window_s = 1.0;
  double min_history_s = 1.0;
  double co_moving_distance_m = 3.0;
  double co_moving_time_s = 2.0;
  double road_dwell_s = 30.0;

  bool operator==(const DiscriminationConfig&) const = default;
};

awareness::VruClass from_user_type(messages::UserType t);

/// Explicit PSM user type wins; otherwise speed thresholds on the smoothed
/// track speed, refined by co-movement with a vehicle and by road dwell time.
awareness::VruClass discriminate_vru(const MapRecord& record, double now_s,
                                     const DiscriminationConfig& cfg = {});

/// Refreshes co-movement and on-road timers for every VRU record and stores
/// the resulting class in MapRecord::vru_class. `on_road` may be empty.
void update_track_context(awareness::RealTimeMap& map, double now_s, const DiscriminationConfig& cfg,
                          const std::function<bool(const geo::GeodeticPosition&)>& on_road = {});

struct Assessment {
  TempId target = 0;
  geo::LocalFramePoint predicted{};  // target position used for classification
  double lookahead_s = 0.0;
  RelativePosition rel{};
  ZoneSet zones{};
  ZoneLabel label = ZoneLabel::Safe;
};

/// Classifies one target against a vehicle sitting at the frame origin with
/// kinematics `vehicle`. The target is taken at its predicted position when
/// the vehicle reaches it along the path (bounded by max_lookahead_s).
Assessment assess_target(const MapRecord& target, const KinematicState& vehicle, const ZoneSet& zones,
                         double now_s, const SafetyParams& p, const awareness::MapConfig& mc = {});

/// The phone-side check: re-expresses the phone (the frame origin, with its
/// own kinematics) in the frame of a vehicle record and runs assess_target
/// from the vehicle's point of view.
Assessment assess_from_phone(const MapRecord& vehicle, const KinematicState& phone_kin, double now_s,
                             const SafetyParams& p, const awareness::MapConfig& mc = {});

struct WarningEvent {
  double time_s = 0.0;
  TempId target = 0;
  WarningLevel level = WarningLevel::None;
  WarningLevel previous = WarningLevel::None;
  ZoneLabel label = ZoneLabel::Safe;
  double d_lon = 0.0;
  double d_lat = 0.0;
  ZoneSet zones{};
};

struct Evaluation {
  Assessment assessment{};
  WarningState state{};
};

struct EvaluationBatch {
  std::vector<Evaluation> evaluations;
  std::vector<WarningEvent> events;
};

enum class MonitorRole { Vehicle, Phone };

/// Per-device warning state across targets. A vehicle evaluates every VRU in
/// its map; a phone evaluates every vehicle. Targets that vanish from the map
/// count as Safe until their latch releases.
class CollisionMonitor {
 public:
  CollisionMonitor(MonitorRole role, SafetyParams params = {}, awareness::MapConfig map_config = {});

  EvaluationBatch evaluate(const awareness::RealTimeMap& map, double now_s);

  WarningLevel level(TempId target) const;
  WarningLevel max_level() const;
  MonitorRole role() const { return role_; }
  const SafetyParams& params() const { return params_; }

 private:
  MonitorRole role_;
  SafetyParams params_;
  awareness::MapConfig map_config_;
  std::map<TempId, WarningState> states_;
};

}  // namespace v2p::safety
