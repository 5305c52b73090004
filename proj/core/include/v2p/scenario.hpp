#pragma once

// Scenario library and the deterministic simulation loop that ties motion,
// messaging, the channel, awareness, safety and the phone policies together,
// plus CSV / JSON output.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "v2p/channel.hpp"
#include "v2p/messages.hpp"
#include "v2p/policy.hpp"
#include "v2p/safety.hpp"

namespace v2p::scenario {

using messages::TempId;

enum class ScenarioKind { Crossing, RightTurn, LeftTurn, AlongRoad, Congestion, Custom };

const char* to_string(ScenarioKind k);
/// Accepts "crossing", "right-turn", "left-turn", "along-road", "congestion", "custom".
ScenarioKind parse_kind(const std::string& s);

enum class ActorKind { Vehicle, Vru };

const char* to_string(ActorKind k);

/// From start_s on, the actor runs at this longitudinal acceleration and yaw
/// rate (counter-clockwise positive) until the next phase.
struct MotionPhase {
  double start_s = 0.0;
  double accel_mps2 = 0.0;
  double yaw_rate_rps = 0.0;

  bool operator==(const MotionPhase&) const = default;
};

/// Straight segment the actor walks back and forth on, turning around at the ends.
struct Corridor {
  geo::GeodeticPosition a{};
  geo::GeodeticPosition b{};

  bool operator==(const Corridor&) const = default;
};

struct ActorConfig {
  TempId id = 0;
  ActorKind kind = ActorKind::Vru;
  messages::UserType user_type = messages::UserType::Pedestrian;  // VRUs only
  geo::GeodeticPosition position{};
  double heading_deg = 0.0;
  double speed_mps = 0.0;
  double max_speed_mps = 70.0;
  std::vector<MotionPhase> phases;
  std::optional<Corridor> corridor;
  bool radio_on = true;
  bool high_risk = false;
  bool gps_signal = true;
  double position_noise_m = 0.0;  // std dev of reported east/north error

  bool operator==(const ActorConfig&) const = default;
};

/// Straight road: `start` is the centre of the carriageway at one end and the
/// road runs `length_m` along `heading_deg`.
struct RoadConfig {
  geo::GeodeticPosition start{};
  double heading_deg = 0.0;
  double length_m = 0.0;
  double lane_width_m = 3.5;
  int lanes = 2;
  bool intersection = false;
  double sidewalk_offset_m = 2.0;

  bool operator==(const RoadConfig&) const = default;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::Custom;
  geo::GeodeticPosition origin{39.6480, -79.9700, 300.0};
  RoadConfig road{};
  std::vector<ActorConfig> actors;

  safety::SafetyParams safety{};
  safety::DiscriminationConfig discrimination{};
  awareness::MapConfig map{};
  channel::RadioConfig vehicle_radio = channel::RadioConfig::vehicle();
  channel::RadioConfig phone_radio = channel::RadioConfig::phone();
  channel::PropagationConfig propagation{};
  policy::PolicyConfig policy{};
  policy::PowerDraws power_draws{};

  std::size_t bsm_on_air_bytes = 300;
  std::size_t psm_on_air_bytes = 100;
  int vehicle_tx_rate_hz = 10;
  double per_bin_width_m = 50.0;

  double duration_s = 20.0;
  std::uint64_t seed = 1;
  double app_tick_s = 0.1;

  /// Vehicles brake at d_mod from their first advisory on.
  bool braking_response = false;
  bool trace_map_snapshots = false;

  std::optional<geo::GeodeticPosition> conflict_point;
  std::optional<double> conflict_time_s;

  /// Throws ConfigError.
  void validate() const;

  bool operator==(const ScenarioConfig&) const = default;
};

std::string to_json(const ScenarioConfig& c);
/// Throws ConfigError on malformed input, unknown keys or invalid values.
ScenarioConfig config_from_json(const std::string& text);
ScenarioConfig load_config(const std::filesystem::path& path);
void save_config(const ScenarioConfig& c, const std::filesystem::path& path);

struct ScenarioOverrides {
  std::optional<double> speed_kmh;
  std::optional<double> start_distance_m;  // vehicle path length to the conflict point
  std::optional<double> duration_s;
  std::optional<std::uint64_t> seed;
  std::optional<int> pedestrians;
  std::optional<int> vehicles;
  std::optional<double> ped_speed_mps;
  std::optional<double> ped_lane_offset_m;  // along-road: distance outside the lane edge
  std::optional<double> turn_radius_m;
  std::optional<bool> congestion_control;
  std::optional<bool> power_control;
  std::optional<bool> braking_response;
  std::optional<bool> radios_on;
};

/// Canonical geometries. Crash scenarios are conflict-timed: without any
/// reaction the vehicle centre and the pedestrian reach the conflict point at
/// the same instant. Throws ConfigError for invalid overrides.
ScenarioConfig build_scenario(ScenarioKind kind, const ScenarioOverrides& overrides = {});

/// Desk-scale congestion scene (100 pedestrians, 20 s) used by default in tests.
ScenarioConfig desk_congestion(std::uint64_t seed, bool policies_on);

struct TraceRecord {
  double time_s = 0.0;
  std::string type;  // tx, drops, warning, policy, map
  TempId device = 0;
  std::string detail;
};

class TraceLog {
 public:
  void add(double time_s, std::string type, TempId device, std::string detail);
  const std::vector<TraceRecord>& records() const { return records_; }
  void write_csv(std::ostream& os) const;

 private:
  std::vector<TraceRecord> records_;
};

struct WarningRecord {
  TempId device = 0;
  safety::MonitorRole role = safety::MonitorRole::Vehicle;
  safety::WarningEvent event{};
};

struct ZoneTraceRow {
  double time_s = 0.0;
  TempId device = 0;
  safety::MonitorRole role = safety::MonitorRole::Vehicle;
  TempId target = 0;
  double d_lon = 0.0;
  double d_lat = 0.0;
  safety::ZoneSet zones{};
  safety::ZoneLabel label = safety::ZoneLabel::Safe;
  safety::WarningLevel level = safety::WarningLevel::None;
};

struct RelPathRow {
  double time_s = 0.0;
  double x_m = 0.0;
  double y_m = 0.0;
  /// Zone label from the observer's assessment; empty when the observer has
  /// no record of the other party (x/y are then ground truth).
  std::optional<safety::ZoneLabel> zone;
};

struct EnergyRow {
  TempId device = 0;
  policy::EnergyLedger ledger{};
};

struct RunSummary {
  std::optional<double> first_advisory_time_s;
  std::optional<double> first_advisory_d_lon_m;
  std::optional<double> first_advisory_conflict_distance_m;
  std::optional<double> first_imminent_time_s;
  std::optional<double> first_imminent_d_lon_m;
  std::optional<double> first_imminent_conflict_distance_m;
  std::optional<double> phone_first_imminent_time_s;
  double min_separation_m = std::numeric_limits<double>::infinity();
  double min_separation_time_s = 0.0;
  std::optional<double> conflict_time_s;
  std::uint64_t warnings = 0;
  std::uint64_t transmissions = 0;
  std::uint64_t deliveries = 0;
  std::uint64_t stale_drops = 0;
  channel::DropCauses drops{};
  double mean_cbp = 0.0;
  double wall_time_s = 0.0;  // not written to deterministic outputs
};

struct RunResult {
  ScenarioKind kind = ScenarioKind::Custom;
  double duration_s = 0.0;
  double app_tick_s = 0.1;
  double per_bin_width_m = 50.0;
  std::vector<TempId> actor_ids;  // indexed by channel node id
  std::vector<ActorKind> actor_kinds;
  std::vector<WarningRecord> warnings;
  std::vector<ZoneTraceRow> dts_trace;
  std::vector<RelPathRow> relpath_vehicle;  // first VRU seen from the first vehicle
  std::vector<RelPathRow> relpath_phone;    // first vehicle seen from the first VRU
  channel::ChannelMetrics channel{};
  std::vector<EnergyRow> energy;  // VRU devices, by id
  RunSummary summary{};
  TraceLog trace;

  /// Mean CBP over devices for each 1 s window.
  std::map<int, double> mean_cbp_by_window() const;
};

/// Runs the scenario to completion. Deterministic for a given config.
RunResult run(const ScenarioConfig& config);

/// Writes relpath_vehicle.csv, relpath_phone.csv, dts_trace.csv, per.csv,
/// cbp.csv, warnings.csv, energy.csv, trace.csv and summary.json. Throws
/// IoError when the directory cannot be created or written.
void emit_outputs(const RunResult& result, const std::filesystem::path& out_dir);

/// Summary as JSON text (what summary.json holds).
std::string summary_json(const RunResult& result);

/// Paired comparison of control-off and control-on runs of the same scenes.
struct AbWindow {
  int window = 0;
  double cbp_off = 0.0;
  double cbp_on = 0.0;
};

struct AbBin {
  int bin = 0;
  channel::PerBin off{};
  channel::PerBin on{};
};

struct AbEnergy {
  TempId device = 0;
  std::uint64_t seed = 0;
  policy::EnergyLedger off{};
  policy::EnergyLedger on{};
};

struct AbReport {
  double bin_width_m = 50.0;
  std::vector<std::uint64_t> seeds;
  /// Per seed, per window mean CBP (seed index -> windows).
  std::vector<std::vector<AbWindow>> cbp;
  /// Vehicle-to-VRU PER pooled over seeds.
  std::vector<AbBin> per;
  std::vector<AbEnergy> energy;
};

/// Runs `off` and `on` for every seed (configs are rebuilt by `make`), in up
/// to `jobs` worker threads. Each worker owns its runs; nothing is shared.
AbReport run_ab(const std::function<ScenarioConfig(std::uint64_t seed, bool on)>& make,
                const std::vector<std::uint64_t>& seeds, unsigned jobs = 1);

void write_ab_outputs(const AbReport& report, const std::filesystem::path& out_dir);
void print_ab_table(const AbReport& report, std::ostream& os);

/// Sender-side message counter: 0..127 then wraps.
class MsgCounter {
 public:
  std::uint8_t next() {
    const std::uint8_t c = value_;
    value_ = static_cast<std::uint8_t>((value_ + 1) % 128);
    return c;
  }

 private:
  std::uint8_t value_ = 0;
};

}  // namespace v2p::scenario
