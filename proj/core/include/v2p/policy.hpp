#pragma once

// Smartphone-side power and congestion control: context flags derived from
// sensors and the real-time map, GPS / radio on-off rules, transmit rate and
// power selection, and duty-cycle energy accounting.

#include <optional>
#include <string>
#include <vector>

#include "v2p/awareness.hpp"
#include "v2p/safety.hpp"

namespace v2p::policy {

/// Closed polygon on the lat/lon plane (vertices in order, not repeated).
struct GeoPolygon {
  std::vector<geo::GeodeticPosition> vertices;

  bool operator==(const GeoPolygon&) const = default;
};

bool contains(const GeoPolygon& polygon, const geo::GeodeticPosition& p);

struct PolicyConfig {
  bool power_control_on = false;
  bool congestion_control_on = false;

  double gyro_variance_threshold = 1e-4;  // (rad/s)^2
  double stationary_dwell_s = 5.0;
  double nearby_radius_m = 500.0;
  double approach_radius_m = 500.0;
  double approach_horizon_s = 5.0;

  // Transmit rate by own speed: below slow_speed, up to fast_speed, above.
  double slow_speed_mps = 3.0;
  double fast_speed_mps = 9.0;
  int slow_rate_hz = 2;
  int mid_rate_hz = 5;
  int fast_rate_hz = 10;
  int fixed_rate_hz = 10;  // used when congestion control is off

  double baseline_power_dbm = 10.0;
  double reduced_power_dbm = 5.0;
  int density_vru_threshold = 50;  // reduce power above this many VRUs...
  int density_vehicle_threshold = 3;  // ...and below this many vehicles

  int high_risk_rate_hz = 10;
  double high_risk_power_dbm = 10.0;

  double full_fix_rate_hz = 10.0;
  double stationary_fix_rate_hz = 1.0;

  // Own-vehicle detection, same thresholds as VRU discrimination.
  double co_moving_distance_m = 3.0;
  double co_moving_time_s = 2.0;
  double in_vehicle_min_speed_mps = 9.0;

  std::vector<GeoPolygon> buildings;
  std::vector<GeoPolygon> parks;

  void validate() const;

  bool operator==(const PolicyConfig&) const = default;
};

struct SensorSnapshot {
  double time_s = 0.0;
  double gyro_variance = 0.0;  // (rad/s)^2 over the recent sample window
  bool gps_signal = true;
  geo::GeodeticPosition position{};  // last known fix
  double speed_mps = 0.0;
};

struct ContextFlags {
  bool stationary = false;
  bool indoor = false;
  bool in_vehicle = false;
  bool no_nearby_vehicles = false;
  bool in_park = false;

  bool operator==(const ContextFlags&) const = default;
};

/// Flags joined by '|', or "none".
std::string to_string(const ContextFlags& f);

struct DeviceContext {
  ContextFlags flags{};
  double own_speed_mps = 0.0;
  int nearby_vehicle_count = 0;
  std::optional<double> nearest_approaching_vehicle_distance_m;
  int nearby_vru_count = 0;
  bool is_high_risk_user = false;
  /// Some vehicle is closer than its own dts_mod.
  bool vehicle_within_dts_mod = false;
};

enum class RadioMode { Off, ListenOnly, TxRx };
const char* to_string(RadioMode m);

struct PolicyState {
  bool gps_on = true;
  double gps_fix_rate_hz = 10.0;
  RadioMode radio_mode = RadioMode::TxRx;
  int tx_rate_hz = 10;
  double tx_power_dbm = 10.0;

  bool operator==(const PolicyState&) const = default;
};

std::string to_string(const PolicyState& s);

/// Tracks the time-dependent parts of the context (gyro quiet time, own-vehicle
/// co-movement) across ticks.
class ContextEvaluator {
 public:
  explicit ContextEvaluator(PolicyConfig config = {}, safety::SafetyParams safety = {},
                            bool high_risk_user = false);

  /// `map` must already be centred on the device's current pose.
  DeviceContext evaluate(const SensorSnapshot& sensors, const awareness::RealTimeMap& map);

 private:
  PolicyConfig config_;
  safety::SafetyParams safety_;
  bool high_risk_;
  std::optional<double> quiet_since_s_;
  std::optional<double> co_moving_since_s_;
  bool in_vehicle_ = false;
};

struct PowerDecision {
  bool gps_on = true;
  double gps_fix_rate_hz = 10.0;
  bool radio_allowed = true;
};

/// GPS and radio go off when indoor, inside a vehicle, or in a park with no
/// vehicles around. A stationary device outdoors keeps a slow GPS fix.
PowerDecision apply_power_policy(const DeviceContext& ctx, const PolicyConfig& cfg);

/// Radio mode, rate and power for a device whose radio is allowed on.
PolicyState apply_congestion_policy(const DeviceContext& ctx, const PolicyConfig& cfg);

/// Both policies combined. With power control on, the GPS fix rate follows
/// the transmit rate (slow fix while only listening or stationary).
PolicyState decide(const DeviceContext& ctx, const PolicyConfig& cfg);

struct PowerDraws {
  double gps_mw = 50.0;  // at full_fix_rate_hz
  double rx_mw = 80.0;
  double tx_mw = 200.0;
  double full_fix_rate_hz = 10.0;

  bool operator==(const PowerDraws&) const = default;
};

struct EnergyLedger {
  double gps_mwh = 0.0;
  double radio_rx_mwh = 0.0;
  double radio_tx_mwh = 0.0;

  double total_mwh() const { return gps_mwh + radio_rx_mwh + radio_tx_mwh; }
};

/// GPS draws in proportion to its fix rate, the receiver for the whole time
/// the radio is on, the transmitter only during airtime.
EnergyLedger account_energy(const EnergyLedger& ledger, const PolicyState& state, double dt_s,
                            double tx_airtime_s, const PowerDraws& draws = {});

}  // namespace v2p::policy
