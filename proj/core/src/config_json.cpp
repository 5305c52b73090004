#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "v2p/error.hpp"
#include "v2p/scenario.hpp"

namespace v2p::scenario {

namespace {

using Json = nlohmann::ordered_json;

// Each config struct lists its fields once; the same list drives both the
// writer and the strict reader.

template <class V>
void fields(V& v, geo::GeodeticPosition& p) {
  v("lat_deg", p.lat_deg);
  v("lon_deg", p.lon_deg);
  v("elev_m", p.elev_m);
}

template <class V>
void fields(V& v, safety::SafetyParams& p) {
  v("t_drd", p.t_drd);
  v("t_guard", p.t_guard);
  v("t_mod", p.t_mod);
  v("d_mod", p.d_mod);
  v("dmax_c0", p.dmax_c0);
  v("dmax_c1", p.dmax_c1);
  v("lane_width", p.lane_width);
  v("yaw_rate_min", p.yaw_rate_min);
  v("max_lookahead_s", p.max_lookahead_s);
}

template <class V>
void fields(V& v, safety::DiscriminationConfig& p) {
  v("pedestrian_max_mps", p.pedestrian_max_mps);
  v("cyclist_max_mps", p.cyclist_max_mps);
  v("smoothing_window_s", p.smoothing_window_s);
  v("min_history_s", p.min_history_s);
  v("co_moving_distance_m", p.co_moving_distance_m);
  v("co_moving_time_s", p.co_moving_time_s);
  v("road_dwell_s", p.road_dwell_s);
}

template <class V>
void fields(V& v, awareness::MapConfig& p) {
  v("expiry_s", p.expiry_s);
  v("history_min_distance_m", p.history_min_distance_m);
  v("history_min_heading_deg", p.history_min_heading_deg);
  v("history_capacity", p.history_capacity);
  v("prediction_horizon_s", p.prediction_horizon_s);
  v("prediction_step_s", p.prediction_step_s);
  v("stationary_speed_mps", p.stationary_speed_mps);
  v("straight_yaw_rate_rps", p.straight_yaw_rate_rps);
  v("speed_sample_window_s", p.speed_sample_window_s);
}

template <class V>
void fields(V& v, channel::RadioConfig& p) {
  v("tx_power_dbm", p.tx_power_dbm);
  v("bitrate_bps", p.bitrate_bps);
  v("bandwidth_hz", p.bandwidth_hz);
  v("aifsn", p.aifsn);
  v("cw", p.cw);
  v("slot_time_us", p.slot_time_us);
  v("sifs_us", p.sifs_us);
  v("cca_threshold_dbm", p.cca_threshold_dbm);
  v("rx_sensitivity_dbm", p.rx_sensitivity_dbm);
  v("sinr_threshold_db", p.sinr_threshold_db);
  v("preamble_us", p.preamble_us);
  v("noise_floor_dbm", p.noise_floor_dbm);
  v("backoff_when_idle", p.backoff_when_idle);
}

template <class V>
void fields(V& v, channel::PropagationConfig& p) {
  v("pl0_db", p.pl0_db);
  v("exponent", p.exponent);
  v("ref_distance_m", p.ref_distance_m);
  v("min_distance_m", p.min_distance_m);
  v("shadowing_sigma_db", p.shadowing_sigma_db);
}

template <class V>
void fields(V& v, policy::GeoPolygon& p) {
  v("vertices", p.vertices);
}

template <class V>
void fields(V& v, policy::PolicyConfig& p) {
  v("power_control_on", p.power_control_on);
  v("congestion_control_on", p.congestion_control_on);
  v("gyro_variance_threshold", p.gyro_variance_threshold);
  v("stationary_dwell_s", p.stationary_dwell_s);
  v("nearby_radius_m", p.nearby_radius_m);
  v("approach_radius_m", p.approach_radius_m);
  v("approach_horizon_s", p.approach_horizon_s);
  v("slow_speed_mps", p.slow_speed_mps);
  v("fast_speed_mps", p.fast_speed_mps);
  v("slow_rate_hz", p.slow_rate_hz);
  v("mid_rate_hz", p.mid_rate_hz);
  v("fast_rate_hz", p.fast_rate_hz);
  v("fixed_rate_hz", p.fixed_rate_hz);
  v("baseline_power_dbm", p.baseline_power_dbm);
  v("reduced_power_dbm", p.reduced_power_dbm);
  v("density_vru_threshold", p.density_vru_threshold);
  v("density_vehicle_threshold", p.density_vehicle_threshold);
  v("high_risk_rate_hz", p.high_risk_rate_hz);
  v("high_risk_power_dbm", p.high_risk_power_dbm);
  v("full_fix_rate_hz", p.full_fix_rate_hz);
  v("stationary_fix_rate_hz", p.stationary_fix_rate_hz);
  v("co_moving_distance_m", p.co_moving_distance_m);
  v("co_moving_time_s", p.co_moving_time_s);
  v("in_vehicle_min_speed_mps", p.in_vehicle_min_speed_mps);
  v("buildings", p.buildings);
  v("parks", p.parks);
}

template <class V>
void fields(V& v, policy::PowerDraws& p) {
  v("gps_mw", p.gps_mw);
  v("rx_mw", p.rx_mw);
  v("tx_mw", p.tx_mw);
  v("full_fix_rate_hz", p.full_fix_rate_hz);
}

template <class V>
void fields(V& v, MotionPhase& p) {
  v("start_s", p.start_s);
  v("accel_mps2", p.accel_mps2);
  v("yaw_rate_rps", p.yaw_rate_rps);
}

template <class V>
void fields(V& v, Corridor& p) {
  v("a", p.a);
  v("b", p.b);
}

template <class V>
void fields(V& v, ActorConfig& p) {
  v("id", p.id);
  v("kind", p.kind);
  v("user_type", p.user_type);
  v("position", p.position);
  v("heading_deg", p.heading_deg);
  v("speed_mps", p.speed_mps);
  v("max_speed_mps", p.max_speed_mps);
  v("phases", p.phases);
  v("corridor", p.corridor);
  v("radio_on", p.radio_on);
  v("high_risk", p.high_risk);
  v("gps_signal", p.gps_signal);
  v("position_noise_m", p.position_noise_m);
}

template <class V>
void fields(V& v, RoadConfig& p) {
  v("start", p.start);
  v("heading_deg", p.heading_deg);
  v("length_m", p.length_m);
  v("lane_width_m", p.lane_width_m);
  v("lanes", p.lanes);
  v("intersection", p.intersection);
  v("sidewalk_offset_m", p.sidewalk_offset_m);
}

template <class V>
void fields(V& v, ScenarioConfig& p) {
  v("kind", p.kind);
  v("seed", p.seed);
  v("duration_s", p.duration_s);
  v("app_tick_s", p.app_tick_s);
  v("origin", p.origin);
  v("road", p.road);
  v("actors", p.actors);
  v("safety", p.safety);
  v("discrimination", p.discrimination);
  v("map", p.map);
  v("vehicle_radio", p.vehicle_radio);
  v("phone_radio", p.phone_radio);
  v("propagation", p.propagation);
  v("policy", p.policy);
  v("power_draws", p.power_draws);
  v("bsm_on_air_bytes", p.bsm_on_air_bytes);
  v("psm_on_air_bytes", p.psm_on_air_bytes);
  v("vehicle_tx_rate_hz", p.vehicle_tx_rate_hz);
  v("per_bin_width_m", p.per_bin_width_m);
  v("braking_response", p.braking_response);
  v("trace_map_snapshots", p.trace_map_snapshots);
  v("conflict_point", p.conflict_point);
  v("conflict_time_s", p.conflict_time_s);
}

// Enum <-> string.
std::string enum_name(ScenarioKind k) { return to_string(k); }
std::string enum_name(ActorKind k) { return to_string(k); }
std::string enum_name(messages::UserType t) { return messages::to_string(t); }

void parse_enum(const std::string& s, ScenarioKind& out) { out = parse_kind(s); }
void parse_enum(const std::string& s, ActorKind& out) {
  if (s == "vehicle") {
    out = ActorKind::Vehicle;
  } else if (s == "vru") {
    out = ActorKind::Vru;
  } else {
    throw ConfigError("unknown actor kind '" + s + "'");
  }
}
void parse_enum(const std::string& s, messages::UserType& out) {
  for (int i = 0; i <= 4; ++i) {
    const auto t = static_cast<messages::UserType>(i);
    if (s == messages::to_string(t)) {
      out = t;
      return;
    }
  }
  throw ConfigError("unknown user type '" + s + "'");
}

template <class T>
Json write(const T& value);

struct Writer {
  Json& obj;
  template <class T>
  void operator()(const char* key, const T& value) {
    obj[key] = write(value);
  }
};

template <class T>
Json write(const T& value) {
  if constexpr (std::is_enum_v<T>) {
    return enum_name(value);
  } else if constexpr (std::is_arithmetic_v<T>) {
    return value;
  } else if constexpr (requires { value.has_value(); }) {
    return value ? write(*value) : Json(nullptr);
  } else if constexpr (requires { value.begin(); value.size(); }) {
    Json arr = Json::array();
    for (const auto& e : value) arr.push_back(write(e));
    return arr;
  } else {
    Json obj = Json::object();
    Writer w{obj};
    T copy = value;
    fields(w, copy);
    return obj;
  }
}

template <class T>
void read(const Json& j, T& out, const std::string& path);

struct Reader {
  const Json& obj;
  std::string path;
  std::set<std::string> seen;
  template <class T>
  void operator()(const char* key, T& out) {
    seen.insert(key);
    auto it = obj.find(key);
    if (it != obj.end()) read(*it, out, path + "." + key);
  }
};

template <class T>
void read(const Json& j, T& out, const std::string& path) {
  auto fail = [&](const std::string& what) { throw ConfigError(path + ": " + what); };
  if constexpr (std::is_enum_v<T>) {
    if (!j.is_string()) fail("expected a string");
    try {
      parse_enum(j.get<std::string>(), out);
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) fail("expected true or false");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) fail("expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (j.is_number_unsigned()) {
        const auto v = j.get<std::uint64_t>();
        if (v > std::numeric_limits<T>::max()) fail("integer out of range");
        out = static_cast<T>(v);
      } else {
        fail("expected a nonnegative integer");
      }
    } else {
      const auto v = j.get<std::int64_t>();
      if (v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max()) fail("integer out of range");
      out = static_cast<T>(v);
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) fail("expected a number");
    out = j.get<double>();
  } else if constexpr (requires { out.has_value(); out.emplace(); }) {
    if (j.is_null()) {
      out.reset();
    } else {
      read(j, out.emplace(), path);
    }
  } else if constexpr (requires { out.push_back(out.front()); }) {
    if (!j.is_array()) fail("expected an array");
    out.clear();
    out.resize(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) read(j[i], out[i], path + "[" + std::to_string(i) + "]");
  } else {
    if (!j.is_object()) fail("expected an object");
    Reader r{j, path, {}};
    fields(r, out);
    for (const auto& [key, value] : j.items()) {
      if (!r.seen.count(key)) fail("unknown key '" + key + "'");
    }
  }
}

}  // namespace

std::string to_json(const ScenarioConfig& c) { return write(c).dump(2) + "\n"; }

ScenarioConfig config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  ScenarioConfig c;
  read(j, c, "config");
  c.validate();
  return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const ScenarioConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << to_json(c);
  if (!os.flush()) throw IoError("write failed: " + path.string());
}

}  // namespace v2p::scenario
