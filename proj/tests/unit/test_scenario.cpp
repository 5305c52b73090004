#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "v2p/error.hpp"
#include "v2p/scenario.hpp"

using namespace v2p;
using namespace v2p::scenario;
namespace fs = std::filesystem;

namespace {

constexpr double kKmh = 1.0 / 3.6;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("v2p_test_scenario_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

ScenarioOverrides radios_off() {
  ScenarioOverrides o;
  o.radios_on = false;
  return o;
}

const char* kCsvFiles[] = {"relpath_vehicle.csv", "relpath_phone.csv", "dts_trace.csv", "per.csv",
                           "cbp.csv",             "warnings.csv",      "energy.csv",    "trace.csv"};

}  // namespace

TEST_CASE("scenario kinds parse and print") {
  for (auto k : {ScenarioKind::Crossing, ScenarioKind::RightTurn, ScenarioKind::LeftTurn, ScenarioKind::AlongRoad,
                 ScenarioKind::Congestion, ScenarioKind::Custom}) {
    CHECK(parse_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_kind("roundabout"), ConfigError);
}

TEST_CASE("congestion defaults") {
  const ScenarioConfig c = build_scenario(ScenarioKind::Congestion);
  int vehicles = 0, peds = 0;
  for (const auto& a : c.actors) {
    if (a.kind == ActorKind::Vehicle) {
      ++vehicles;
      CHECK(a.speed_mps == doctest::Approx(24.0));
    } else {
      ++peds;
      CHECK(a.speed_mps == doctest::Approx(1.4));
      CHECK(a.corridor.has_value());
    }
  }
  CHECK(vehicles == 4);
  CHECK(peds == 400);
  CHECK(c.duration_s == doctest::Approx(50.0));
  CHECK(c.vehicle_radio.cw == 15);
  CHECK(c.vehicle_radio.aifsn == 7);
  CHECK_FALSE(c.policy.congestion_control_on);

  const ScenarioConfig desk = desk_congestion(3, true);
  CHECK(desk.actors.size() == 104);
  CHECK(desk.duration_s == doctest::Approx(20.0));
  CHECK(desk.policy.congestion_control_on);
  CHECK(desk.policy.power_control_on);
  CHECK(desk.seed == 3);
}

TEST_CASE("crash scenarios are conflict-timed") {
  SUBCASE("crossing at 70 km/h from 300 m") {
    const ScenarioConfig c = build_scenario(ScenarioKind::Crossing);
    REQUIRE(c.conflict_time_s);
    CHECK(*c.conflict_time_s == doctest::Approx(300.0 / (70.0 * kKmh)));
    CHECK(c.duration_s >= *c.conflict_time_s + 5.0 - 1e-9);
  }
  for (auto k : {ScenarioKind::Crossing, ScenarioKind::RightTurn, ScenarioKind::LeftTurn}) {
    CAPTURE(to_string(k));
    // Without communication nothing reacts, so the two meet at the conflict point.
    const RunResult r = run(build_scenario(k, radios_off()));
    CHECK(r.summary.min_separation_m < 1.0);
    CHECK(r.summary.min_separation_time_s == doctest::Approx(*r.summary.conflict_time_s).epsilon(0.01));
    CHECK(r.warnings.empty());
    CHECK(r.summary.transmissions == 0);
  }
  SUBCASE("along-road overtakes with clearance") {
    const RunResult r = run(build_scenario(ScenarioKind::AlongRoad, radios_off()));
    // Pedestrian walks 1 m outside a 3.5 m lane; the vehicle drives the lane centre.
    CHECK(r.summary.min_separation_m == doctest::Approx(1.75 + 1.0).epsilon(0.05));
  }
}

TEST_CASE("turn geometry follows the circular arc") {
  ScenarioOverrides o = radios_off();
  o.turn_radius_m = 15.0;
  o.speed_kmh = 18.0;
  const ScenarioConfig c = build_scenario(ScenarioKind::RightTurn, o);
  const auto& car = c.actors.front();
  REQUIRE(car.phases.size() == 2);
  const double v = 18.0 * kKmh;
  CHECK(car.phases[0].yaw_rate_rps == doctest::Approx(-v / 15.0));
  // A quarter turn at v/R takes (pi/2) R / v.
  CHECK(car.phases[1].start_s - car.phases[0].start_s == doctest::Approx(geo::kPi / 2.0 * 15.0 / v));
  const RunResult r = run(c);
  CHECK(r.summary.min_separation_m < 1.0);
}

TEST_CASE("warnings in the crossing scenario") {
  const ScenarioConfig c = build_scenario(ScenarioKind::Crossing);
  const RunResult r = run(c);
  const double v = 70.0 * kKmh;
  const auto zones = safety::compute_zone_set({v, 0.0, 0.0, 0.0}, c.safety);
  const auto& s = r.summary;
  REQUIRE(s.first_advisory_time_s);
  REQUIRE(s.first_imminent_time_s);
  // Each first warning lands within one tick of travel inside its zone boundary.
  const double step = v * c.app_tick_s;
  CHECK(*s.first_advisory_d_lon_m <= zones.dts_mod);
  CHECK(*s.first_advisory_d_lon_m > zones.dts_mod - step);
  CHECK(std::fabs(*s.first_imminent_d_lon_m - 95.14) <= 1.95);
  CHECK(*s.first_advisory_conflict_distance_m > 160.0);
  CHECK(*s.conflict_time_s - *s.first_advisory_time_s >= 5.0);
  REQUIRE(s.phone_first_imminent_time_s);
  CHECK(*s.phone_first_imminent_time_s <= *s.first_imminent_time_s + c.app_tick_s);
}

TEST_CASE("advisory precedes imminent precedes impact") {
  // Turns are only driven at turning speeds: the arc plus crosswalk is shorter
  // than dts_guard above about 25 km/h, so both levels would fire together.
  for (auto k : {ScenarioKind::Crossing, ScenarioKind::RightTurn, ScenarioKind::LeftTurn}) {
    const bool turn = k != ScenarioKind::Crossing;
    for (double kmh : turn ? std::vector<double>{10.0, 15.0, 20.0} : std::vector<double>{30.0, 50.0, 70.0}) {
      ScenarioOverrides o;
      o.speed_kmh = kmh;
      if (k == ScenarioKind::Crossing) o.start_distance_m = 200.0;
      CAPTURE(to_string(k));
      CAPTURE(kmh);
      const RunResult r = run(build_scenario(k, o));
      const auto& s = r.summary;
      REQUIRE(s.first_advisory_time_s);
      REQUIRE(s.first_imminent_time_s);
      CHECK(*s.first_advisory_time_s < *s.first_imminent_time_s);
      CHECK(*s.first_imminent_time_s < *s.conflict_time_s);
    }
  }
}

TEST_CASE("along-road pedestrian outside the lane raises no warning") {
  const RunResult r = run(build_scenario(ScenarioKind::AlongRoad));
  CHECK(r.summary.warnings == 0);
  CHECK(r.summary.deliveries > 0);
}

TEST_CASE("along-road pedestrian inside the lane is warned about") {
  ScenarioOverrides o;
  o.ped_lane_offset_m = -1.5;  // 0.25 m right of the lane centre
  const RunResult r = run(build_scenario(ScenarioKind::AlongRoad, o));
  REQUIRE(r.summary.first_advisory_time_s);
  REQUIRE(r.summary.first_imminent_time_s);
  CHECK(*r.summary.first_advisory_time_s < *r.summary.first_imminent_time_s);
  CHECK(*r.summary.first_imminent_time_s < *r.summary.conflict_time_s);
}

TEST_CASE("custom scene without pedestrians and with radios off") {
  ScenarioOverrides o;
  o.pedestrians = 0;
  const RunResult lone = run(build_scenario(ScenarioKind::Custom, o));
  CHECK(lone.warnings.empty());
  CHECK(lone.relpath_vehicle.empty());

  const RunResult dark = run(build_scenario(ScenarioKind::Crossing, radios_off()));
  CHECK(dark.warnings.empty());
  CHECK(std::isfinite(dark.summary.min_separation_m));
}

TEST_CASE("braking response avoids the crossing collision") {
  ScenarioOverrides o;
  o.braking_response = true;
  const RunResult r = run(build_scenario(ScenarioKind::Crossing, o));
  REQUIRE(r.summary.first_advisory_time_s);
  // Braking at d_mod from ~162 m stops in v^2 / 6.8 = 55.6 m, well short of the crosswalk.
  CHECK(r.summary.min_separation_m > 50.0);
}

TEST_CASE("corridor walkers stay on their corridor") {
  ScenarioConfig c = build_scenario(ScenarioKind::Custom, radios_off());
  c.actors.front().speed_mps = 0.0;
  c.duration_s = 30.0;
  const geo::LocalTangentFrame frame(c.origin);
  ActorConfig p;
  p.id = 1001;
  p.kind = ActorKind::Vru;
  p.position = frame.to_geodetic({10.0, 5.0, 0.0});
  p.heading_deg = 0.0;
  p.speed_mps = 2.0;
  p.corridor = Corridor{frame.to_geodetic({10.0, 0.0, 0.0}), frame.to_geodetic({10.0, 12.0, 0.0})};
  p.radio_on = false;
  c.actors.push_back(p);
  const RunResult r = run(c);
  REQUIRE(r.relpath_vehicle.size() == 301);
  const auto car = frame.to_enu(c.actors.front().position);
  double lo = 1e9, hi = -1e9;
  for (const auto& row : r.relpath_vehicle) {
    // Vehicle faces north: x is north, y is west.
    const double north = car.north_m + row.x_m;
    const double east = car.east_m - row.y_m;
    CHECK(east == doctest::Approx(10.0).epsilon(1e-6));
    lo = std::min(lo, north);
    hi = std::max(hi, north);
  }
  CHECK(lo >= -1e-6);
  CHECK(hi <= 12.0 + 1e-6);
  CHECK(lo < 0.5);
  CHECK(hi > 11.5);
}

TEST_CASE("energy ledger with the policies off") {
  const ScenarioConfig c = build_scenario(ScenarioKind::Crossing);
  const RunResult r = run(c);
  REQUIRE(r.energy.size() == 1);
  const auto& e = r.energy.front().ledger;
  const double hours = r.duration_s / 3600.0;
  CHECK(e.gps_mwh == doctest::Approx(50.0 * hours));
  CHECK(e.radio_rx_mwh == doctest::Approx(80.0 * hours));
  // 10 Hz on every tick except the final one.
  const auto sent = static_cast<double>(std::lround(r.duration_s / c.app_tick_s));
  const double airtime = channel::to_seconds(c.phone_radio.airtime(c.psm_on_air_bytes));
  CHECK(e.radio_tx_mwh == doctest::Approx(200.0 * sent * airtime / 3600.0));
}

TEST_CASE("outputs") {
  SUBCASE("relpath row count is duration / tick + 1") {
    const RunResult r = run(build_scenario(ScenarioKind::Crossing));
    const fs::path dir = temp_dir("rows");
    emit_outputs(r, dir);
    const auto rows = static_cast<std::size_t>(std::lround(r.duration_s / r.app_tick_s)) + 1;
    CHECK(line_count(dir / "relpath_vehicle.csv") == rows + 1);
    CHECK(line_count(dir / "relpath_phone.csv") == rows + 1);
    CHECK(fs::exists(dir / "summary.json"));
    fs::remove_all(dir);
  }
  SUBCASE("empty result gives header-only CSVs") {
    const fs::path dir = temp_dir("empty");
    emit_outputs(RunResult{}, dir);
    for (const char* f : kCsvFiles) {
      CAPTURE(f);
      CHECK(line_count(dir / f) == 1);
    }
    fs::remove_all(dir);
  }
  SUBCASE("unwritable directory") {
    const fs::path dir = temp_dir("blocked");
    fs::create_directories(dir);
    std::ofstream(dir / "file") << "x";
    CHECK_THROWS_AS(emit_outputs(RunResult{}, dir / "file" / "out"), IoError);
    fs::remove_all(dir);
  }
}

TEST_CASE("imminent warnings agree with the zone trace") {
  for (auto k : {ScenarioKind::Crossing, ScenarioKind::RightTurn, ScenarioKind::LeftTurn}) {
    CAPTURE(to_string(k));
    const RunResult r = run(build_scenario(k));
    int imminent = 0;
    for (const auto& w : r.warnings) {
      if (w.event.level != safety::WarningLevel::Imminent || w.event.previous == safety::WarningLevel::Imminent) {
        continue;
      }
      ++imminent;
      const auto row = std::find_if(r.dts_trace.begin(), r.dts_trace.end(), [&](const ZoneTraceRow& z) {
        return z.device == w.device && z.target == w.event.target && std::fabs(z.time_s - w.event.time_s) < 1e-9;
      });
      REQUIRE(row != r.dts_trace.end());
      CHECK(row->d_lon < row->zones.dts_guard);
      CHECK(row->level == safety::WarningLevel::Imminent);
    }
    CHECK(imminent >= 1);
    for (const auto& z : r.dts_trace) {
      if (z.label == safety::ZoneLabel::Danger || z.label == safety::ZoneLabel::UnavoidableCrash) {
        CHECK(z.level == safety::WarningLevel::Imminent);
      }
    }
  }
}

TEST_CASE("runs are deterministic") {
  auto emit = [](const ScenarioConfig& c, const std::string& name) {
    const fs::path dir = temp_dir(name);
    emit_outputs(run(c), dir);
    return dir;
  };
  SUBCASE("crossing") {
    const ScenarioConfig c = build_scenario(ScenarioKind::Crossing);
    const fs::path a = emit(c, "det_a"), b = emit(c, "det_b");
    for (const char* f : kCsvFiles) {
      CAPTURE(f);
      CHECK(slurp(a / f) == slurp(b / f));
    }
    CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
    fs::remove_all(a);
    fs::remove_all(b);
  }
  SUBCASE("small congestion scene, seed 42") {
    ScenarioOverrides o;
    o.seed = 42;
    o.pedestrians = 30;
    o.duration_s = 4.0;
    const ScenarioConfig c = build_scenario(ScenarioKind::Congestion, o);
    const fs::path a = emit(c, "cong_a"), b = emit(c, "cong_b");
    CHECK(slurp(a / "per.csv") == slurp(b / "per.csv"));
    CHECK(slurp(a / "cbp.csv") == slurp(b / "cbp.csv"));
    CHECK(line_count(a / "cbp.csv") > 1);
    fs::remove_all(a);
    fs::remove_all(b);

    o.seed = 43;
    const fs::path d = emit(build_scenario(ScenarioKind::Congestion, o), "cong_d");
    const fs::path e = emit(c, "cong_e");
    CHECK(slurp(d / "trace.csv") != slurp(e / "trace.csv"));
    fs::remove_all(d);
    fs::remove_all(e);
  }
}

TEST_CASE("congestion control lowers channel load") {
  ScenarioOverrides o;
  o.pedestrians = 40;
  o.duration_s = 6.0;
  o.congestion_control = false;
  const RunResult off = run(build_scenario(ScenarioKind::Congestion, o));
  o.congestion_control = true;
  const RunResult on = run(build_scenario(ScenarioKind::Congestion, o));
  CHECK(on.summary.transmissions < off.summary.transmissions);
  CHECK(on.summary.mean_cbp < off.summary.mean_cbp);
}

TEST_CASE("A/B driver pairs seeds and arms") {
  auto make = [](std::uint64_t seed, bool on) {
    ScenarioOverrides o;
    o.seed = seed;
    o.pedestrians = 20;
    o.duration_s = 3.0;
    o.congestion_control = on;
    o.power_control = on;
    return build_scenario(ScenarioKind::Congestion, o);
  };
  const AbReport serial = run_ab(make, {1, 2}, 1);
  const AbReport threaded = run_ab(make, {1, 2}, 3);
  REQUIRE(serial.cbp.size() == 2);
  CHECK(serial.cbp[0].size() == 3);
  CHECK(serial.energy.size() == 40);
  REQUIRE(serial.per.size() == threaded.per.size());
  for (std::size_t i = 0; i < serial.per.size(); ++i) {
    CHECK(serial.per[i].off.attempted == threaded.per[i].off.attempted);
    CHECK(serial.per[i].on.failed == threaded.per[i].on.failed);
  }
  for (std::size_t i = 0; i < serial.energy.size(); ++i) {
    CHECK(serial.energy[i].on.total_mwh() == threaded.energy[i].on.total_mwh());
  }
  std::ostringstream table;
  print_ab_table(serial, table);
  CHECK(table.str().find("PER") != std::string::npos);
}

TEST_CASE("config JSON") {
  SUBCASE("round trip for every scenario kind") {
    for (auto k : {ScenarioKind::Crossing, ScenarioKind::RightTurn, ScenarioKind::LeftTurn, ScenarioKind::AlongRoad,
                   ScenarioKind::Custom}) {
      CAPTURE(to_string(k));
      const ScenarioConfig c = build_scenario(k);
      CHECK(config_from_json(to_json(c)) == c);
    }
    ScenarioOverrides o;
    o.pedestrians = 5;
    ScenarioConfig c = build_scenario(ScenarioKind::Congestion, o);
    c.policy.parks.push_back({{c.origin, c.actors[0].position, c.actors[1].position}});
    c.actors[4].high_risk = true;
    c.actors[4].user_type = messages::UserType::PublicSafetyWorker;
    CHECK(config_from_json(to_json(c)) == c);
  }
  SUBCASE("file round trip") {
    const fs::path dir = temp_dir("json");
    fs::create_directories(dir);
    const ScenarioConfig c = build_scenario(ScenarioKind::LeftTurn);
    save_config(c, dir / "c.json");
    CHECK(load_config(dir / "c.json") == c);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), IoError);
    fs::remove_all(dir);
  }
  SUBCASE("missing keys keep defaults") {
    const std::string text =
        R"({"kind": "custom", "origin": {"lat_deg": 0, "lon_deg": 0, "elev_m": 0},
            "actors": [{"id": 1, "kind": "vehicle", "speed_mps": 10}]})";
    const ScenarioConfig c = config_from_json(text);
    CHECK(c.actors.size() == 1);
    CHECK(c.duration_s == doctest::Approx(20.0));
    CHECK(c.vehicle_radio == channel::RadioConfig::vehicle());
    // The actor defaults to 0 N 0 E, far from the default origin.
    CHECK_THROWS_AS(config_from_json(R"({"actors": [{"id": 1, "kind": "vehicle"}]})"), ConfigError);
  }
  SUBCASE("strict reader") {
    const std::string base = to_json(build_scenario(ScenarioKind::Crossing));
    CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"kind": "crossing", "colour": 3})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"kind": "motorway"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"seed": -1})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"duration_s": "long"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"map": {"expiry_s": 1, "radius": 3}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"vehicle_radio": {"cw": 2.5}})"), ConfigError);
    // Parses, but fails validation.
    CHECK_THROWS_AS(config_from_json(R"({"actors": []})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"duration_s": -4, "actors": [{"id": 1, "kind": "vehicle"}]})"),
                    ConfigError);
    CHECK_NOTHROW(config_from_json(base));
  }
}

TEST_CASE("validation") {
  ScenarioConfig c = build_scenario(ScenarioKind::Crossing);
  SUBCASE("duplicate ids") {
    c.actors[1].id = c.actors[0].id;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("speed above max") {
    c.actors[0].speed_mps = c.actors[0].max_speed_mps + 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("actor far from the origin") {
    c.actors[1].position.lat_deg += 0.5;  // about 55 km north
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("bad radio") {
    c.phone_radio.cw = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("bad origin") {
    c.origin.lat_deg = 95.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("unsorted phases") {
    c.actors[0].phases = {{5.0, 0.0, 0.0}, {1.0, 0.0, 0.0}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("tick other than 100 ms") {
    c.app_tick_s = 0.05;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_CASE("invalid overrides") {
  auto with = [](auto setter) {
    ScenarioOverrides o;
    setter(o);
    return o;
  };
  CHECK_THROWS_AS(build_scenario(ScenarioKind::Crossing, with([](auto& o) { o.speed_kmh = 0.0; })), ConfigError);
  CHECK_THROWS_AS(build_scenario(ScenarioKind::Crossing, with([](auto& o) { o.speed_kmh = -30.0; })), ConfigError);
  CHECK_THROWS_AS(build_scenario(ScenarioKind::Crossing, with([](auto& o) { o.duration_s = 0.0; })), ConfigError);
  CHECK_THROWS_AS(build_scenario(ScenarioKind::Congestion, with([](auto& o) { o.pedestrians = -1; })), ConfigError);
  CHECK_THROWS_AS(build_scenario(ScenarioKind::Crossing, with([](auto& o) { o.pedestrians = 3; })), ConfigError);
  CHECK_THROWS_AS(build_scenario(ScenarioKind::AlongRoad, with([](auto& o) { o.speed_kmh = 4.0; })), ConfigError);
  CHECK_THROWS_AS(build_scenario(ScenarioKind::RightTurn, with([](auto& o) { o.start_distance_m = 10.0; })),
                  ConfigError);
  CHECK_THROWS_AS(build_scenario(ScenarioKind::Crossing, with([](auto& o) { o.speed_kmh = 700.0; })), ConfigError);
}

TEST_CASE("message counter wraps at 128") {
  MsgCounter c;
  for (int i = 0; i < 128; ++i) CHECK(c.next() == i);
  CHECK(c.next() == 0);
  CHECK(c.next() == 1);
}
