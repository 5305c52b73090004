#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "v2p/error.hpp"
#include "v2p/safety.hpp"

using namespace v2p;
using namespace v2p::safety;

namespace {

const SafetyParams kP{};

KinematicState kin(double v, double a = 0.0, double yaw = 0.0) { return {v, a, 0.0, yaw}; }

// Time-stepped stopping distance: run at `a` for t_free (never reversing),
// then brake at whichever of `d` and `a` is harder. Trapezoidal integration.
double integrate_stop(double v, double a, double t_free, double d) {
  const double dt = 1e-4;
  double x = 0.0, t = 0.0;
  while (t < t_free - 1e-12) {
    const double h = std::min(dt, t_free - t);
    const double v1 = std::max(0.0, v + a * h);
    x += 0.5 * (v + v1) * h;
    v = v1;
    t += h;
  }
  const double brake = std::min(a, d);
  while (v > 0.0) {
    const double v1 = std::max(0.0, v + brake * dt);
    const double h = v1 > 0.0 ? dt : v / -brake;
    x += 0.5 * (v + v1) * h;
    v = v1;
  }
  return x;
}

ZoneSet oracle_zones(double v, double a) {
  const double vb = std::max(0.0, v + a * kP.t_drd);
  const double vg = std::max(0.0, v + a * (kP.t_drd + kP.t_guard));
  return {integrate_stop(v, a, kP.t_drd, -5.308 - 0.086 * vb),
          integrate_stop(v, a, kP.t_drd + kP.t_guard, -5.308 - 0.086 * vg),
          integrate_stop(v, a, kP.t_drd + kP.t_guard + kP.t_mod, -3.4), 1.75, 0.0};
}

// Geometric labelling without projection: rectangle for straight paths,
// annular sector via half-plane tests for curved ones (sectors < pi here).
ZoneLabel brute_label(const geo::LocalFramePoint& p, const KinematicState& k, const ZoneSet& z) {
  auto label_by = [&](auto inside_len) {
    if (!inside_len(z.dts_mod)) return ZoneLabel::Safe;
    if (inside_len(z.dts_min)) return ZoneLabel::UnavoidableCrash;
    if (inside_len(z.dts_guard)) return ZoneLabel::Danger;
    return ZoneLabel::Risk;
  };
  if (std::fabs(k.yaw_rate_rps) < kP.yaw_rate_min) {
    return label_by([&](double len) { return std::fabs(p.y_m) <= z.half_width && p.x_m >= 0 && p.x_m <= len; });
  }
  const double s = k.yaw_rate_rps > 0 ? 1.0 : -1.0;
  const double r = k.speed_mps / std::fabs(k.yaw_rate_rps);
  // Mirror right turns onto left turns; centre at (0, r).
  const double qx = p.x_m, qy = s * p.y_m - r;
  const double dist = std::hypot(qx, qy);
  if (dist < r - z.half_width || dist > r + z.half_width) return ZoneLabel::Safe;
  return label_by([&](double len) {
    const double ang = len / r;
    const double ex = std::sin(ang), ey = -std::cos(ang);  // end ray
    const double start_cross = 0.0 * qy - (-1.0) * qx;     // start ray (0,-1) x q
    const double end_cross = qx * ey - qy * ex;             // q x end
    return start_cross >= 0.0 && end_cross >= 0.0;
  });
}

}  // namespace

TEST_CASE("max_decel") {
  CHECK(max_decel(0.0, kP) == doctest::Approx(-5.308));
  CHECK(max_decel(19.444, kP) == doctest::Approx(-6.980184).epsilon(1e-9));
  CHECK(max_decel(10.0, kP) == doctest::Approx(-6.168));
  CHECK_THROWS_AS(max_decel(-0.1, kP), InvalidInput);
  for (double v = 0.0; v <= 163.8 / 3.6; v += 0.01) CHECK(max_decel(v, kP) < 0.0);
}

TEST_CASE("v_brk clamps at zero") {
  CHECK(v_brk(kin(19.444), kP) == doctest::Approx(19.444));
  CHECK(v_brk(kin(10, -2), kP) == doctest::Approx(5.0));
  CHECK(v_brk(kin(2, -2), kP) == 0.0);
}

TEST_CASE("time to stop") {
  CHECK(compute_tts_min(kin(0), kP) == doctest::Approx(2.5));
  CHECK(compute_tts_min(kin(19.444), kP) == doctest::Approx(19.444 / 6.980184 + 2.5).epsilon(1e-9));
  CHECK(compute_tts_min(kin(10), kP) == doctest::Approx(10.0 / 6.168 + 2.5).epsilon(1e-9));
}

TEST_CASE("stopping distances at the reference speeds") {
  CHECK(compute_dts_min(kin(0), kP) == 0.0);
  CHECK(compute_dts_min(kin(19.444), kP) == doctest::Approx(75.69).epsilon(1e-4));
  CHECK(compute_dts_min(kin(10), kP) == doctest::Approx(33.11).epsilon(1e-3));

  const ZoneSet z = compute_zone_set(kin(19.444), kP);
  CHECK(z.dts_min == doctest::Approx(48.61 + 19.444 * 19.444 / (2 * 6.980184)).epsilon(1e-4));
  CHECK(z.dts_guard == doctest::Approx(z.dts_min + 19.444).epsilon(1e-12));
  CHECK(z.dts_mod == doctest::Approx(19.444 * 5.5 + 19.444 * 19.444 / 6.8).epsilon(1e-12));
  CHECK(z.dts_mod == doctest::Approx(162.54).epsilon(1e-4));
  CHECK(z.dts_guard == doctest::Approx(95.14).epsilon(1e-4));
  CHECK(z.half_width == 1.75);

  const ZoneSet still = compute_zone_set(kin(0), kP);
  CHECK(still.dts_min == 0.0);
  CHECK(still.dts_guard == 0.0);
  CHECK(still.dts_mod == 0.0);
}

TEST_CASE("zones match a time-stepped kinematic integration") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> vd(0.0, 40.0), ad(-8.0, 4.0);
  for (int i = 0; i < 300; ++i) {
    const double v = vd(rng), a = ad(rng);
    const ZoneSet z = compute_zone_set(kin(v, a), kP);
    const ZoneSet o = oracle_zones(v, a);
    REQUIRE(z.dts_min == doctest::Approx(o.dts_min).epsilon(1e-4).scale(1.0));
    REQUIRE(z.dts_guard == doctest::Approx(o.dts_guard).epsilon(1e-4).scale(1.0));
    REQUIRE(z.dts_mod == doctest::Approx(o.dts_mod).epsilon(1e-4).scale(1.0));
  }
}

TEST_CASE("zone ordering, degeneracy and monotonicity") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> vd(0.0, 40.0), ad(-8.0, 4.0);
  for (int i = 0; i < 10000; ++i) {
    const ZoneSet z = compute_zone_set(kin(vd(rng), ad(rng)), kP);
    REQUIRE(z.dts_min >= 0.0);
    REQUIRE(z.dts_min <= z.dts_guard);
    REQUIRE(z.dts_guard <= z.dts_mod);
  }
  for (double a = -8.0; a <= 0.0; a += 0.5) {
    const ZoneSet z = compute_zone_set(kin(0.0, a), kP);
    CHECK(z.dts_min == 0.0);
    CHECK(z.dts_guard == 0.0);
    CHECK(z.dts_mod == 0.0);
  }
  ZoneSet prev = compute_zone_set(kin(0.0), kP);
  for (double v = 0.05; v <= 45.0; v += 0.05) {
    const ZoneSet z = compute_zone_set(kin(v), kP);
    REQUIRE(z.dts_min >= prev.dts_min);
    REQUIRE(z.dts_guard >= prev.dts_guard);
    REQUIRE(z.dts_mod >= prev.dts_mod);
    prev = z;
  }
}

TEST_CASE("parameter validation") {
  SafetyParams p;
  CHECK_NOTHROW(p.validate());
  p.d_mod = 0.5;
  CHECK_THROWS_AS(p.validate(), InvalidInput);
  p = {};
  p.d_mod = -6.0;
  CHECK_THROWS_AS(p.validate(), InvalidInput);
  p = {};
  p.lane_width = 0.0;
  CHECK_THROWS_AS(p.validate(), InvalidInput);
  p = {};
  p.t_guard = -1.0;
  CHECK_THROWS_AS(p.validate(), InvalidInput);
}

TEST_CASE("straight projection") {
  const auto a = project_straight({50, 1.2});
  CHECK(a.d_lon == 50.0);
  CHECK(a.d_lat == 1.2);
  const auto b = project_straight({-10, 3});
  CHECK(b.d_lon == -10.0);
  CHECK(classify_target(b, compute_zone_set(kin(19.444), kP)) == ZoneLabel::Safe);
}

TEST_CASE("curved projection") {
  const auto on_arc = project_curved({100, 100}, kin(10, 0, 0.1), kP);
  CHECK(std::fabs(on_arc.d_lat) < 1e-9);
  CHECK(on_arc.d_lon == doctest::Approx(100 * geo::kPi / 2).epsilon(1e-12));

  const auto self = project_curved({0, 0}, kin(10, 0, 0.1), kP);
  CHECK(std::fabs(self.d_lat) < 1e-12);
  CHECK(std::fabs(self.d_lon) < 1e-12);

  // Inside of a left turn is to the left; inside of a right turn is to the right.
  CHECK(project_curved({0, 1}, kin(10, 0, 0.1), kP).d_lat == doctest::Approx(1.0));
  CHECK(project_curved({0, 1}, kin(10, 0, -0.1), kP).d_lat == doctest::Approx(1.0));
  CHECK(project_curved({100, -100}, kin(10, 0, -0.1), kP).d_lon == doctest::Approx(100 * geo::kPi / 2));
  // Behind the vehicle on the circle.
  CHECK(project_curved({-10, 0.5}, kin(10, 0, 0.1), kP).d_lon < 0.0);

  CHECK_THROWS_AS(project_curved({0, 100}, kin(10, 0, 0.1), kP), InvalidInput);
  CHECK_THROWS_AS(project_curved({10, 0}, kin(10, 0, 0.001), kP), InvalidInput);
  const auto centre = project({0, 100}, kin(10, 0, 0.1), kP);
  CHECK(centre.d_lat == doctest::Approx(100.0));
  CHECK(centre.d_lon == 0.0);
}

TEST_CASE("curved projection tends to the straight one as the yaw rate vanishes") {
  const geo::LocalFramePoint target{50, 2};
  const auto straight = project_straight(target);
  double prev_err = 1e9;
  for (double w : {1e-2, 1e-3, 1e-4, 1e-5, 1e-6}) {
    SafetyParams p;
    p.yaw_rate_min = w;
    const auto c = project_curved(target, kin(10, 0, w), p);
    const double err = std::max(std::fabs(c.d_lat - straight.d_lat), std::fabs(c.d_lon - straight.d_lon));
    CHECK(err < prev_err);
    prev_err = err;
  }
  CHECK(prev_err < 0.05);
}

TEST_CASE("classification examples") {
  const ZoneSet z = compute_zone_set(kin(19.444), kP);
  CHECK(classify_target({0, 150}, z) == ZoneLabel::Risk);
  CHECK(classify_target({0, 90}, z) == ZoneLabel::Danger);
  CHECK(classify_target({2.0, 90}, z) == ZoneLabel::Safe);
  CHECK(classify_target({0, 50}, z) == ZoneLabel::UnavoidableCrash);
  CHECK(classify_target({0, 170}, z) == ZoneLabel::Safe);
  CHECK(classify_target({-1.75, 0}, z) == ZoneLabel::UnavoidableCrash);
}

TEST_CASE("classification matches the geometric oracle on a grid") {
  const KinematicState cases[] = {kin(19.444), kin(10, 1.0), kin(12, 0, 0.08), kin(12, 0, -0.08),
                                  kin(8, -1.0, 0.15), kin(25, 0, 0.02)};
  for (const auto& k : cases) {
    const ZoneSet z = compute_zone_set(k, kP);
    int mismatches = 0;
    for (int x = -50; x <= 250; ++x) {
      for (int y = -10; y <= 10; ++y) {
        const geo::LocalFramePoint p{double(x), double(y)};
        if (classify_target(project(p, k, kP), z) != brute_label(p, k, z)) ++mismatches;
      }
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("detect_collision escalation and latch") {
  const ZoneSet z = compute_zone_set(kin(19.444), kP);
  WarningState s;
  s = detect_collision(s, {0, 150}, z);
  CHECK(s.level == WarningLevel::Advisory);
  s = detect_collision(s, {0, 90}, z);
  CHECK(s.level == WarningLevel::Imminent);
  for (int i = 0; i < 4; ++i) {
    s = detect_collision(s, {5.0, 90}, z);
    CHECK(s.level == WarningLevel::Imminent);
  }
  s = detect_collision(s, {5.0, 90}, z);
  CHECK(s.level == WarningLevel::None);

  // Straight to imminent, and a Safe blip resets the streak.
  WarningState t = detect_collision({}, {0, 60}, z);
  CHECK(t.level == WarningLevel::Imminent);
  t = detect_collision(t, {0, -1}, z);
  t = detect_collision(t, {0, 150}, z);
  CHECK(t.safe_streak == 0);
  CHECK(t.level == WarningLevel::Imminent);

  // Exactly on dts_mod is in the risk zone but not yet below it.
  CHECK(detect_collision({}, {0, z.dts_mod}, z).level == WarningLevel::None);
}

TEST_CASE("warnings only escalate along an approach") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> lat(-1.75, 1.75), step(0.01, 3.0);
  const ZoneSet z = compute_zone_set(kin(19.444), kP);
  for (int run = 0; run < 200; ++run) {
    WarningState s;
    for (double d = 300.0; d >= 0.0; d -= step(rng)) {
      const WarningState n = detect_collision(s, {lat(rng), d}, z);
      REQUIRE(n.level >= s.level);
      s = n;
    }
    CHECK(s.level == WarningLevel::Imminent);
  }
}

TEST_CASE("VRU discrimination") {
  MapRecord r;
  r.kind = awareness::EntityKind::Vru;
  r.declared_type = messages::UserType::Pedestrian;
  CHECK(discriminate_vru(r, 0.0) == awareness::VruClass::Pedestrian);

  r.declared_type = messages::UserType::Unavailable;
  r.first_seen_s = 0.0;
  r.measured_at_s = 2.0;
  CHECK(discriminate_vru(r, 0.5) == awareness::VruClass::Unknown);
  auto with_speed = [&](double v) {
    r.speed_samples.clear();
    for (int i = 0; i <= 10; ++i) r.speed_samples.push_back({1.0 + 0.1 * i, v});
    return discriminate_vru(r, 2.0);
  };
  CHECK(with_speed(1.4) == awareness::VruClass::Pedestrian);
  CHECK(with_speed(6.0) == awareness::VruClass::Cyclist);
  CHECK(with_speed(12.0) == awareness::VruClass::Motorcyclist);
  r.co_moving_since_s = 0.0;
  CHECK(with_speed(12.0) == awareness::VruClass::InVehicle);
  r.on_road_since_s = -40.0;
  CHECK(with_speed(1.0) == awareness::VruClass::PublicSafetyWorker);
}

TEST_CASE("update_track_context tags a phone riding in a car") {
  const geo::GeodeticPosition o{40.0, -80.0, 0.0};
  const geo::LocalTangentFrame f(o);
  awareness::RealTimeMap map;
  map.update_self(o, 0.0, {}, 0.0);
  for (int k = 0; k <= 30; ++k) {
    const double t = 0.1 * k;
    messages::Bsm car;
    car.common.temp_id = 1;
    car.common.dsecond = awareness::dsecond_at(t);
    car.common.position = f.to_geodetic({0, 15 * t, 0});
    car.common.speed = 15;
    messages::Psm phone;
    phone.common = car.common;
    phone.common.temp_id = 2;
    phone.common.position = f.to_geodetic({0.5, 15 * t, 0});
    map.ingest(car, t);
    map.ingest(phone, t);
    update_track_context(map, t, {});
  }
  CHECK(map.find(2)->vru_class == awareness::VruClass::InVehicle);
}

TEST_CASE("assess_target uses the target position at arrival") {
  // Vehicle at 19.444 m/s; pedestrian 150 m ahead, 4 m to the right, walking
  // left at 0.5 m/s: it reaches the lane centre after 8 s, slightly after the
  // vehicle would pass 150 m (7.7 s).
  MapRecord ped;
  ped.id = 3;
  ped.kind = awareness::EntityKind::Vru;
  ped.position = {150.0, -4.0};
  ped.local_heading_rad = geo::kPi / 2;
  ped.kin.speed_mps = 0.5;
  const KinematicState car = kin(19.444);
  const ZoneSet z = compute_zone_set(car, kP);
  const Assessment a = assess_target(ped, car, z, 0.0, kP);
  CHECK(a.lookahead_s == doctest::Approx(150.0 / 19.444).epsilon(1e-6));
  CHECK(a.predicted.y_m == doctest::Approx(-4.0 + 0.5 * 150.0 / 19.444).epsilon(1e-6));
  CHECK(a.label == ZoneLabel::Risk);

  // Stationary target: current position, no lookahead.
  ped.kin.speed_mps = 0.0;
  const Assessment b = assess_target(ped, car, z, 0.0, kP);
  CHECK(b.lookahead_s == 0.0);
  CHECK(b.label == ZoneLabel::Safe);

  // Lookahead is bounded.
  ped.kin.speed_mps = 0.5;
  ped.position = {400.0, -4.0};
  CHECK(assess_target(ped, car, z, 0.0, kP).lookahead_s == kP.max_lookahead_s);
}

TEST_CASE("phone-side assessment mirrors the vehicle-side one") {
  const geo::GeodeticPosition o{40.0, -80.0, 0.0};
  const geo::LocalTangentFrame f(o);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> pos(-150.0, 150.0), hd(0.0, 360.0), sp(0.5, 25.0), yaw(-0.2, 0.2);
  for (int i = 0; i < 200; ++i) {
    const geo::GeodeticPosition car_pos = f.to_geodetic({pos(rng), pos(rng), 0});
    const geo::GeodeticPosition ped_pos = f.to_geodetic({pos(rng) / 3, pos(rng) / 3, 0});
    const double car_h = hd(rng), ped_h = hd(rng);
    const KinematicState car_k{sp(rng), 0.0, car_h, yaw(rng)};
    const KinematicState ped_k{sp(rng) / 10, 0.0, ped_h, 0.0};

    messages::Bsm bsm;
    bsm.common.temp_id = 1;
    bsm.common.position = car_pos;
    bsm.common.speed = car_k.speed_mps;
    bsm.common.heading_deg = car_h;
    bsm.common.accel.yaw_rate_dps = geo::rad_to_deg(car_k.yaw_rate_rps);
    messages::Psm psm;
    psm.common.temp_id = 2;
    psm.common.position = ped_pos;
    psm.common.speed = ped_k.speed_mps;
    psm.common.heading_deg = ped_h;

    awareness::RealTimeMap car_map, ped_map;
    car_map.update_self(car_pos, car_h, car_k, 0.0);
    car_map.ingest(psm, 0.0);
    ped_map.update_self(ped_pos, ped_h, ped_k, 0.0);
    ped_map.ingest(bsm, 0.0);

    const Assessment from_car =
        assess_target(*car_map.find(2), car_k, compute_zone_set(car_k, kP), 0.0, kP);
    const Assessment from_phone = assess_from_phone(*ped_map.find(1), ped_k, 0.0, kP);
    // The two devices use tangent planes a few hundred metres apart, so the
    // answers agree to the centimetre rather than bit for bit.
    REQUIRE(std::fabs(from_phone.rel.d_lon - from_car.rel.d_lon) < 0.02);
    REQUIRE(std::fabs(from_phone.rel.d_lat - from_car.rel.d_lat) < 0.02);
    const double margin = std::min({std::fabs(std::fabs(from_car.rel.d_lat) - 1.75),
                                    std::fabs(from_car.rel.d_lon - from_car.zones.dts_min),
                                    std::fabs(from_car.rel.d_lon - from_car.zones.dts_guard),
                                    std::fabs(from_car.rel.d_lon - from_car.zones.dts_mod),
                                    std::fabs(from_car.rel.d_lon)});
    if (margin > 0.05) REQUIRE(from_phone.label == from_car.label);
  }
}

TEST_CASE("CollisionMonitor emits transitions and releases vanished targets") {
  const geo::GeodeticPosition o{40.0, -80.0, 0.0};
  const geo::LocalTangentFrame f(o);
  CollisionMonitor mon(MonitorRole::Vehicle);
  awareness::RealTimeMap map;
  const KinematicState car{19.444, 0.0, 0.0, 0.0};
  map.update_self(o, 0.0, car, 0.0);
  messages::Psm ped;
  ped.common.temp_id = 4;
  ped.common.position = f.to_geodetic({0, 120, 0});
  map.ingest(ped, 0.0);

  auto batch = mon.evaluate(map, 0.0);
  REQUIRE(batch.events.size() == 1);
  CHECK(batch.events[0].level == WarningLevel::Advisory);
  CHECK(batch.events[0].d_lon == doctest::Approx(120.0).epsilon(1e-6));
  CHECK(mon.level(4) == WarningLevel::Advisory);

  map.expire_records(5.0);
  for (int i = 0; i < 4; ++i) CHECK(mon.evaluate(map, 5.0 + 0.1 * i).events.empty());
  batch = mon.evaluate(map, 5.5);
  REQUIRE(batch.events.size() == 1);
  CHECK(batch.events[0].level == WarningLevel::None);
  CHECK(mon.max_level() == WarningLevel::None);
}
