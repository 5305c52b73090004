#include <benchmark/benchmark.h>

#include <algorithm>
#include <random>

#include "v2p/channel.hpp"
#include "v2p/geo.hpp"
#include "v2p/messages.hpp"
#include "v2p/safety.hpp"
#include "v2p/scenario.hpp"

using namespace v2p;

namespace {

messages::Bsm sample_bsm() {
  messages::Bsm m;
  m.common.temp_id = 42;
  m.common.msg_count = 17;
  m.common.dsecond = 31200;
  m.common.position = {39.6480, -79.9700, 300.0};
  m.common.speed = 19.44;
  m.common.heading_deg = 87.5;
  m.common.accel.yaw_rate_dps = 2.5;
  m.vehicle_size = {4.8, 1.8};
  return m;
}

void BM_EncodeBsm(benchmark::State& state) {
  const messages::Message m = sample_bsm();
  for (auto _ : state) benchmark::DoNotOptimize(messages::encode(m));
}
BENCHMARK(BM_EncodeBsm);

void BM_DecodeBsm(benchmark::State& state) {
  const auto bytes = messages::encode(messages::Message{sample_bsm()});
  for (auto _ : state) benchmark::DoNotOptimize(messages::decode(bytes));
}
BENCHMARK(BM_DecodeBsm);

void BM_GeodeticEcefRoundTrip(benchmark::State& state) {
  const geo::GeodeticPosition p{39.6480, -79.9700, 300.0};
  for (auto _ : state) benchmark::DoNotOptimize(geo::ecef_to_geodetic(geo::geodetic_to_ecef(p)));
}
BENCHMARK(BM_GeodeticEcefRoundTrip);

void BM_LocalFrame(benchmark::State& state) {
  const geo::LocalTangentFrame frame({39.6480, -79.9700, 300.0});
  const geo::GeodeticPosition target{39.6492, -79.9688, 301.0};
  for (auto _ : state) {
    const auto enu = frame.to_enu(target);
    benchmark::DoNotOptimize(geo::enu_to_local_frame(enu, 33.0));
  }
}
BENCHMARK(BM_LocalFrame);

void BM_ZoneSet(benchmark::State& state) {
  const safety::SafetyParams p;
  const awareness::KinematicState kin{19.444, 0.0, 0.0, 0.05};
  for (auto _ : state) benchmark::DoNotOptimize(safety::compute_zone_set(kin, p));
}
BENCHMARK(BM_ZoneSet);

void BM_ProjectAndClassify(benchmark::State& state) {
  const safety::SafetyParams p;
  const awareness::KinematicState kin{19.444, 0.0, 0.0, state.range(0) ? 0.08 : 0.0};
  const auto zones = safety::compute_zone_set(kin, p);
  const geo::LocalFramePoint target{85.0, 1.2};
  for (auto _ : state) benchmark::DoNotOptimize(safety::classify_target(safety::project(target, kin, p), zones));
}
BENCHMARK(BM_ProjectAndClassify)->Arg(0)->Arg(1);

// One second of 10 Hz beacons from N nodes spread along 1 km.
void BM_ChannelSecond(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    channel::Channel ch({}, 7, 10.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> x(0.0, 1000.0);
    for (std::size_t i = 0; i < n; ++i) {
      ch.add_node(i % 20 == 0 ? channel::NodeKind::Vehicle : channel::NodeKind::Phone,
                  i % 20 == 0 ? channel::RadioConfig::vehicle() : channel::RadioConfig::phone(), {x(rng), 0.0, 0.0});
    }
    std::uniform_int_distribution<channel::SimTime> jitter(0, channel::from_seconds(0.1) - 1);
    for (int tick = 0; tick < 10; ++tick) {
      std::vector<std::pair<channel::SimTime, std::size_t>> sends;
      for (std::size_t i = 0; i < n; ++i) sends.emplace_back(tick * channel::from_seconds(0.1) + jitter(rng), i);
      std::sort(sends.begin(), sends.end());
      for (const auto& [t, i] : sends) ch.enqueue(i, std::vector<std::uint8_t>(40), i % 20 == 0 ? 300 : 100, t);
    }
    ch.run_until(channel::from_seconds(1.0));
    ch.finalize(channel::from_seconds(1.0));
    benchmark::DoNotOptimize(ch.metrics().transmissions);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n) * 10);
}
BENCHMARK(BM_ChannelSecond)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_CrossingScenario(benchmark::State& state) {
  const auto cfg = scenario::build_scenario(scenario::ScenarioKind::Crossing);
  for (auto _ : state) benchmark::DoNotOptimize(scenario::run(cfg).summary.warnings);
}
BENCHMARK(BM_CrossingScenario)->Unit(benchmark::kMillisecond);

void BM_SmallCongestion(benchmark::State& state) {
  scenario::ScenarioOverrides o;
  o.pedestrians = 40;
  o.duration_s = 2.0;
  const auto cfg = scenario::build_scenario(scenario::ScenarioKind::Congestion, o);
  for (auto _ : state) benchmark::DoNotOptimize(scenario::run(cfg).summary.transmissions);
}
BENCHMARK(BM_SmallCongestion)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
