#include <doctest.h>

#include <cstring>
#include <random>

#include "v2p/error.hpp"
#include "v2p/messages.hpp"

using namespace v2p::messages;

namespace {

template <typename Int>
Int read_le(const std::vector<std::uint8_t>& b, std::size_t off) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(Int); ++i) v |= std::uint64_t{b[off + i]} << (8 * i);
  Int out;
  std::memcpy(&out, &v, sizeof(Int));
  return out;
}

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  long long q(long long lo, long long hi) { return std::uniform_int_distribution<long long>(lo, hi)(rng); }
  bool coin() { return q(0, 1) == 1; }

  CommonSafetyFields common() {
    CommonSafetyFields c;
    c.msg_count = static_cast<std::uint8_t>(q(0, 127));
    c.temp_id = static_cast<TempId>(q(0, 0xFFFFFFFFll));
    c.dsecond = static_cast<std::uint16_t>(q(0, 60999));
    c.position = {q(-900000000, 900000000) / 1e7, q(-1800000000, 1799999999) / 1e7, q(-32768, 32767) / 10.0};
    c.positional_accuracy = q(0, 255) / 10.0;
    c.speed = q(0, 8190) / 50.0;
    c.heading_deg = q(0, 28799) / 80.0;
    c.accel = {q(-2000, 2000) / 100.0, q(-2000, 2000) / 100.0, q(-2000, 2000) / 100.0, q(-32700, 32700) / 100.0};
    return c;
  }

  Psm psm() {
    Psm m;
    m.common = common();
    m.user_type = static_cast<UserType>(q(0, 4));
    m.usage_state = static_cast<std::uint8_t>(q(0, 15));
    m.crossing_request = coin();
    m.cluster_size = static_cast<int>(q(1, 100));
    if (coin()) {
      const auto n = static_cast<int>(q(0, 23));
      std::vector<int> dts;
      while (static_cast<int>(dts.size()) < n) {
        const int dt = static_cast<int>(q(1, 255));
        if (std::find(dts.begin(), dts.end(), dt) == dts.end()) dts.push_back(dt);
      }
      std::sort(dts.rbegin(), dts.rend());
      std::vector<PathPoint> h;
      for (int dt : dts) h.push_back({q(-32768, 32767) / 1e7, q(-32768, 32767) / 1e7, dt * 100});
      m.path_history = h;
    }
    if (coin()) m.path_prediction = PathPrediction{q(-2000000, 2000000) / 10.0, q(0, 200) / 200.0};
    return m;
  }

  Bsm bsm() {
    Bsm m;
    m.common = common();
    m.transmission_state = static_cast<TransmissionState>(q(0, 3));
    m.steering_angle_deg = static_cast<double>(q(-84, 84)) * 1.5;
    m.brake_status = {coin(), coin()};
    m.vehicle_size = {q(0, 4095) / 100.0, q(0, 1023) / 100.0};
    return m;
  }
};

}  // namespace

TEST_CASE("all-minimum BSM round trips") {
  Bsm m;
  m.common.position = {-90.0, -180.0, -3276.8};
  m.common.accel = {-20.0, -20.0, -20.0, -327.0};
  m.steering_angle_deg = -126.0;
  const auto bytes = encode_bsm(m);
  CHECK(bytes.size() == kBsmSize);
  CHECK(bytes[0] == kBsmTag);
  CHECK(decode_bsm(bytes) == m);
  CHECK(quantize_check(m).empty());
}

TEST_CASE("latitude fixed point") {
  Bsm m;
  m.common.position = {37.1234567, -122.0, 0.0};
  const auto bytes = encode_bsm(m);
  CHECK(read_le<std::int32_t>(bytes, 8) == 371234567);
  CHECK(read_le<std::int32_t>(bytes, 12) == -1220000000);
  CHECK(decode_bsm(bytes).common.position.lat_deg == 37.1234567);
}

TEST_CASE("field layout of the common block") {
  Psm m;
  m.common.msg_count = 5;
  m.common.temp_id = 0xA1B2C3D4;
  m.common.dsecond = 59999;
  m.common.speed = 1.4;
  m.common.heading_deg = 90.0;
  m.common.accel.yaw_rate_dps = -12.5;
  const auto b = encode_psm(m);
  CHECK(b[0] == kPsmTag);
  CHECK(b[1] == 5);
  CHECK(read_le<std::uint32_t>(b, 2) == 0xA1B2C3D4u);
  CHECK(read_le<std::uint16_t>(b, 6) == 59999);
  CHECK(read_le<std::uint16_t>(b, 19) == 70);     // 1.4 / 0.02
  CHECK(read_le<std::uint16_t>(b, 21) == 7200);   // 90 / 0.0125
  CHECK(read_le<std::int16_t>(b, 29) == -1250);
  CHECK(b.size() == psm_encoded_size(0, false));
}

TEST_CASE("random PSMs round trip with the documented length") {
  Gen g(2024);
  for (int i = 0; i < 1000; ++i) {
    const Psm m = g.psm();
    const auto bytes = encode_psm(m);
    const std::size_t n = m.path_history ? m.path_history->size() : 0;
    REQUIRE(bytes.size() == 36 + 1 + 5 * n + (m.path_prediction ? 5 : 0));
    REQUIRE(decode_psm(bytes) == m);
    REQUIRE(std::get<Psm>(decode(bytes)) == m);
    REQUIRE(quantize_check(m).empty());
  }
}

TEST_CASE("random BSMs round trip at constant size") {
  Gen g(99);
  for (int i = 0; i < 1000; ++i) {
    const Bsm m = g.bsm();
    const auto bytes = encode_bsm(m);
    REQUIRE(bytes.size() == kBsmSize);
    REQUIRE(decode_bsm(bytes) == m);
  }
}

TEST_CASE("quantize_check") {
  Bsm m;
  m.common.speed = 10.0;
  CHECK(quantize_check(m).empty());
  m.common.speed = 10.003;
  const auto bad = quantize_check(m);
  REQUIRE(bad.size() == 1);
  CHECK(bad[0] == "speed");
  const auto snapped = quantize(m);
  CHECK(snapped.common.speed == doctest::Approx(10.0));
  CHECK(quantize_check(snapped).empty());
  CHECK(decode_bsm(encode_bsm(m)) == snapped);
}

TEST_CASE("encode rejects out-of-range values instead of clamping") {
  Bsm m;
  m.common.speed = 164.0;
  CHECK_THROWS_AS(encode_bsm(m), v2p::InvalidInput);
  m = {};
  m.common.accel.lon_accel = 20.5;
  CHECK_THROWS_AS(encode_bsm(m), v2p::InvalidInput);
  m = {};
  m.common.position.lat_deg = 90.5;
  CHECK_THROWS_AS(encode_bsm(m), v2p::InvalidInput);
  m = {};
  m.common.heading_deg = 360.0;
  CHECK_THROWS_AS(encode_bsm(m), v2p::InvalidInput);
  m = {};
  m.common.msg_count = 128;
  CHECK_THROWS_AS(encode_bsm(m), v2p::InvalidInput);
  m = {};
  m.vehicle_size.length_m = 41.0;
  CHECK_THROWS_AS(encode_bsm(m), v2p::InvalidInput);

  Psm p;
  p.cluster_size = 0;
  CHECK_THROWS_AS(encode_psm(p), v2p::InvalidInput);
  p = {};
  p.path_history = std::vector<PathPoint>(24, PathPoint{0, 0, 100});
  CHECK_THROWS_AS(encode_psm(p), v2p::InvalidInput);
  p = {};
  p.path_history = std::vector<PathPoint>{{0, 0, 100}, {0, 0, 200}};  // newest first
  CHECK_THROWS_AS(encode_psm(p), v2p::InvalidInput);
  p = {};
  p.path_prediction = PathPrediction{0.0, 1.5};
  CHECK_THROWS_AS(encode_psm(p), v2p::InvalidInput);
}

TEST_CASE("decode errors") {
  const auto good = encode_bsm(Bsm{});
  CHECK_THROWS_AS(decode(std::vector<std::uint8_t>{}), v2p::DecodeError);
  auto unknown = good;
  unknown[0] = 0x7F;
  CHECK_THROWS_AS(decode(unknown), v2p::DecodeError);
  for (std::size_t n = 0; n < good.size(); ++n) {
    CHECK_THROWS_AS(decode(std::span(good.data(), n)), v2p::DecodeError);
  }
  auto longer = good;
  longer.push_back(0);
  CHECK_THROWS_AS(decode(longer), v2p::DecodeError);
  CHECK_THROWS_AS(decode_psm(good), v2p::DecodeError);
}

TEST_CASE("random bytes decode cleanly or raise DecodeError") {
  std::mt19937_64 rng(5);
  Gen g(6);
  int decoded = 0;
  for (int i = 0; i < 20000; ++i) {
    std::vector<std::uint8_t> bytes;
    if (i % 2 == 0) {
      // Mutate a valid message so a useful share gets past the header.
      bytes = (i % 4 == 0) ? encode_bsm(g.bsm()) : encode_psm(g.psm());
      const auto flips = std::uniform_int_distribution<int>(1, 3)(rng);
      for (int k = 0; k < flips; ++k) {
        bytes[std::uniform_int_distribution<std::size_t>(0, bytes.size() - 1)(rng)] =
            static_cast<std::uint8_t>(rng());
      }
    } else {
      bytes.resize(std::uniform_int_distribution<std::size_t>(0, 200)(rng));
      for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
      if (!bytes.empty()) bytes[0] = (rng() & 1) ? kBsmTag : kPsmTag;
    }
    try {
      const Message m = decode(bytes);
      ++decoded;
      // Anything that decodes must be a lattice message that re-encodes to the same bytes.
      std::visit([](const auto& msg) { REQUIRE(quantize_check(msg).empty()); }, m);
      REQUIRE(encode(m) == bytes);
    } catch (const v2p::DecodeError&) {
    }
  }
  CHECK(decoded > 100);
}

TEST_CASE("hex helpers and describe") {
  Psm p;
  p.common.temp_id = 42;
  p.user_type = UserType::Pedestrian;
  p.path_history = std::vector<PathPoint>{{1e-6, -2e-6, 300}, {0, 0, 100}};
  const auto bytes = encode_psm(p);
  const std::string hex = to_hex(bytes);
  CHECK(hex.size() == 2 * bytes.size());
  CHECK(from_hex(hex) == bytes);
  CHECK(from_hex("0x" + hex) == bytes);
  CHECK(from_hex(hex.substr(0, 4) + " \n" + hex.substr(4)) == bytes);
  CHECK_THROWS_AS(from_hex("abc"), v2p::DecodeError);
  CHECK_THROWS_AS(from_hex("zz"), v2p::DecodeError);
  const std::string text = describe(decode(bytes));
  CHECK(text.find("pedestrian") != std::string::npos);
  CHECK(text.find("temp_id") != std::string::npos);
}
