#pragma once

// BSM / PSM message types and their compact binary wire format.
//
// Wire layout (all integers little-endian, fixed point):
//
//   common (31 bytes)
//     u8  tag            0x20 = BSM, 0x21 = PSM
//     u8  msg_count      0..127
//     u32 temp_id
//     u16 dsecond        ms within the minute, 0..60999
//     i32 lat            1e-7 deg
//     i32 lon            1e-7 deg
//     i16 elev           0.1 m
//     u8  pos_accuracy   0.1 m, 0..255
//     u16 speed          0.02 m/s, 0..8190
//     u16 heading        0.0125 deg, 0..28799
//     i16 lon_accel      0.01 m/s^2, -2000..2000
//     i16 lat_accel      0.01 m/s^2
//     i16 vert_accel     0.01 m/s^2
//     i16 yaw_rate       0.01 deg/s, -32700..32700 (counter-clockwise positive)
//   BSM tail (7 bytes, total 38)
//     u8  transmission   0..3
//     i8  steering       1.5 deg, -84..84
//     u8  brakes         bit0 applied, bit1 abs active
//     u16 length         0.01 m, 0..4095
//     u16 width          0.01 m, 0..1023
//   PSM tail (total 37 + 5 per path point + 5 if prediction)
//     u8  user_type      0..4
//     u8  usage_state    bit set, bits 0..3
//     u8  crossing       0 or 1
//     u8  cluster_size   1..100
//     u8  path_count     0..23 (always present; 0 when history absent)
//     u8  presence       bit0 path history, bit1 path prediction
//     path_count x { i16 dlat 1e-7 deg; i16 dlon 1e-7 deg; u8 dt 100 ms, 1..255 }
//     if bit1: { i32 radius 0.1 m; u8 confidence 0.5 % }

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "v2p/geo.hpp"

namespace v2p::messages {

using TempId = std::uint32_t;

inline constexpr std::uint8_t kBsmTag = 0x20;
inline constexpr std::uint8_t kPsmTag = 0x21;
inline constexpr std::size_t kCommonSize = 31;
inline constexpr std::size_t kBsmSize = 38;
inline constexpr std::size_t kPsmFixedSize = 36;  // through path_count
inline constexpr std::size_t kPathPointSize = 5;
inline constexpr std::size_t kPredictionSize = 5;
inline constexpr std::size_t kMaxPathPoints = 23;

struct AccelSet4Way {
  double lon_accel = 0.0;  // m/s^2
  double lat_accel = 0.0;
  double vert_accel = 0.0;
  double yaw_rate_dps = 0.0;  // deg/s, counter-clockwise positive

  bool operator==(const AccelSet4Way&) const = default;
};

struct CommonSafetyFields {
  std::uint8_t msg_count = 0;
  TempId temp_id = 0;
  std::uint16_t dsecond = 0;
  geo::GeodeticPosition position{};
  double positional_accuracy = 0.0;
  double speed = 0.0;
  double heading_deg = 0.0;
  AccelSet4Way accel{};

  bool operator==(const CommonSafetyFields&) const = default;
};

enum class TransmissionState : std::uint8_t { Neutral = 0, Park = 1, ForwardGears = 2, ReverseGears = 3 };

struct BrakeStatus {
  bool brake_applied = false;
  bool abs_active = false;
  bool operator==(const BrakeStatus&) const = default;
};

struct VehicleSize {
  double length_m = 0.0;
  double width_m = 0.0;
  bool operator==(const VehicleSize&) const = default;
};

struct Bsm {
  CommonSafetyFields common{};
  TransmissionState transmission_state = TransmissionState::Neutral;
  double steering_angle_deg = 0.0;
  BrakeStatus brake_status{};
  VehicleSize vehicle_size{};

  bool operator==(const Bsm&) const = default;
};

enum class UserType : std::uint8_t {
  Unavailable = 0,
  Pedestrian = 1,
  Pedalcyclist = 2,
  PublicSafetyWorker = 3,
  Animal = 4,
};

/// Bit set; an empty set means the usage state is unavailable.
namespace usage {
inline constexpr std::uint8_t kUnavailable = 0;
inline constexpr std::uint8_t kIdle = 1u << 0;
inline constexpr std::uint8_t kListeningToAudio = 1u << 1;
inline constexpr std::uint8_t kTyping = 1u << 2;
inline constexpr std::uint8_t kCalling = 1u << 3;
inline constexpr std::uint8_t kAll = 0x0F;
}  // namespace usage

struct PathPoint {
  double lat_offset_deg = 0.0;
  double lon_offset_deg = 0.0;
  int time_offset_ms = 0;  // how long before dsecond; multiple of 100

  bool operator==(const PathPoint&) const = default;
};

struct PathPrediction {
  double radius_of_curvature_m = 0.0;  // signed, positive = left turn
  double confidence = 0.0;             // [0, 1]

  bool operator==(const PathPrediction&) const = default;
};

struct Psm {
  CommonSafetyFields common{};
  UserType user_type = UserType::Unavailable;
  std::uint8_t usage_state = usage::kUnavailable;
  bool crossing_request = false;
  int cluster_size = 1;
  std::optional<std::vector<PathPoint>> path_history;  // oldest first
  std::optional<PathPrediction> path_prediction;

  bool operator==(const Psm&) const = default;
};

using Message = std::variant<Bsm, Psm>;

std::vector<std::uint8_t> encode_bsm(const Bsm& m);
std::vector<std::uint8_t> encode_psm(const Psm& m);
std::vector<std::uint8_t> encode(const Message& m);

Bsm decode_bsm(std::span<const std::uint8_t> bytes);
Psm decode_psm(std::span<const std::uint8_t> bytes);
/// Dispatches on the tag byte.
Message decode(std::span<const std::uint8_t> bytes);

/// Exact encoded length of a PSM with the given optional sections.
std::size_t psm_encoded_size(std::size_t path_points, bool has_prediction);

/// Names of fields whose values do not sit exactly on their quantization
/// lattice (encoding them would be lossy). Range violations are not reported
/// here; encode rejects those.
std::vector<std::string> quantize_check(const Bsm& m);
std::vector<std::string> quantize_check(const Psm& m);

/// Rounds every quantized field onto its lattice, leaving ranges untouched.
Bsm quantize(const Bsm& m);
Psm quantize(const Psm& m);

/// Human-readable multi-line dump used by `v2psim msg inspect`.
std::string describe(const Message& m);

std::string to_hex(std::span<const std::uint8_t> bytes);
/// Parses a hex string (whitespace and an optional 0x prefix are ignored).
std::vector<std::uint8_t> from_hex(const std::string& hex);

const char* to_string(UserType t);
const char* to_string(TransmissionState t);

}  // namespace v2p::messages
