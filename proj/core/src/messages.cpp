#include "v2p/messages.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "v2p/error.hpp"

namespace v2p::messages {

namespace {

// A fixed-point field: value = q / units, q in [min_q, max_q]. Every lattice
// step is 1/units for an integer `units`, so the decoded value q / units is
// the double nearest the decimal value and round-trips exactly. Fields whose
// step is not 1/integer set `step` instead and decode as q * step, which is
// exact when step is a short binary fraction.
struct Quant {
  const char* name;
  double units;
  std::int64_t min_q;
  std::int64_t max_q;
  double step = 0.0;
};

constexpr Quant kLat{"lat", 1e7, -900000000, 900000000};
constexpr Quant kLon{"lon", 1e7, -1800000000, 1799999999};
constexpr Quant kElev{"elev", 10.0, -32768, 32767};
constexpr Quant kAccuracy{"positional_accuracy", 10.0, 0, 255};
constexpr Quant kSpeed{"speed", 50.0, 0, 8190};
constexpr Quant kHeading{"heading", 80.0, 0, 28799};
constexpr Quant kLonAccel{"lon_accel", 100.0, -2000, 2000};
constexpr Quant kLatAccel{"lat_accel", 100.0, -2000, 2000};
constexpr Quant kVertAccel{"vert_accel", 100.0, -2000, 2000};
constexpr Quant kYawRate{"yaw_rate", 100.0, -32700, 32700};
constexpr Quant kSteering{"steering_angle", 1.0 / 1.5, -84, 84, 1.5};
constexpr Quant kLength{"vehicle_length", 100.0, 0, 4095};
constexpr Quant kWidth{"vehicle_width", 100.0, 0, 1023};
constexpr Quant kPathOffset{"path_offset", 1e7, -32768, 32767};
constexpr Quant kRadius{"radius_of_curvature", 10.0, -2000000, 2000000};
constexpr Quant kConfidence{"confidence", 200.0, 0, 200};

constexpr int kPathTimeUnitMs = 100;

double dequantize(const Quant& f, std::int64_t q) {
  if (f.step > 0.0) return static_cast<double>(q) * f.step;
  return static_cast<double>(q) / f.units;
}

double scale(const Quant& f, double v) { return f.step > 0.0 ? v / f.step : v * f.units; }

std::int64_t quantize_value(const Quant& f, double v) {
  if (!std::isfinite(v)) throw InvalidInput(std::string(f.name) + " is not finite");
  const double scaled = scale(f, v);
  if (std::fabs(scaled) > 9.0e15) throw InvalidInput(std::string(f.name) + " out of range");
  const std::int64_t q = std::llround(scaled);
  if (q < f.min_q || q > f.max_q) {
    throw InvalidInput(std::string(f.name) + " out of range: " + std::to_string(v));
  }
  return q;
}

bool on_lattice(const Quant& f, double v) {
  if (!std::isfinite(v)) return false;
  const double scaled = scale(f, v);
  if (std::fabs(scaled) > 9.0e15) return false;
  return dequantize(f, std::llround(scaled)) == v;
}

double snap(const Quant& f, double v) {
  if (!std::isfinite(v) || std::fabs(scale(f, v)) > 9.0e15) return v;
  return dequantize(f, std::llround(scale(f, v)));
}

class Writer {
 public:
  explicit Writer(std::size_t reserve) { buf_.reserve(reserve); }
  void u8(std::uint64_t v) { buf_.push_back(static_cast<std::uint8_t>(v & 0xFF)); }
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) u8(v >> (8 * i));
  }
  void i16(std::int64_t v) { le(static_cast<std::uint64_t>(v), 2); }
  void i32(std::int64_t v) { le(static_cast<std::uint64_t>(v), 4); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint64_t le(int bytes) {
    if (pos_ + static_cast<std::size_t>(bytes) > b_.size()) {
      throw DecodeError("truncated buffer at offset " + std::to_string(pos_));
    }
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::int8_t i8() { return static_cast<std::int8_t>(le(1)); }
  std::int16_t i16() { return static_cast<std::int16_t>(le(2)); }
  std::int32_t i32() { return static_cast<std::int32_t>(le(4)); }

  void expect_end() const {
    if (pos_ != b_.size()) {
      throw DecodeError("trailing bytes after message: " + std::to_string(b_.size() - pos_));
    }
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

double read_field(const Quant& f, std::int64_t q) {
  if (q < f.min_q || q > f.max_q) {
    throw DecodeError(std::string(f.name) + " out of range on the wire: " + std::to_string(q));
  }
  return dequantize(f, q);
}

void write_common(Writer& w, std::uint8_t tag, const CommonSafetyFields& c) {
  if (c.msg_count > 127) throw InvalidInput("msg_count out of range");
  if (c.dsecond > 60999) throw InvalidInput("dsecond out of range");
  geo::validate(c.position);
  if (!std::isfinite(c.heading_deg) || c.heading_deg < 0.0 || c.heading_deg >= 360.0) {
    throw InvalidInput("heading out of range: " + std::to_string(c.heading_deg));
  }
  // Heading is circular: a value that rounds up to 360 deg wraps to 0.
  std::int64_t heading_q = std::llround(c.heading_deg * kHeading.units);
  if (heading_q == 28800) heading_q = 0;

  w.u8(tag);
  w.u8(c.msg_count);
  w.le(c.temp_id, 4);
  w.le(c.dsecond, 2);
  w.i32(quantize_value(kLat, c.position.lat_deg));
  w.i32(quantize_value(kLon, c.position.lon_deg));
  w.i16(quantize_value(kElev, c.position.elev_m));
  w.u8(static_cast<std::uint64_t>(quantize_value(kAccuracy, c.positional_accuracy)));
  w.le(static_cast<std::uint64_t>(quantize_value(kSpeed, c.speed)), 2);
  w.le(static_cast<std::uint64_t>(heading_q), 2);
  w.i16(quantize_value(kLonAccel, c.accel.lon_accel));
  w.i16(quantize_value(kLatAccel, c.accel.lat_accel));
  w.i16(quantize_value(kVertAccel, c.accel.vert_accel));
  w.i16(quantize_value(kYawRate, c.accel.yaw_rate_dps));
}

CommonSafetyFields read_common(Reader& r, std::uint8_t expected_tag) {
  const std::uint8_t tag = r.u8();
  if (tag != expected_tag) throw DecodeError("unexpected message tag " + std::to_string(tag));
  CommonSafetyFields c;
  c.msg_count = r.u8();
  if (c.msg_count > 127) throw DecodeError("msg_count out of range on the wire");
  c.temp_id = static_cast<TempId>(r.le(4));
  c.dsecond = r.u16();
  if (c.dsecond > 60999) throw DecodeError("dsecond out of range on the wire");
  c.position.lat_deg = read_field(kLat, r.i32());
  c.position.lon_deg = read_field(kLon, r.i32());
  c.position.elev_m = read_field(kElev, r.i16());
  c.positional_accuracy = read_field(kAccuracy, r.u8());
  c.speed = read_field(kSpeed, r.u16());
  c.heading_deg = read_field(kHeading, r.u16());
  c.accel.lon_accel = read_field(kLonAccel, r.i16());
  c.accel.lat_accel = read_field(kLatAccel, r.i16());
  c.accel.vert_accel = read_field(kVertAccel, r.i16());
  c.accel.yaw_rate_dps = read_field(kYawRate, r.i16());
  return c;
}

void check_common(std::vector<std::string>& out, const CommonSafetyFields& c) {
  if (!on_lattice(kLat, c.position.lat_deg)) out.emplace_back(kLat.name);
  if (!on_lattice(kLon, c.position.lon_deg)) out.emplace_back(kLon.name);
  if (!on_lattice(kElev, c.position.elev_m)) out.emplace_back(kElev.name);
  if (!on_lattice(kAccuracy, c.positional_accuracy)) out.emplace_back(kAccuracy.name);
  if (!on_lattice(kSpeed, c.speed)) out.emplace_back(kSpeed.name);
  if (!on_lattice(kHeading, c.heading_deg)) out.emplace_back(kHeading.name);
  if (!on_lattice(kLonAccel, c.accel.lon_accel)) out.emplace_back(kLonAccel.name);
  if (!on_lattice(kLatAccel, c.accel.lat_accel)) out.emplace_back(kLatAccel.name);
  if (!on_lattice(kVertAccel, c.accel.vert_accel)) out.emplace_back(kVertAccel.name);
  if (!on_lattice(kYawRate, c.accel.yaw_rate_dps)) out.emplace_back(kYawRate.name);
}

CommonSafetyFields snap_common(CommonSafetyFields c) {
  c.position.lat_deg = snap(kLat, c.position.lat_deg);
  c.position.lon_deg = snap(kLon, c.position.lon_deg);
  c.position.elev_m = snap(kElev, c.position.elev_m);
  c.positional_accuracy = snap(kAccuracy, c.positional_accuracy);
  c.speed = snap(kSpeed, c.speed);
  c.heading_deg = snap(kHeading, c.heading_deg);
  if (c.heading_deg >= 360.0) c.heading_deg = 0.0;
  c.accel.lon_accel = snap(kLonAccel, c.accel.lon_accel);
  c.accel.lat_accel = snap(kLatAccel, c.accel.lat_accel);
  c.accel.vert_accel = snap(kVertAccel, c.accel.vert_accel);
  c.accel.yaw_rate_dps = snap(kYawRate, c.accel.yaw_rate_dps);
  return c;
}

void validate_path_history(const std::vector<PathPoint>& h) {
  if (h.size() > kMaxPathPoints) throw InvalidInput("path history longer than 23 points");
  int prev = std::numeric_limits<int>::max();
  for (const auto& p : h) {
    if (p.time_offset_ms <= 0 || p.time_offset_ms % kPathTimeUnitMs != 0 ||
        p.time_offset_ms > 255 * kPathTimeUnitMs) {
      throw InvalidInput("path point time offset invalid: " + std::to_string(p.time_offset_ms));
    }
    if (p.time_offset_ms >= prev) {
      throw InvalidInput("path history must be ordered oldest first");
    }
    prev = p.time_offset_ms;
  }
}

}  // namespace

std::vector<std::uint8_t> encode_bsm(const Bsm& m) {
  Writer w(kBsmSize);
  write_common(w, kBsmTag, m.common);
  const auto ts = static_cast<std::uint8_t>(m.transmission_state);
  if (ts > 3) throw InvalidInput("transmission state out of range");
  w.u8(ts);
  w.u8(static_cast<std::uint64_t>(quantize_value(kSteering, m.steering_angle_deg)));
  w.u8((m.brake_status.brake_applied ? 1u : 0u) | (m.brake_status.abs_active ? 2u : 0u));
  w.le(static_cast<std::uint64_t>(quantize_value(kLength, m.vehicle_size.length_m)), 2);
  w.le(static_cast<std::uint64_t>(quantize_value(kWidth, m.vehicle_size.width_m)), 2);
  return w.take();
}

std::vector<std::uint8_t> encode_psm(const Psm& m) {
  const std::size_t n_path = m.path_history ? m.path_history->size() : 0;
  Writer w(psm_encoded_size(std::min(n_path, kMaxPathPoints), m.path_prediction.has_value()));
  write_common(w, kPsmTag, m.common);
  const auto ut = static_cast<std::uint8_t>(m.user_type);
  if (ut > 4) throw InvalidInput("user type out of range");
  if ((m.usage_state & ~usage::kAll) != 0) throw InvalidInput("usage state has unknown bits");
  if (m.cluster_size < 1 || m.cluster_size > 100) throw InvalidInput("cluster size out of range");
  if (m.path_history) validate_path_history(*m.path_history);

  w.u8(ut);
  w.u8(m.usage_state);
  w.u8(m.crossing_request ? 1 : 0);
  w.u8(static_cast<std::uint64_t>(m.cluster_size));
  w.u8(n_path);
  w.u8((m.path_history ? 1u : 0u) | (m.path_prediction ? 2u : 0u));
  if (m.path_history) {
    for (const auto& p : *m.path_history) {
      w.i16(quantize_value(kPathOffset, p.lat_offset_deg));
      w.i16(quantize_value(kPathOffset, p.lon_offset_deg));
      w.u8(static_cast<std::uint64_t>(p.time_offset_ms / kPathTimeUnitMs));
    }
  }
  if (m.path_prediction) {
    w.i32(quantize_value(kRadius, m.path_prediction->radius_of_curvature_m));
    w.u8(static_cast<std::uint64_t>(quantize_value(kConfidence, m.path_prediction->confidence)));
  }
  return w.take();
}

std::vector<std::uint8_t> encode(const Message& m) {
  return std::visit(
      [](const auto& msg) {
        if constexpr (std::is_same_v<std::decay_t<decltype(msg)>, Bsm>) {
          return encode_bsm(msg);
        } else {
          return encode_psm(msg);
        }
      },
      m);
}

Bsm decode_bsm(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  Bsm m;
  m.common = read_common(r, kBsmTag);
  const std::uint8_t ts = r.u8();
  if (ts > 3) throw DecodeError("transmission state out of range on the wire");
  m.transmission_state = static_cast<TransmissionState>(ts);
  m.steering_angle_deg = read_field(kSteering, r.i8());
  const std::uint8_t brakes = r.u8();
  if ((brakes & ~0x03u) != 0) throw DecodeError("brake status has unknown bits");
  m.brake_status = {(brakes & 1u) != 0, (brakes & 2u) != 0};
  m.vehicle_size.length_m = read_field(kLength, r.u16());
  m.vehicle_size.width_m = read_field(kWidth, r.u16());
  r.expect_end();
  return m;
}

Psm decode_psm(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  Psm m;
  m.common = read_common(r, kPsmTag);
  const std::uint8_t ut = r.u8();
  if (ut > 4) throw DecodeError("user type out of range on the wire");
  m.user_type = static_cast<UserType>(ut);
  m.usage_state = r.u8();
  if ((m.usage_state & ~usage::kAll) != 0) throw DecodeError("usage state has unknown bits");
  const std::uint8_t crossing = r.u8();
  if (crossing > 1) throw DecodeError("crossing request must be 0 or 1");
  m.crossing_request = crossing == 1;
  m.cluster_size = r.u8();
  if (m.cluster_size < 1 || m.cluster_size > 100) throw DecodeError("cluster size out of range");
  const std::uint8_t count = r.u8();
  const std::uint8_t presence = r.u8();
  if ((presence & ~0x03u) != 0) throw DecodeError("presence byte has unknown bits");
  if (count > kMaxPathPoints) throw DecodeError("path history count exceeds 23");
  if ((presence & 1u) == 0 && count != 0) throw DecodeError("path points without presence bit");
  if (presence & 1u) {
    std::vector<PathPoint> history;
    history.reserve(count);
    int prev = std::numeric_limits<int>::max();
    for (int i = 0; i < count; ++i) {
      PathPoint p;
      p.lat_offset_deg = read_field(kPathOffset, r.i16());
      p.lon_offset_deg = read_field(kPathOffset, r.i16());
      const int dt = r.u8();
      if (dt == 0) throw DecodeError("path point time offset is zero");
      p.time_offset_ms = dt * kPathTimeUnitMs;
      if (p.time_offset_ms >= prev) throw DecodeError("path history out of order");
      prev = p.time_offset_ms;
      history.push_back(p);
    }
    m.path_history = std::move(history);
  }
  if (presence & 2u) {
    PathPrediction pp;
    pp.radius_of_curvature_m = read_field(kRadius, r.i32());
    pp.confidence = read_field(kConfidence, r.u8());
    m.path_prediction = pp;
  }
  r.expect_end();
  return m;
}

Message decode(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty buffer");
  switch (bytes[0]) {
    case kBsmTag:
      return decode_bsm(bytes);
    case kPsmTag:
      return decode_psm(bytes);
    default:
      throw DecodeError("unknown message tag " + std::to_string(bytes[0]));
  }
}

std::size_t psm_encoded_size(std::size_t path_points, bool has_prediction) {
  return kPsmFixedSize + 1 + kPathPointSize * path_points + (has_prediction ? kPredictionSize : 0);
}

std::vector<std::string> quantize_check(const Bsm& m) {
  std::vector<std::string> out;
  check_common(out, m.common);
  if (!on_lattice(kSteering, m.steering_angle_deg)) out.emplace_back(kSteering.name);
  if (!on_lattice(kLength, m.vehicle_size.length_m)) out.emplace_back(kLength.name);
  if (!on_lattice(kWidth, m.vehicle_size.width_m)) out.emplace_back(kWidth.name);
  return out;
}

std::vector<std::string> quantize_check(const Psm& m) {
  std::vector<std::string> out;
  check_common(out, m.common);
  if (m.path_history) {
    bool offsets_ok = true, times_ok = true;
    for (const auto& p : *m.path_history) {
      offsets_ok = offsets_ok && on_lattice(kPathOffset, p.lat_offset_deg) &&
                   on_lattice(kPathOffset, p.lon_offset_deg);
      times_ok = times_ok && p.time_offset_ms % kPathTimeUnitMs == 0;
    }
    if (!offsets_ok) out.emplace_back("path_history.offset");
    if (!times_ok) out.emplace_back("path_history.time_offset");
  }
  if (m.path_prediction) {
    if (!on_lattice(kRadius, m.path_prediction->radius_of_curvature_m)) {
      out.emplace_back(kRadius.name);
    }
    if (!on_lattice(kConfidence, m.path_prediction->confidence)) out.emplace_back(kConfidence.name);
  }
  return out;
}

Bsm quantize(const Bsm& m) {
  Bsm q = m;
  q.common = snap_common(m.common);
  q.steering_angle_deg = snap(kSteering, m.steering_angle_deg);
  q.vehicle_size.length_m = snap(kLength, m.vehicle_size.length_m);
  q.vehicle_size.width_m = snap(kWidth, m.vehicle_size.width_m);
  return q;
}

Psm quantize(const Psm& m) {
  Psm q = m;
  q.common = snap_common(m.common);
  if (q.path_history) {
    for (auto& p : *q.path_history) {
      p.lat_offset_deg = snap(kPathOffset, p.lat_offset_deg);
      p.lon_offset_deg = snap(kPathOffset, p.lon_offset_deg);
      p.time_offset_ms = (p.time_offset_ms + kPathTimeUnitMs / 2) / kPathTimeUnitMs * kPathTimeUnitMs;
    }
  }
  if (q.path_prediction) {
    q.path_prediction->radius_of_curvature_m =
        snap(kRadius, q.path_prediction->radius_of_curvature_m);
    q.path_prediction->confidence = snap(kConfidence, q.path_prediction->confidence);
  }
  return q;
}

const char* to_string(UserType t) {
  switch (t) {
    case UserType::Unavailable: return "unavailable";
    case UserType::Pedestrian: return "pedestrian";
    case UserType::Pedalcyclist: return "pedalcyclist";
    case UserType::PublicSafetyWorker: return "public-safety-worker";
    case UserType::Animal: return "animal";
  }
  return "?";
}

const char* to_string(TransmissionState t) {
  switch (t) {
    case TransmissionState::Neutral: return "neutral";
    case TransmissionState::Park: return "park";
    case TransmissionState::ForwardGears: return "forward-gears";
    case TransmissionState::ReverseGears: return "reverse-gears";
  }
  return "?";
}

namespace {

void describe_common(std::ostringstream& os, const CommonSafetyFields& c) {
  char buf[64];
  os << "msg_count: " << int(c.msg_count) << '\n';
  std::snprintf(buf, sizeof buf, "0x%08x", c.temp_id);
  os << "temp_id: " << buf << '\n';
  os << "dsecond_ms: " << c.dsecond << '\n';
  std::snprintf(buf, sizeof buf, "%.7f", c.position.lat_deg);
  os << "lat_deg: " << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.7f", c.position.lon_deg);
  os << "lon_deg: " << buf << '\n';
  os << "elev_m: " << c.position.elev_m << '\n';
  os << "positional_accuracy_m: " << c.positional_accuracy << '\n';
  os << "speed_mps: " << c.speed << '\n';
  os << "heading_deg: " << c.heading_deg << '\n';
  os << "accel:\n";
  os << "  lon_mps2: " << c.accel.lon_accel << '\n';
  os << "  lat_mps2: " << c.accel.lat_accel << '\n';
  os << "  vert_mps2: " << c.accel.vert_accel << '\n';
  os << "  yaw_rate_dps: " << c.accel.yaw_rate_dps << '\n';
}

}  // namespace

std::string describe(const Message& m) {
  std::ostringstream os;
  if (const auto* b = std::get_if<Bsm>(&m)) {
    os << "type: BSM\n";
    describe_common(os, b->common);
    os << "transmission_state: " << to_string(b->transmission_state) << '\n';
    os << "steering_angle_deg: " << b->steering_angle_deg << '\n';
    os << "brake_applied: " << (b->brake_status.brake_applied ? "true" : "false") << '\n';
    os << "abs_active: " << (b->brake_status.abs_active ? "true" : "false") << '\n';
    os << "vehicle_length_m: " << b->vehicle_size.length_m << '\n';
    os << "vehicle_width_m: " << b->vehicle_size.width_m << '\n';
  } else {
    const auto& p = std::get<Psm>(m);
    os << "type: PSM\n";
    describe_common(os, p.common);
    os << "user_type: " << to_string(p.user_type) << '\n';
    os << "usage_state:";
    if (p.usage_state == usage::kUnavailable) os << " unavailable";
    if (p.usage_state & usage::kIdle) os << " idle";
    if (p.usage_state & usage::kListeningToAudio) os << " listening-to-audio";
    if (p.usage_state & usage::kTyping) os << " typing";
    if (p.usage_state & usage::kCalling) os << " calling";
    os << '\n';
    os << "crossing_request: " << (p.crossing_request ? "true" : "false") << '\n';
    os << "cluster_size: " << p.cluster_size << '\n';
    if (p.path_history) {
      os << "path_history:\n";
      for (const auto& pt : *p.path_history) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "  - {dlat_deg: %.7f, dlon_deg: %.7f, dt_ms: %d}\n",
                      pt.lat_offset_deg, pt.lon_offset_deg, pt.time_offset_ms);
        os << buf;
      }
    }
    if (p.path_prediction) {
      os << "path_prediction:\n";
      os << "  radius_of_curvature_m: " << p.path_prediction->radius_of_curvature_m << '\n';
      os << "  confidence: " << p.path_prediction->confidence << '\n';
    }
  }
  return os.str();
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xF]);
  }
  return s;
}

std::vector<std::uint8_t> from_hex(const std::string& hex) {
  std::string digits;
  std::size_t start = 0;
  if (hex.size() >= 2 && hex[0] == '0' && (hex[1] == 'x' || hex[1] == 'X')) start = 2;
  for (std::size_t i = start; i < hex.size(); ++i) {
    const auto c = static_cast<unsigned char>(hex[i]);
    if (std::isspace(c)) continue;
    if (!std::isxdigit(c)) throw DecodeError(std::string("invalid hex digit '") + hex[i] + "'");
    digits.push_back(static_cast<char>(c));
  }
  if (digits.size() % 2 != 0) throw DecodeError("hex string has odd length");
  std::vector<std::uint8_t> out(digits.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::stoi(digits.substr(2 * i, 2), nullptr, 16));
  }
  return out;
}

}  // namespace v2p::messages
