#include "v2p/geo.hpp"

#include <cmath>
#include <string>

#include "v2p/error.hpp"

namespace v2p::geo {

namespace {

std::array<std::array<double, 3>, 3> enu_rotation(const GeodeticPosition& origin) {
  const double lat = deg_to_rad(origin.lat_deg);
  const double lon = deg_to_rad(origin.lon_deg);
  const double sl = std::sin(lat), cl = std::cos(lat);
  const double so = std::sin(lon), co = std::cos(lon);
  return {{{-so, co, 0.0}, {-sl * co, -sl * so, cl}, {cl * co, cl * so, sl}}};
}

EnuPosition rotate_to_enu(const std::array<std::array<double, 3>, 3>& r, double dx, double dy,
                          double dz) {
  return {r[0][0] * dx + r[0][1] * dy + r[0][2] * dz, r[1][0] * dx + r[1][1] * dy + r[1][2] * dz,
          r[2][0] * dx + r[2][1] * dy + r[2][2] * dz};
}

EcefPosition rotate_from_enu(const std::array<std::array<double, 3>, 3>& r, const EnuPosition& p,
                             const EcefPosition& base) {
  return {base.x_m + r[0][0] * p.east_m + r[1][0] * p.north_m + r[2][0] * p.up_m,
          base.y_m + r[0][1] * p.east_m + r[1][1] * p.north_m + r[2][1] * p.up_m,
          base.z_m + r[0][2] * p.east_m + r[1][2] * p.north_m + r[2][2] * p.up_m};
}

}  // namespace

double normalize_longitude(double lon_deg) {
  double l = std::fmod(lon_deg + 180.0, 360.0);
  if (l < 0.0) l += 360.0;
  return l - 180.0;
}

double normalize_heading(double heading_deg) {
  double h = std::fmod(heading_deg, 360.0);
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h -= 360.0;
  return h;
}

double wrap_pi(double rad) {
  double r = std::remainder(rad, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

void validate(const GeodeticPosition& p) {
  if (!std::isfinite(p.lat_deg) || !std::isfinite(p.lon_deg) || !std::isfinite(p.elev_m)) {
    throw InvalidInput("geodetic position has non-finite component");
  }
  if (p.lat_deg < -90.0 || p.lat_deg > 90.0) {
    throw InvalidInput("latitude out of range: " + std::to_string(p.lat_deg));
  }
  if (p.lon_deg < -180.0 || p.lon_deg >= 180.0) {
    throw InvalidInput("longitude out of range: " + std::to_string(p.lon_deg));
  }
}

EcefPosition geodetic_to_ecef(const GeodeticPosition& p) {
  validate(p);
  const double lat = deg_to_rad(p.lat_deg);
  const double lon = deg_to_rad(p.lon_deg);
  const double sl = std::sin(lat), cl = std::cos(lat);
  // Prime-vertical radius of curvature.
  const double n = wgs84::kSemiMajor / std::sqrt(1.0 - wgs84::kE2 * sl * sl);
  return {(n + p.elev_m) * cl * std::cos(lon), (n + p.elev_m) * cl * std::sin(lon),
          (n * (1.0 - wgs84::kE2) + p.elev_m) * sl};
}

GeodeticPosition ecef_to_geodetic(const EcefPosition& e) {
  if (!std::isfinite(e.x_m) || !std::isfinite(e.y_m) || !std::isfinite(e.z_m)) {
    throw InvalidInput("ECEF position has non-finite component");
  }
  using namespace wgs84;
  const double p = std::hypot(e.x_m, e.y_m);
  const double lon = std::atan2(e.y_m, e.x_m);

  double beta = std::atan2(e.z_m, (1.0 - kFlattening) * p);
  double lat = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double sb = std::sin(beta), cb = std::cos(beta);
    lat = std::atan2(e.z_m + kEp2 * kSemiMinor * sb * sb * sb, p - kE2 * kSemiMajor * cb * cb * cb);
    beta = std::atan2((1.0 - kFlattening) * std::sin(lat), std::cos(lat));
  }
  const double sl = std::sin(lat);
  const double n = kSemiMajor / std::sqrt(1.0 - kE2 * sl * sl);
  const double h = p * std::cos(lat) + e.z_m * sl - kSemiMajor * kSemiMajor / n;

  double lon_deg = rad_to_deg(lon);
  if (lon_deg >= 180.0) lon_deg -= 360.0;
  return {rad_to_deg(lat), lon_deg, h};
}

EnuPosition ecef_to_enu(const EcefPosition& p, const GeodeticPosition& origin) {
  const EcefPosition o = geodetic_to_ecef(origin);
  return rotate_to_enu(enu_rotation(origin), p.x_m - o.x_m, p.y_m - o.y_m, p.z_m - o.z_m);
}

EcefPosition enu_to_ecef(const EnuPosition& p, const GeodeticPosition& origin) {
  return rotate_from_enu(enu_rotation(origin), p, geodetic_to_ecef(origin));
}

LocalFramePoint enu_to_local_frame(const EnuPosition& p, double heading_deg) {
  const double h = deg_to_rad(heading_deg);
  const double sh = std::sin(h), ch = std::cos(h);
  // forward = (sin h, cos h), left = (-cos h, sin h) in (east, north).
  return {p.east_m * sh + p.north_m * ch, -p.east_m * ch + p.north_m * sh};
}

EnuPosition local_frame_to_enu(const LocalFramePoint& p, double heading_deg) {
  const double h = deg_to_rad(heading_deg);
  const double sh = std::sin(h), ch = std::cos(h);
  return {p.x_m * sh - p.y_m * ch, p.x_m * ch + p.y_m * sh, 0.0};
}

LocalFramePoint geodetic_to_local(const GeodeticPosition& p, const GeodeticPosition& origin,
                                  double heading_deg) {
  return enu_to_local_frame(ecef_to_enu(geodetic_to_ecef(p), origin), heading_deg);
}

LocalTangentFrame::LocalTangentFrame() : LocalTangentFrame(GeodeticPosition{}) {}

LocalTangentFrame::LocalTangentFrame(const GeodeticPosition& origin)
    : origin_(origin), origin_ecef_(geodetic_to_ecef(origin)), rot_(enu_rotation(origin)) {}

EnuPosition LocalTangentFrame::to_enu(const EcefPosition& p) const {
  return rotate_to_enu(rot_, p.x_m - origin_ecef_.x_m, p.y_m - origin_ecef_.y_m,
                       p.z_m - origin_ecef_.z_m);
}

EnuPosition LocalTangentFrame::to_enu(const GeodeticPosition& p) const {
  return to_enu(geodetic_to_ecef(p));
}

EcefPosition LocalTangentFrame::to_ecef(const EnuPosition& p) const {
  return rotate_from_enu(rot_, p, origin_ecef_);
}

GeodeticPosition LocalTangentFrame::to_geodetic(const EnuPosition& p) const {
  return ecef_to_geodetic(to_ecef(p));
}

}  // namespace v2p::geo
