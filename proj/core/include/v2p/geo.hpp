#pragma once

// WGS84 geodetic, ECEF, ENU and vehicle-local planar frames.
//
// Conventions used throughout the library:
//   * heading is compass heading in degrees, 0 = north, clockwise positive;
//   * the local frame has x along the heading (forward) and y to the left,
//     so it is right-handed with z up and angles in it are counter-clockwise.

#include <array>

namespace v2p::geo {

namespace wgs84 {
inline constexpr double kSemiMajor = 6378137.0;
inline constexpr double kFlattening = 1.0 / 298.257223563;
inline constexpr double kSemiMinor = kSemiMajor * (1.0 - kFlattening);
inline constexpr double kE2 = kFlattening * (2.0 - kFlattening);
/// Second eccentricity squared, e'^2 = (a^2 - b^2) / b^2.
inline constexpr double kEp2 = kE2 / ((1.0 - kFlattening) * (1.0 - kFlattening));
}  // namespace wgs84

inline constexpr double kPi = 3.14159265358979323846;

constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

struct GeodeticPosition {
  double lat_deg = 0.0;
  double lon_deg = 0.0;
  double elev_m = 0.0;

  bool operator==(const GeodeticPosition&) const = default;
};

struct EcefPosition {
  double x_m = 0.0;
  double y_m = 0.0;
  double z_m = 0.0;

  bool operator==(const EcefPosition&) const = default;
};

struct EnuPosition {
  double east_m = 0.0;
  double north_m = 0.0;
  double up_m = 0.0;

  bool operator==(const EnuPosition&) const = default;
};

struct LocalFramePoint {
  double x_m = 0.0;
  double y_m = 0.0;

  bool operator==(const LocalFramePoint&) const = default;
};

/// Maps any longitude onto [-180, 180).
double normalize_longitude(double lon_deg);

/// Wraps an angle in degrees onto [0, 360).
double normalize_heading(double heading_deg);

/// Wraps an angle in radians onto (-pi, pi].
double wrap_pi(double rad);

/// Throws InvalidInput unless lat is in [-90, 90], lon in [-180, 180) and
/// all components are finite.
void validate(const GeodeticPosition& p);

EcefPosition geodetic_to_ecef(const GeodeticPosition& p);

/// Inverse of geodetic_to_ecef using Bowring's method with three fixed
/// iterations (sub-millimetre for terrestrial heights).
GeodeticPosition ecef_to_geodetic(const EcefPosition& p);

EnuPosition ecef_to_enu(const EcefPosition& p, const GeodeticPosition& origin);
EcefPosition enu_to_ecef(const EnuPosition& p, const GeodeticPosition& origin);

/// Planar projection of an ENU offset into the heading-aligned frame; the up
/// component is discarded.
LocalFramePoint enu_to_local_frame(const EnuPosition& p, double heading_deg);

/// Inverse of enu_to_local_frame for a point on the ground plane (up = 0).
EnuPosition local_frame_to_enu(const LocalFramePoint& p, double heading_deg);

/// geodetic -> ECEF -> ENU(origin) -> local(heading) in one call.
LocalFramePoint geodetic_to_local(const GeodeticPosition& p, const GeodeticPosition& origin,
                                  double heading_deg);

/// Precomputed tangent plane at a fixed origin. Same results as the free
/// functions, without recomputing the origin's trigonometry on every call.
class LocalTangentFrame {
 public:
  LocalTangentFrame();
  explicit LocalTangentFrame(const GeodeticPosition& origin);

  const GeodeticPosition& origin() const { return origin_; }
  const EcefPosition& origin_ecef() const { return origin_ecef_; }

  EnuPosition to_enu(const EcefPosition& p) const;
  EnuPosition to_enu(const GeodeticPosition& p) const;
  EcefPosition to_ecef(const EnuPosition& p) const;
  GeodeticPosition to_geodetic(const EnuPosition& p) const;

 private:
  GeodeticPosition origin_;
  EcefPosition origin_ecef_;
  // Rows are the east, north and up unit vectors expressed in ECEF.
  std::array<std::array<double, 3>, 3> rot_{};
};

}  // namespace v2p::geo
