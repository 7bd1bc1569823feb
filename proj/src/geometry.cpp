#include "hitmac/geometry.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hitmac {

double normalize_angle(double angle) {
  if (!std::isfinite(angle)) {
    throw std::invalid_argument("normalize_angle: non-finite angle");
  }
  double r = std::fmod(angle, 360.0);  // (-360, 360)
  if (r > 180.0) {
    r -= 360.0;
  } else if (r <= -180.0) {
    r += 360.0;
  }
  return r;
}

double angle_difference(double to, double from) {
  return normalize_angle(to - from);
}

double bearing(Point from, Point to) {
  const double dx = to.x - from.x;
  const double dy = to.y - from.y;
  if (dx == 0.0 && dy == 0.0) return 0.0;
  return normalize_angle(std::atan2(dy, dx) * 180.0 / std::numbers::pi);
}

PolarRelation relative_polar(const Pose& sensor, Point target) {
  if (!std::isfinite(sensor.x) || !std::isfinite(sensor.y) ||
      !std::isfinite(sensor.delta) || !std::isfinite(target.x) ||
      !std::isfinite(target.y)) {
    throw std::invalid_argument("relative_polar: non-finite input");
  }
  const double dx = target.x - sensor.x;
  const double dy = target.y - sensor.y;
  PolarRelation rel;
  rel.rho = std::hypot(dx, dy);
  if (rel.rho == 0.0) {
    rel.alpha = 0.0;
    return rel;
  }
  rel.alpha = normalize_angle(std::atan2(dy, dx) * 180.0 / std::numbers::pi -
                              sensor.delta);
  return rel;
}

bool is_covered(const PolarRelation& rel, double rho_max, double alpha_max) {
  return rel.rho < rho_max && std::abs(rel.alpha) < alpha_max;
}

}  // namespace hitmac
