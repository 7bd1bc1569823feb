#pragma once

// Angle arithmetic and sensor/target polar relations. All angles are in
// degrees and normalized into (-180, 180].

namespace hitmac {

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double delta = 0.0;  // orientation, degrees
};

struct PolarRelation {
  double rho = 0.0;
  double alpha = 0.0;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Throws std::invalid_argument for non-finite input.
double normalize_angle(double angle);

// Shortest signed difference to - from, in (-180, 180].
double angle_difference(double to, double from);

// Relative polar coordinates of a target seen from a sensor. A target sitting
// exactly on the sensor has alpha = 0.
PolarRelation relative_polar(const Pose& sensor, Point target);

// Strict wedge membership: rho < rho_max and |alpha| < alpha_max.
bool is_covered(const PolarRelation& rel, double rho_max, double alpha_max);

// Bearing of `to` from `from` in degrees, (-180, 180].
double bearing(Point from, Point to);

}  // namespace hitmac
