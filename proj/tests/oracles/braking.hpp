#pragma once

#include <cmath>

namespace oracle {

// Constant deceleration from v0: s = v0^2 / (2 a).
inline double stopping_distance(double v0, double brake_force_n, double mass_kg) {
  return v0 * v0 / (2.0 * brake_force_n / mass_kg);
}

// m dv/dt = -(F + c v^2)  =>  s = m / (2c) ln(1 + c v0^2 / F).
inline double stopping_distance_with_drag(double v0, double brake_force_n, double c_drag, double mass_kg) {
  return mass_kg / (2.0 * c_drag) * std::log1p(c_drag * v0 * v0 / brake_force_n);
}

// Steady-state speed under full throttle against quadratic drag.
inline double terminal_speed(double drive_force_n, double c_drag) { return std::sqrt(drive_force_n / c_drag); }

}  // namespace oracle
