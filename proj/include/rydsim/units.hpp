#pragma once

#include <cmath>
#include <numbers>

// Internal units: angular frequency in rad/s, time in seconds, length in um.
// Experiment-facing values are quoted as "2pi x MHz" and us; the helpers
// below do the conversion at the boundary.

namespace rydsim {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kPi = std::numbers::pi;

// 2pi x `f` MHz, in rad/s.
inline constexpr double mhz(double f) { return kTwoPi * 1e6 * f; }

// rad/s back to the 2pi x MHz convention.
inline constexpr double to_mhz(double w) { return w / (kTwoPi * 1e6); }

inline constexpr double microseconds(double t) { return 1e-6 * t; }
inline constexpr double to_microseconds(double t) { return 1e6 * t; }

// Sweep rate quoted as MHz/us (of the 2pi-divided detuning), in rad/s^2.
inline constexpr double mhz_per_us(double s) { return mhz(s) / 1e-6; }
inline constexpr double to_mhz_per_us(double s) { return to_mhz(s) * 1e-6; }

}  // namespace rydsim
