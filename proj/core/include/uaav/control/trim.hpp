#pragma once

#include <stdexcept>

#include "uaav/types.hpp"

namespace uaav::control {

struct TrimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Equilibrium of the reduced state (pitch, elevon, velocities, pitch rate).
// Positions are excluded, pitch and speed are held at the guard state's
// values, and the elevon angle, thrust, and velocity direction are chosen to
// null the remaining dynamics. `residual` is the reduced-dynamics norm left
// at the returned point.
struct TrimCondition {
  Vec7 x_trim{Vec7::Zero()};
  Vec2 u_trim{Vec2::Zero()};
  double residual{0};
};

// Throws TrimError when the achievable residual exceeds trim_tol.
TrimCondition compute_trim(const PlanarState& x_guard, HybridMode mode,
                           const VehicleParams& params, double trim_tol = 1e-3);

}  // namespace uaav::control
