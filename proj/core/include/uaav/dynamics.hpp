#pragma once

#include "uaav/types.hpp"

namespace uaav::dynamics {

// ---- Mode geometry ----

DensityAssignment density_assignment(HybridMode mode, const VehicleParams& p);
Mat3 added_mass(HybridMode mode, const VehicleParams& p);

// Height of the nose above the water surface.
double guard_psi1(const PlanarState& x, const VehicleParams& p);
// Height of the elevon tip above the water surface.
double guard_psi2(const PlanarState& x, const VehicleParams& p);

// Gradients with respect to the 7-component state vector.
Vec7 guard_psi1_grad(const PlanarState& x, const VehicleParams& p);
Vec7 guard_psi2_grad(const PlanarState& x, const VehicleParams& p);

// Stay-in-mode stack: both components are <= 0 while the state is consistent
// with `mode`. Component order is (psi1 term, psi2 term) with mode-dependent
// signs: Water (+,+), TransitionExit (-,+), Air (-,-), TransitionEntry (+,-).
Vec2 guard_stack(const PlanarState& x, HybridMode mode, const VehicleParams& p);
Eigen::Matrix<double, 2, 7> guard_stack_jacobian(const PlanarState& x, HybridMode mode,
                                                 const VehicleParams& p);
// Signs used by guard_stack for a mode, as (s1, s2): stack = (s1*psi1, s2*psi2).
Vec2 guard_stack_signs(HybridMode mode);

// True if the sign pattern of (psi1, psi2) matches the mode's interior.
bool signature_consistent(const PlanarState& x, HybridMode mode, const VehicleParams& p);

// Guard-triggered successor; returns `mode` unchanged when no guard has fired.
HybridMode mode_transition(const PlanarState& x, HybridMode mode, const VehicleParams& p);

// State is continuous across transitions.
PlanarState reset_map(const PlanarState& x, HybridMode from, HybridMode to);

// ---- Forces and dynamics ----

struct ForceMoment {
  Vec2 f{Vec2::Zero()};  // body-frame force on the CM
  double m_y{0};         // pitch moment about the CM, nose-up positive
};

ForceMoment forces_moments(const PlanarState& x, const ControlInput& u, HybridMode mode,
                           const VehicleParams& p);

// Time derivative of the 7-component state.
Vec7 dynamics_f(const PlanarState& x, const ControlInput& u, HybridMode mode,
                const VehicleParams& p);

// World-frame CM acceleration implied by a state and its derivative.
inline Vec2 world_accel(const PlanarState& x, const Vec7& xdot) {
  const Vec2 a_body(xdot[4] - x.omega_y * x.v_z, xdot[5] + x.omega_y * x.v_x);
  return rot2(x.theta) * a_body;
}

struct Linearization {
  Mat77 A{Mat77::Zero()};
  Eigen::Matrix<double, 7, 2> B{Eigen::Matrix<double, 7, 2>::Zero()};
};

// Central-difference Jacobians of dynamics_f at (x, u) for a fixed mode.
Linearization linearize(const PlanarState& x, const ControlInput& u, HybridMode mode,
                        const VehicleParams& p);

}  // namespace uaav::dynamics
