#include "uaav/dynamics.hpp"

#include <cmath>
#include <limits>

namespace uaav {

std::string to_string(HybridMode m) {
  switch (m) {
    case HybridMode::Water: return "water";
    case HybridMode::TransitionExit: return "transition_exit";
    case HybridMode::Air: return "air";
    case HybridMode::TransitionEntry: return "transition_entry";
  }
  throw std::invalid_argument("unknown mode");
}

HybridMode mode_from_string(const std::string& s) {
  if (s == "water") return HybridMode::Water;
  if (s == "transition_exit") return HybridMode::TransitionExit;
  if (s == "air") return HybridMode::Air;
  if (s == "transition_entry") return HybridMode::TransitionEntry;
  throw std::invalid_argument("unknown mode name: " + s);
}

void VehicleParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("vehicle params: ") + what);
  };
  require(mass > 0, "mass must be positive");
  require(inertia_yy > 0, "inertia_yy must be positive");
  require(wing_length > 0, "wing_length must be positive");
  require(span > 0, "span must be positive");
  require(cg_from_te > 0 && cg_from_te < wing_length, "cg_from_te must lie inside the wing");
  require(gravity > 0, "gravity must be positive");
  require(rho_water > 0 && rho_air > 0, "densities must be positive");
  require(rho_air < rho_water, "rho_air must be lighter than rho_water");
  require(panel_fore.area >= 0 && panel_aft.area >= 0 && elevon_area >= 0,
          "panel areas must be non-negative");
  require(elevon_length > 0, "elevon_length must be positive");
  require(cd0 >= 0, "cd0 must be non-negative");
  require(drag_multiplier >= 0, "drag_multiplier must be non-negative");
  require(displaced_volume >= 0, "displaced_volume must be non-negative");
  require(volume_fraction_fore >= 0 && volume_fraction_fore <= 1,
          "volume_fraction_fore must be in [0, 1]");
  require(prop_pitch > 0, "prop_pitch must be positive");
  for (const Mat3* ma : {&added_mass_water, &added_mass_transition_exit,
                         &added_mass_transition_entry, &added_mass_air}) {
    require(ma->isApprox(ma->transpose(), 1e-12), "added mass must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> es(*ma);
    require(es.eigenvalues().minCoeff() > -1e-12, "added mass must be PSD");
  }
}

namespace dynamics {

DensityAssignment density_assignment(HybridMode mode, const VehicleParams& p) {
  switch (mode) {
    case HybridMode::Water: return {p.rho_water, p.rho_water, p.rho_water};
    case HybridMode::TransitionExit: return {p.rho_air, p.rho_water, p.rho_water};
    case HybridMode::Air: return {p.rho_air, p.rho_air, p.rho_air};
    case HybridMode::TransitionEntry: return {p.rho_water, p.rho_air, p.rho_air};
  }
  throw std::invalid_argument("unknown mode");
}

Mat3 added_mass(HybridMode mode, const VehicleParams& p) {
  switch (mode) {
    case HybridMode::Water: return p.added_mass_water;
    case HybridMode::TransitionExit: return p.added_mass_transition_exit;
    case HybridMode::Air: return p.added_mass_air;
    case HybridMode::TransitionEntry: return p.added_mass_transition_entry;
  }
  throw std::invalid_argument("unknown mode");
}

double guard_psi1(const PlanarState& x, const VehicleParams& p) {
  return x.r_z + p.nose_offset() * std::sin(x.theta);
}

double guard_psi2(const PlanarState& x, const VehicleParams& p) {
  const Vec2 tip_body = p.hinge_offset + rot2(x.delta) * Vec2(-p.elevon_length, 0.0);
  return x.r_z + (rot2(x.theta) * tip_body)[1];
}

Vec7 guard_psi1_grad(const PlanarState& x, const VehicleParams& p) {
  Vec7 g = Vec7::Zero();
  g[1] = 1.0;
  g[2] = p.nose_offset() * std::cos(x.theta);
  return g;
}

Vec7 guard_psi2_grad(const PlanarState& x, const VehicleParams& p) {
  const double hx = p.hinge_offset[0], hz = p.hinge_offset[1];
  Vec7 g = Vec7::Zero();
  g[1] = 1.0;
  g[2] = hx * std::cos(x.theta) - hz * std::sin(x.theta) -
         p.elevon_length * std::cos(x.theta + x.delta);
  g[3] = -p.elevon_length * std::cos(x.theta + x.delta);
  return g;
}

Vec2 guard_stack_signs(HybridMode mode) {
  switch (mode) {
    case HybridMode::Water: return Vec2(1, 1);
    case HybridMode::TransitionExit: return Vec2(-1, 1);
    case HybridMode::Air: return Vec2(-1, -1);
    case HybridMode::TransitionEntry: return Vec2(1, -1);
  }
  throw std::invalid_argument("unknown mode");
}

Vec2 guard_stack(const PlanarState& x, HybridMode mode, const VehicleParams& p) {
  const Vec2 s = guard_stack_signs(mode);
  return Vec2(s[0] * guard_psi1(x, p), s[1] * guard_psi2(x, p));
}

Eigen::Matrix<double, 2, 7> guard_stack_jacobian(const PlanarState& x, HybridMode mode,
                                                 const VehicleParams& p) {
  const Vec2 s = guard_stack_signs(mode);
  Eigen::Matrix<double, 2, 7> j;
  j.row(0) = s[0] * guard_psi1_grad(x, p).transpose();
  j.row(1) = s[1] * guard_psi2_grad(x, p).transpose();
  return j;
}

bool signature_consistent(const PlanarState& x, HybridMode mode, const VehicleParams& p) {
  return (guard_stack(x, mode, p).array() <= 0.0).all();
}

HybridMode mode_transition(const PlanarState& x, HybridMode mode, const VehicleParams& p) {
  const double psi1 = guard_psi1(x, p);
  const double psi2 = guard_psi2(x, p);
  switch (mode) {
    case HybridMode::Water:
      if (psi1 >= 0) return HybridMode::TransitionExit;
      if (psi2 >= 0) return HybridMode::TransitionEntry;
      return mode;
    case HybridMode::TransitionExit:
      if (psi2 >= 0) return HybridMode::Air;
      if (-psi1 >= 0) return HybridMode::Water;
      return mode;
    case HybridMode::Air:
      if (-psi1 >= 0) return HybridMode::TransitionEntry;
      if (-psi2 >= 0) return HybridMode::TransitionExit;
      return mode;
    case HybridMode::TransitionEntry:
      if (-psi2 >= 0) return HybridMode::Water;
      if (psi1 >= 0) return HybridMode::Air;
      return mode;
  }
  throw std::invalid_argument("unknown mode");
}

PlanarState reset_map(const PlanarState& x, HybridMode, HybridMode) { return x; }

namespace {

// Lift/drag of one flat plate given local flow in its chord frame. Returns the
// force in that frame. alpha is the angle of the chord above the velocity.
Vec2 plate_force(const Vec2& vel, double rho, double area, const VehicleParams& p) {
  const double speed2 = vel.squaredNorm();
  if (speed2 < 1e-12) return Vec2::Zero();
  const double alpha = std::atan2(-vel[1], vel[0]);
  const double sa = std::sin(alpha), ca = std::cos(alpha);
  const double cl = 2.0 * sa * ca;
  const double cd = 2.0 * sa * sa + p.cd0;
  const double q = 0.5 * rho * speed2 * area;
  const Vec2 vhat = vel / std::sqrt(speed2);
  const Vec2 lift_dir(-vhat[1], vhat[0]);
  return q * (cl * lift_dir - p.drag_multiplier * cd * vhat);
}

// Body-frame velocity of a body-fixed point at offset r (planar rigid body).
Vec2 point_velocity(const PlanarState& x, const Vec2& r) {
  return Vec2(x.v_x - x.omega_y * r[1], x.v_z + x.omega_y * r[0]);
}

double cross2(const Vec2& r, const Vec2& f) { return r[0] * f[1] - r[1] * f[0]; }

}  // namespace

ForceMoment forces_moments(const PlanarState& x, const ControlInput& u, HybridMode mode,
                           const VehicleParams& p) {
  const DensityAssignment rho = density_assignment(mode, p);
  const Mat2 r_wb = rot2(x.theta);
  ForceMoment out;

  // Wing panels, chord along body x.
  for (const auto& [panel, density] :
       {std::pair{&p.panel_fore, rho.fore}, std::pair{&p.panel_aft, rho.aft}}) {
    const Vec2 f = plate_force(point_velocity(x, panel->offset), density, panel->area, p);
    out.f += f;
    out.m_y += cross2(panel->offset, f);
  }

  // Elevon, chord rotated by delta about the hinge.
  {
    const Mat2 r_be = rot2(x.delta);
    const Vec2 cp = p.hinge_offset + r_be * Vec2(-p.elevon_length / 2.0, 0.0);
    const Vec2 vel_elevon = r_be.transpose() * point_velocity(x, cp);
    const Vec2 f = r_be * plate_force(vel_elevon, rho.elevon, p.elevon_area, p);
    out.f += f;
    out.m_y += cross2(cp, f);
  }

  // Buoyancy at the buoyancy center, weighted by the fluid each volume share sits in.
  {
    const double rho_eff =
        p.volume_fraction_fore * rho.fore + (1.0 - p.volume_fraction_fore) * rho.aft;
    const Vec2 f = r_wb.transpose() * Vec2(0.0, rho_eff * p.displaced_volume * p.gravity);
    out.f += f;
    out.m_y += cross2(p.buoyancy_center, f);
  }

  // Gravity through the CM, thrust along body x through the CM.
  out.f += r_wb.transpose() * Vec2(0.0, -p.mass * p.gravity);
  out.f += Vec2(u.thrust, 0.0);
  return out;
}

Vec7 dynamics_f(const PlanarState& x, const ControlInput& u, HybridMode mode,
                const VehicleParams& p) {
  const ForceMoment fm = forces_moments(x, u, mode, p);
  const Mat3 ma = added_mass(mode, p);
  Mat3 n = ma;
  n(0, 0) += p.mass;
  n(1, 1) += p.mass;
  n(2, 2) += p.inertia_yy;

  const Vec3 chi(x.v_x, x.v_z, x.omega_y);
  const Vec3 momentum = n * chi;      // (p_x, p_z, h_y)
  const Vec3 l = ma * chi;            // added-mass share, (l_x, l_z, _)

  Vec3 rhs;
  rhs[0] = fm.f[0] + x.omega_y * momentum[1];
  rhs[1] = fm.f[1] - x.omega_y * momentum[0];
  rhs[2] = fm.m_y + l[0] * x.v_z - l[1] * x.v_x;
  const Vec3 chidot = n.ldlt().solve(rhs);

  const Vec2 rdot = rot2(x.theta) * Vec2(x.v_x, x.v_z);
  Vec7 xdot;
  xdot << rdot[0], rdot[1], x.omega_y, u.delta_rate, chidot[0], chidot[1], chidot[2];
  return xdot;
}

Linearization linearize(const PlanarState& x, const ControlInput& u, HybridMode mode,
                        const VehicleParams& p) {
  constexpr double kEps = 6.0554544523933395e-06;  // cbrt(machine epsilon)
  Linearization lin;
  Vec7 xv = x.vec();
  for (int i = 0; i < 7; ++i) {
    const double h = kEps * std::max(1.0, std::abs(xv[i]));
    Vec7 hi = xv, lo = xv;
    hi[i] += h;
    lo[i] -= h;
    lin.A.col(i) = (dynamics_f(PlanarState::from_vec(hi), u, mode, p) -
                    dynamics_f(PlanarState::from_vec(lo), u, mode, p)) /
                   (2.0 * h);
  }
  Vec2 uv = u.vec();
  for (int i = 0; i < 2; ++i) {
    const double h = kEps * std::max(1.0, std::abs(uv[i]));
    Vec2 hi = uv, lo = uv;
    hi[i] += h;
    lo[i] -= h;
    lin.B.col(i) = (dynamics_f(x, ControlInput::from_vec(hi), mode, p) -
                    dynamics_f(x, ControlInput::from_vec(lo), mode, p)) /
                   (2.0 * h);
  }
  return lin;
}

}  // namespace dynamics
}  // namespace uaav
