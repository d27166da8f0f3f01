#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace uaav {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat27 = Eigen::Matrix<double, 2, 7>;
using Mat77 = Eigen::Matrix<double, 7, 7>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// ---- Small math helpers ----

// Planar body-to-world rotation; positive theta pitches the nose up (world z up).
inline Mat2 rot2(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI;
}

// ---- Hybrid mode ----

enum class HybridMode { Water = 0, TransitionExit = 1, Air = 2, TransitionEntry = 3 };
inline constexpr int kNumModes = 4;

std::string to_string(HybridMode m);
HybridMode mode_from_string(const std::string& s);

// Fluid density seen by each force panel in a given mode.
struct DensityAssignment {
  double fore{0};
  double aft{0};
  double elevon{0};
};

// ---- State and input ----

// x = (r_x, r_z, theta, delta, v_x, v_z, omega_y)
// r in world frame (z up, water surface at z = 0), v in body frame.
struct PlanarState {
  double r_x{0};
  double r_z{0};
  double theta{0};
  double delta{0};
  double v_x{0};
  double v_z{0};
  double omega_y{0};

  Vec7 vec() const {
    Vec7 v;
    v << r_x, r_z, theta, delta, v_x, v_z, omega_y;
    return v;
  }
  static PlanarState from_vec(const Vec7& v) {
    PlanarState s;
    s.r_x = v[0];
    s.r_z = v[1];
    s.theta = v[2];
    s.delta = v[3];
    s.v_x = v[4];
    s.v_z = v[5];
    s.omega_y = v[6];
    return s;
  }
};

// u = (elevon deflection rate, thrust along body x)
struct ControlInput {
  double delta_rate{0};
  double thrust{0};

  Vec2 vec() const { return Vec2(delta_rate, thrust); }
  static ControlInput from_vec(const Vec2& v) { return ControlInput{v[0], v[1]}; }
};

// ---- Vehicle parameters ----

// One lifting panel of the flat-plate force model: area and center-of-pressure
// offset from the CM in body coordinates.
struct PanelGeometry {
  double area{0};
  Vec2 offset{Vec2::Zero()};
};

struct VehicleParams {
  double mass{0.375};          // kg
  double inertia_yy{0.006};    // kg m^2, pitch axis
  double wing_length{0.5};     // m, nose to trailing edge along body x
  double span{0.61};           // m
  double cg_from_te{0.17};     // m, CM forward of the trailing edge
  double gravity{9.81};        // m/s^2

  double rho_water{1000.0};    // kg/m^3
  double rho_air{1.22};        // kg/m^3

  // Flat-plate panels. Elevons are slaved, so one equivalent surface.
  PanelGeometry panel_fore{0.068, Vec2(0.11, 0.0)};
  PanelGeometry panel_aft{0.085, Vec2(-0.08, 0.0)};
  double elevon_area{0.02};            // m^2
  Vec2 hinge_offset{Vec2(-0.17, 0.0)}; // m, elevon hinge in body frame
  double elevon_length{0.05};          // m, hinge to tip
  double cd0{0.02};                    // parasitic drag coefficient, all panels
  double drag_multiplier{1.0};         // robustness sweeps scale total drag

  double displaced_volume{4.2e-4};     // m^3
  Vec2 buoyancy_center{Vec2(-0.05, 0.0)};
  double volume_fraction_fore{0.5};    // share of displaced volume ahead of the CM

  double prop_pitch{0.1016};           // m/rev, advance per propeller revolution

  // Added fluid mass over the (v_x, v_z, omega_y) channels, one matrix per mode.
  Mat3 added_mass_water{(Mat3() << 0.08, 0, 0, 0, 2.5, 0, 0, 0, 0.03).finished()};
  Mat3 added_mass_transition_exit{(Mat3() << 0.05, 0, 0, 0, 1.2, 0, 0, 0, 0.015).finished()};
  Mat3 added_mass_transition_entry{(Mat3() << 0.05, 0, 0, 0, 1.2, 0, 0, 0, 0.015).finished()};
  Mat3 added_mass_air{Mat3::Zero()};

  double nose_offset() const { return wing_length - cg_from_te; }

  // Throws std::invalid_argument on non-physical values.
  void validate() const;
};

}  // namespace uaav
