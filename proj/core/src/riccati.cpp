#include "uaav/control/riccati.hpp"

#include <algorithm>
#include <cmath>

#include "uaav/dynamics.hpp"

namespace uaav::control {
namespace {

MatX riccati_rhs(const MatX& S, const MatX& A, const MatX& bb, const MatX& Q) {
  return A.transpose() * S + S * A - S * bb * S + Q;
}

}  // namespace

RiccatiSolution riccati_backward(const std::function<void(double, MatX&, MatX&)>& system,
                                 const MatX& Q, const MatX& R, const MatX& S_f, double horizon,
                                 double grid_dt) {
  if (horizon <= 0.0) throw RiccatiError("riccati: horizon must be positive");
  if (grid_dt <= 0.0) throw RiccatiError("riccati: grid step must be positive");
  const int n = static_cast<int>(Q.rows());
  const int m = static_cast<int>(R.rows());
  const int steps = std::max(1, static_cast<int>(std::ceil(horizon / grid_dt)));
  const double dt = horizon / steps;
  const MatX r_inv = R.inverse();

  RiccatiSolution sol;
  sol.tau.resize(steps + 1);
  sol.S.resize(steps + 1);
  sol.K.resize(steps + 1);

  MatX a(n, n), b(n, m);
  const auto rhs_at = [&](double tau, const MatX& s) {
    system(tau, a, b);
    return riccati_rhs(s, a, b * r_inv * b.transpose(), Q);
  };
  const auto record = [&](int idx, double tau, const MatX& s) {
    system(tau, a, b);
    sol.tau[idx] = tau;
    sol.S[idx] = s;
    sol.K[idx] = r_inv * b.transpose() * s;
  };

  MatX s = 0.5 * (S_f + S_f.transpose());
  record(steps, horizon, s);
  for (int i = steps - 1; i >= 0; --i) {
    const double t_hi = (i + 1) * dt, t_mid = (i + 0.5) * dt, t_lo = i * dt;
    const MatX k1 = rhs_at(t_hi, s);
    const MatX k2 = rhs_at(t_mid, s + 0.5 * dt * k1);
    const MatX k3 = rhs_at(t_mid, s + 0.5 * dt * k2);
    const MatX k4 = rhs_at(t_lo, s + dt * k3);
    s += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    s = (0.5 * (s + s.transpose())).eval();
    if (!s.allFinite() || s.norm() > 1e9)
      throw RiccatiError("riccati: cost-to-go diverged; the linearized pair looks uncontrollable");
    record(i, t_lo, s);
  }
  return sol;
}

RiccatiSolution riccati_backward(const trajopt::NominalTrajectory& traj, HybridMode mode,
                                 const VehicleParams& params, const Mat77& Q, const Mat2& R,
                                 const Mat77& S_f, double grid_dt) {
  const auto& phase = traj.phase_for(mode);
  const auto system = [&](double tau, MatX& a_out, MatX& b_out) {
    const trajopt::TrajectorySample s = trajopt::sample(traj, tau, mode);
    const dynamics::Linearization lin = dynamics::linearize(
        PlanarState::from_vec(s.x), ControlInput::from_vec(s.u), mode, params);
    a_out = lin.A;
    b_out = lin.B;
  };
  return riccati_backward(system, Q, R, S_f, phase.duration(), grid_dt);
}

LqrResult lqr_infinite(const MatX& A, const MatX& B, const MatX& Q, const MatX& R) {
  const MatX r_inv = R.inverse();
  const MatX bb = B * r_inv * B.transpose();
  MatX s = MatX::Zero(A.rows(), A.cols());
  const double t_cap = 2000.0;
  for (double t = 0.0; t < t_cap;) {
    const MatX k1 = riccati_rhs(s, A, bb, Q);
    if (k1.lpNorm<Eigen::Infinity>() < 1e-9) {
      LqrResult out;
      out.S = s;
      out.K = r_inv * B.transpose() * s;
      return out;
    }
    // Explicit RK4 needs the step inside the stability region of the local
    // linearized flow, whose spectrum scales with ||A|| and ||B R^-1 B^T S||.
    const double dt = std::min(1e-2, 1.0 / (2.0 * A.norm() + 2.0 * bb.norm() * s.norm() + 1.0));
    const MatX k2 = riccati_rhs(s + 0.5 * dt * k1, A, bb, Q);
    const MatX k3 = riccati_rhs(s + 0.5 * dt * k2, A, bb, Q);
    const MatX k4 = riccati_rhs(s + dt * k3, A, bb, Q);
    s += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    s = (0.5 * (s + s.transpose())).eval();
    if (!s.allFinite() || s.norm() > 1e9)
      throw RiccatiError("lqr: cost-to-go diverged; the pair looks unstabilizable");
    t += dt;
  }
  throw RiccatiError("lqr: Riccati flow failed to settle; the pair looks unstabilizable");
}

}  // namespace uaav::control
