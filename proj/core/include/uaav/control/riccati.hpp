#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "uaav/trajopt/transcription.hpp"
#include "uaav/types.hpp"

namespace uaav::control {

struct RiccatiError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense samples of a finite-horizon LQR solution on a uniform grid over
// [0, horizon], ascending in tau.
struct RiccatiSolution {
  std::vector<double> tau;
  std::vector<MatX> S;  // cost-to-go, symmetric PSD
  std::vector<MatX> K;  // R^-1 B(tau)^T S(tau)
};

// Integrates -dS/dtau = A^T S + S A - S B R^-1 B^T S + Q backward from
// S(horizon) = S_f. `system` fills A and B at a given tau. RK4 on the matrix
// ODE, resymmetrized every step; throws RiccatiError when ||S|| passes 1e9.
RiccatiSolution riccati_backward(const std::function<void(double, MatX&, MatX&)>& system,
                                 const MatX& Q, const MatX& R, const MatX& S_f, double horizon,
                                 double grid_dt);

// Linearizes the dynamics along one phase of a nominal trajectory and runs
// the backward sweep over that phase's duration.
RiccatiSolution riccati_backward(const trajopt::NominalTrajectory& traj, HybridMode mode,
                                 const VehicleParams& params, const Mat77& Q, const Mat2& R,
                                 const Mat77& S_f, double grid_dt);

struct LqrResult {
  MatX S, K;
};

// Continuous-time infinite-horizon LQR: runs the Riccati flow from S = 0
// until ||dS/dt|| drops below 1e-9. Throws RiccatiError when S diverges or
// the flow fails to settle, both signs of an unstabilizable pair.
LqrResult lqr_infinite(const MatX& A, const MatX& B, const MatX& Q, const MatX& R);

}  // namespace uaav::control
