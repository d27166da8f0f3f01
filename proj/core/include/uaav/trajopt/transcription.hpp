#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uaav/trajopt/sqp.hpp"
#include "uaav/types.hpp"

namespace uaav::trajopt {

// ---- Multi-phase Hermite-Simpson transcription, dimension-generic ----
//
// A phase contributes n intervals (n+1 knot points); consecutive phases share
// their boundary knot, so state continuity is structural rather than a
// constraint. Each interval adds one compressed Simpson defect; each knot
// optionally carries a stay-inequality stack; the last knot of every
// non-terminal phase carries an exit-guard equality.

struct PhaseSpec {
  int num_intervals{0};
  std::function<VecX(const VecX&, const VecX&)> dynamics;
  std::function<void(const VecX&, const VecX&, MatX&, MatX&)> dynamics_jacobian;
  std::function<VecX(const VecX&)> stay;  // rows <= 0 inside the phase
  std::function<MatX(const VecX&)> stay_jacobian;
  std::function<double(const VecX&)> exit_guard;  // = 0 at the phase boundary
  std::function<VecX(const VecX&)> exit_guard_grad;
};

struct CollocationBounds {
  VecX x_lo, x_hi;    // every knot state
  VecX u_lo, u_hi;    // every knot control
  VecX x0_lo, x0_hi;  // first knot
  VecX xf_lo, xf_hi;  // last knot
  double h_min{1e-3};
  double h_max{0.25};
};

class CollocationNlp : public NlpProblem {
 public:
  CollocationNlp(int nx, int nu, std::vector<PhaseSpec> phases, CollocationBounds bounds,
                 MatX control_cost, double time_cost);
  ~CollocationNlp() override;

  int num_vars() const override;
  int num_eq() const override;
  int num_ineq() const override;
  VecX lower_bounds() const override;
  VecX upper_bounds() const override;
  double cost(const VecX& z) const override;
  VecX cost_grad(const VecX& z) const override;
  VecX eq_constraints(const VecX& z) const override;
  MatX eq_jacobian(const VecX& z) const override;
  VecX ineq_constraints(const VecX& z) const override;
  MatX ineq_jacobian(const VecX& z) const override;
  bool has_hessian() const override { return true; }
  MatX lagrangian_hessian(const VecX& z, const VecX& eq_duals,
                          const VecX& in_duals) const override;

  // Decision-vector layout: [x_0 u_0 x_1 u_1 ... x_N u_N h_0 ... h_{P-1}].
  int num_knots() const { return total_intervals_ + 1; }
  int num_phases() const { return static_cast<int>(phases_.size()); }
  int state_offset(int k) const { return k * (nx_ + nu_); }
  int control_offset(int k) const { return k * (nx_ + nu_) + nx_; }
  int h_offset(int j) const { return num_knots() * (nx_ + nu_) + j; }
  int first_knot(int phase) const { return phase_start_[phase]; }
  int last_knot(int phase) const { return phase_start_[phase] + phases_[phase].num_intervals; }
  int nx() const { return nx_; }
  int nu() const { return nu_; }

  // Straight line between the initial- and final-box centers, mid-range
  // controls, mid-range steps.
  VecX initial_guess() const;

 private:
  struct Cache;
  const Cache& values(const VecX& z) const;
  const Cache& jacobians(const VecX& z) const;

  int nx_, nu_;
  std::vector<PhaseSpec> phases_;
  CollocationBounds bounds_;
  MatX control_cost_;
  double time_cost_;
  std::vector<int> phase_start_;  // global knot index of each phase's first knot
  int total_intervals_{0};
  int num_stay_rows_{0};
  int num_guard_rows_{0};
  std::unique_ptr<Cache> cache_;
};

// Simpson defect for one interval, exposed for direct checking.
VecX hermite_simpson_defect(const std::function<VecX(const VecX&, const VecX&)>& f,
                            const VecX& x_k, const VecX& x_k1, const VecX& u_k,
                            const VecX& u_k1, double h);

double stage_cost(const VecX& u, double h, const MatX& R, double D);

// ---- Water-exit problem front end ----

struct ModeSchedule {
  std::vector<HybridMode> phases;
  std::vector<int> knots_per_phase;  // collocation intervals n_i per phase

  static ModeSchedule water_exit();
};

struct TrajOptProblem {
  ModeSchedule schedule = ModeSchedule::water_exit();
  Vec7 x_init, delta_init;
  Vec7 x_final, delta_final;
  Vec7 x_min, x_max;
  Vec2 u_min, u_max;
  double h_min{1e-3}, h_max{0.25};
  Mat2 R = Mat2::Identity();
  double D{1.0};

  TrajOptProblem();
};

struct NominalTrajectory {
  struct Phase {
    HybridMode mode{HybridMode::Water};
    std::vector<Vec7> states;    // n+1 knots
    std::vector<Vec2> controls;  // n+1
    std::vector<Vec7> derivs;    // dynamics at the knots, for interpolation
    double h{0};
    double start_time{0};

    int intervals() const { return static_cast<int>(states.size()) - 1; }
    double duration() const { return h * intervals(); }
  };

  std::vector<Phase> phases;

  double total_duration() const;
  int phase_index(HybridMode mode) const;  // -1 when the mode is absent
  const Phase& phase_for(HybridMode mode) const;
};

struct TrajectorySample {
  Vec7 x;
  Vec2 u;
  bool clamped{false};
};

// Cubic Hermite state / linear control interpolation at phase-local time tau.
TrajectorySample sample(const NominalTrajectory& traj, double tau, HybridMode mode);

struct TrajOptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::unique_ptr<CollocationNlp> build_problem(const TrajOptProblem& p,
                                              const VehicleParams& params);

struct SolverOptions {
  double feas_tol{1e-6};
  double opt_tol{1e-4};
  int max_iter{300};
  bool verbose{false};
};

struct TrajOptSolution {
  NominalTrajectory trajectory;
  int iterations{0};
  double cost{0};
  double feas_inf{0};
  double kkt_inf{0};
};

NominalTrajectory decode_trajectory(const CollocationNlp& nlp, const VecX& z,
                                    const TrajOptProblem& p, const VehicleParams& params);

TrajOptSolution solve(const TrajOptProblem& p, const VehicleParams& params,
                      const SolverOptions& opts = {});

// CSV exchange format shared with the control and sim layers.
void save_trajectory(const std::string& path, const NominalTrajectory& traj);
NominalTrajectory load_trajectory(const std::string& path, const VehicleParams& params);

}  // namespace uaav::trajopt
