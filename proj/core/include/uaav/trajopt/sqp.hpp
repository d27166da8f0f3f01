#pragma once

#include <string>
#include <vector>

#include "uaav/trajopt/nlp.hpp"

namespace uaav::trajopt {

struct SqpOptions {
  int max_iter{300};
  double feas_tol{1e-6};
  double opt_tol{1e-4};
  double initial_penalty{10.0};
  double initial_trust{1.0};
  int max_line_search{30};
  double armijo_c{0.1};
  bool verbose{false};
};

struct SqpIterate {
  double cost{0};
  double feas_inf{0};
  double kkt_inf{0};
  double merit{0};
  double penalty{0};
  double step_norm{0};
  double alpha{0};
};

enum class SqpStatus { Converged, IterationLimit, LineSearchFailure, QpFailure };

struct SqpResult {
  VecX x;
  VecX eq_duals;
  VecX ineq_duals;
  SqpStatus status{SqpStatus::IterationLimit};
  int iterations{0};
  double cost{0};
  double feas_inf{0};
  double kkt_inf{0};
  std::string message;
  std::vector<SqpIterate> history;

  bool converged() const { return status == SqpStatus::Converged; }
};

struct SqpFailure : std::runtime_error {
  explicit SqpFailure(const SqpResult& r, const std::string& what)
      : std::runtime_error(what), result(r) {}
  SqpResult result;
};

// Line-search SQP: convex QP subproblems on a damped-BFGS Lagrangian Hessian,
// globalized with an l1 exact-penalty merit function.
SqpResult solve_sqp(const NlpProblem& nlp, const VecX& x0, const SqpOptions& opts = {});

}  // namespace uaav::trajopt
