#pragma once

#include "uaav/types.hpp"

namespace uaav::trajopt {

// Convex QP:  min 0.5 x'Hx + g'x  s.t.  A_eq x = b_eq,  A_in x <= b_in.
// H must be symmetric positive definite.
struct QpResult {
  VecX x;
  VecX eq_duals;    // lambda in  Hx + g + A_eq' lambda + A_in' mu = 0
  VecX ineq_duals;  // mu >= 0, complementary to inactive rows
  int iterations{0};
  double objective{0};
};

struct QpInfeasible : std::runtime_error {
  using std::runtime_error::runtime_error;
};

QpResult solve_qp(const MatX& H, const VecX& g, const MatX& A_eq, const VecX& b_eq,
                  const MatX& A_in, const VecX& b_in);

}  // namespace uaav::trajopt
