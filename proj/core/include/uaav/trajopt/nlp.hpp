#pragma once

#include "uaav/types.hpp"

namespace uaav::trajopt {

// Smooth nonlinear program
//   min f(x)  s.t.  c_eq(x) = 0,  c_in(x) <= 0,  lb <= x <= ub.
// Derivative methods default to central finite differences.
class NlpProblem {
 public:
  virtual ~NlpProblem() = default;

  virtual int num_vars() const = 0;
  virtual int num_eq() const = 0;
  virtual int num_ineq() const = 0;

  virtual VecX lower_bounds() const;
  virtual VecX upper_bounds() const;

  virtual double cost(const VecX& x) const = 0;
  virtual VecX cost_grad(const VecX& x) const;

  virtual VecX eq_constraints(const VecX& x) const;
  virtual MatX eq_jacobian(const VecX& x) const;

  virtual VecX ineq_constraints(const VecX& x) const;
  virtual MatX ineq_jacobian(const VecX& x) const;

  // Problems that can evaluate the Hessian of the Lagrangian
  //   f(x) + eq_duals' c_eq(x) + in_duals' c_in(x)
  // should override both methods; the solver then uses Newton steps instead
  // of quasi-Newton updates.
  virtual bool has_hessian() const { return false; }
  virtual MatX lagrangian_hessian(const VecX& x, const VecX& eq_duals,
                                  const VecX& in_duals) const;
};

}  // namespace uaav::trajopt
