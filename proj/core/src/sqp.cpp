#include "uaav/trajopt/sqp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "uaav/trajopt/qp.hpp"

namespace uaav::trajopt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFdStep = 6.0554544523933395e-06;  // cbrt(machine epsilon)

VecX fd_gradient(const std::function<double(const VecX&)>& f, const VecX& x) {
  VecX g(x.size());
  VecX xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double h = kFdStep * std::max(1.0, std::abs(x[i]));
    const double xi = x[i];
    xp[i] = xi + h;
    const double fp = f(xp);
    xp[i] = xi - h;
    const double fm = f(xp);
    xp[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

MatX fd_jacobian(const std::function<VecX(const VecX&)>& c, const VecX& x, int rows) {
  MatX jac(rows, x.size());
  VecX xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double h = kFdStep * std::max(1.0, std::abs(x[i]));
    const double xi = x[i];
    xp[i] = xi + h;
    const VecX cp = c(xp);
    xp[i] = xi - h;
    const VecX cm = c(xp);
    xp[i] = xi;
    jac.col(i) = (cp - cm) / (2.0 * h);
  }
  return jac;
}

}  // namespace

VecX NlpProblem::lower_bounds() const { return VecX::Constant(num_vars(), -kInf); }
VecX NlpProblem::upper_bounds() const { return VecX::Constant(num_vars(), kInf); }

VecX NlpProblem::cost_grad(const VecX& x) const {
  return fd_gradient([this](const VecX& v) { return cost(v); }, x);
}

VecX NlpProblem::eq_constraints(const VecX&) const { return VecX::Zero(0); }

MatX NlpProblem::eq_jacobian(const VecX& x) const {
  if (num_eq() == 0) return MatX::Zero(0, num_vars());
  return fd_jacobian([this](const VecX& v) { return eq_constraints(v); }, x, num_eq());
}

VecX NlpProblem::ineq_constraints(const VecX&) const { return VecX::Zero(0); }

MatX NlpProblem::ineq_jacobian(const VecX& x) const {
  if (num_ineq() == 0) return MatX::Zero(0, num_vars());
  return fd_jacobian([this](const VecX& v) { return ineq_constraints(v); }, x, num_ineq());
}

MatX NlpProblem::lagrangian_hessian(const VecX&, const VecX&, const VecX&) const {
  throw std::logic_error("nlp: lagrangian_hessian not implemented");
}

namespace {

struct Evaluation {
  double f{0};
  VecX g;
  VecX c_eq;
  MatX j_eq;
  VecX c_in;
  MatX j_in;
};

Evaluation evaluate_values(const NlpProblem& nlp, const VecX& x) {
  Evaluation ev;
  ev.f = nlp.cost(x);
  ev.c_eq = nlp.eq_constraints(x);
  ev.c_in = nlp.ineq_constraints(x);
  return ev;
}

// Derivatives are only needed for accepted iterates, not line-search trials.
void add_derivatives(const NlpProblem& nlp, const VecX& x, Evaluation& ev) {
  ev.g = nlp.cost_grad(x);
  ev.j_eq = nlp.eq_jacobian(x);
  ev.j_in = nlp.ineq_jacobian(x);
}

double violation_l1(const Evaluation& ev, const VecX& x, const VecX& lb, const VecX& ub) {
  double v = ev.c_eq.lpNorm<1>();
  for (int i = 0; i < ev.c_in.size(); ++i) v += std::max(0.0, ev.c_in[i]);
  for (int i = 0; i < x.size(); ++i) {
    if (lb[i] > -kInf) v += std::max(0.0, lb[i] - x[i]);
    if (ub[i] < kInf) v += std::max(0.0, x[i] - ub[i]);
  }
  return v;
}

double violation_inf(const Evaluation& ev) {
  double v = ev.c_eq.size() > 0 ? ev.c_eq.lpNorm<Eigen::Infinity>() : 0.0;
  for (int i = 0; i < ev.c_in.size(); ++i) v = std::max(v, ev.c_in[i]);
  return v;
}

// Endgame polish. Near a solution whose reduced Hessian has a nearly flat
// direction, closing the last of the stationarity residual takes a long step
// along the valley; the QP clips such steps against linearized inequalities
// that the true arc never touches, and the iteration stalls. Newton on the
// frozen active set takes the long step directly. The result only counts if
// it independently verifies: feasibility, multiplier signs, stationarity.
struct PolishOutcome {
  bool ok{false};
  VecX x, lambda, nu;
  double cost{0}, feas{0}, kkt{0};
};

PolishOutcome polish_active_set(const NlpProblem& nlp, VecX x, const VecX& lb, const VecX& ub,
                                double feas_tol, double opt_tol) {
  const int n = nlp.num_vars(), me = nlp.num_eq(), mi = nlp.num_ineq();
  PolishOutcome out;
  std::vector<char> banned_row(mi, 0), banned_var(n, 0);

  for (int it = 0; it < 10; ++it) {
    const VecX g = nlp.cost_grad(x);
    const MatX j_eq = nlp.eq_jacobian(x);
    const MatX j_in = nlp.ineq_jacobian(x);
    const VecX c_eq = nlp.eq_constraints(x);
    const VecX c_in = nlp.ineq_constraints(x);

    std::vector<int> act;
    for (int r = 0; r < mi; ++r) {
      if (banned_row[r] || c_in[r] < -1e-7) continue;
      bool dup = false;  // implied by an equality row: its multiplier carries the weight
      const double rn = j_in.row(r).norm();
      for (int q = 0; q < me && !dup && rn > 0; ++q) {
        const double qn = j_eq.row(q).norm();
        if (qn > 0 && std::abs(j_in.row(r).dot(j_eq.row(q))) / (rn * qn) >= 1.0 - 1e-8) dup = true;
      }
      if (!dup) act.push_back(r);
    }
    std::vector<int> fixed;
    std::vector<double> side;  // +1 upper, -1 lower, 0 fixed by both
    for (int i = 0; i < n; ++i) {
      if (banned_var[i]) continue;
      const double span = 1e-7 * (1.0 + std::abs(x[i]));
      const bool up = ub[i] - x[i] <= span, lo = x[i] - lb[i] <= span;
      if (up || lo) {
        fixed.push_back(i);
        side.push_back(up && lo ? 0.0 : (up ? 1.0 : -1.0));
      }
    }

    const int na = static_cast<int>(act.size()), nf = static_cast<int>(fixed.size());
    MatX jac(me + na + nf, n);
    VecX rhs(me + na + nf);
    jac.topRows(me) = j_eq;
    rhs.head(me) = c_eq;
    for (int a = 0; a < na; ++a) {
      jac.row(me + a) = j_in.row(act[a]);
      rhs[me + a] = c_in[act[a]];
    }
    for (int f = 0; f < nf; ++f) {
      jac.row(me + na + f).setZero();
      jac(me + na + f, fixed[f]) = 1.0;
      rhs[me + na + f] = 0.0;
    }

    Eigen::ColPivHouseholderQR<MatX> qrj(jac.transpose());
    const VecX y = qrj.solve(-g);
    if (!y.allFinite()) return out;
    const double kkt = (g + jac.transpose() * y).lpNorm<Eigen::Infinity>();

    bool signs_ok = true;
    for (int a = 0; a < na; ++a)
      if (y[me + a] < -1e-8) {
        banned_row[act[a]] = 1;
        signs_ok = false;
      }
    for (int f = 0; f < nf; ++f) {
      const double sy = side[f] * y[me + na + f];
      if (side[f] != 0.0 && sy < -1e-8) {
        banned_var[fixed[f]] = 1;
        signs_ok = false;
      }
    }

    double feas = c_eq.size() ? c_eq.lpNorm<Eigen::Infinity>() : 0.0;
    for (int r = 0; r < mi; ++r) feas = std::max(feas, c_in[r]);
    for (int i = 0; i < n; ++i)
      feas = std::max({feas, lb[i] - x[i], x[i] - ub[i]});
    if (feas > 1e-2) return out;  // the frozen set is taking us nowhere

    if (signs_ok && kkt <= opt_tol && feas <= feas_tol) {
      out.ok = true;
      out.x = x;
      out.lambda = y.head(me);
      out.nu = VecX::Zero(mi);
      for (int a = 0; a < na; ++a) out.nu[act[a]] = std::max(y[me + a], 0.0);
      out.cost = nlp.cost(x);
      out.feas = feas;
      out.kkt = kkt;
      return out;
    }
    if (!signs_ok) continue;  // re-select the working set before stepping

    VecX nu_h = VecX::Zero(mi);
    for (int a = 0; a < na; ++a) nu_h[act[a]] = std::max(y[me + a], 0.0);
    MatX hess = nlp.lagrangian_hessian(x, y.head(me), nu_h);
    hess = (0.5 * (hess + hess.transpose())).eval();

    const int rk = static_cast<int>(qrj.rank());
    const MatX q_full = qrj.householderQ() * MatX::Identity(n, n);
    const MatX z = q_full.rightCols(n - rk);
    const MatX r_fac = qrj.matrixR().topRows(rk).template triangularView<Eigen::Upper>();
    const VecX bp = qrj.colsPermutation().transpose() * (-rhs);
    const VecX y1 = r_fac.leftCols(rk)
                        .template triangularView<Eigen::Upper>()
                        .transpose()
                        .solve(bp.head(rk));
    const VecX d_p = q_full.leftCols(rk) * y1;
    MatX h_r = z.transpose() * hess * z;
    const VecX g_r = z.transpose() * (g + hess * d_p);
    VecX q_step;
    bool solved = false;
    for (double t : {0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2, 1.0}) {
      MatX h_t = h_r;
      h_t.diagonal().array() += t;
      Eigen::LLT<MatX> llt(h_t);
      if (llt.info() == Eigen::Success) {
        q_step = llt.solve(-g_r);
        solved = true;
        break;
      }
    }
    if (!solved) return out;
    VecX d = d_p + z * q_step;
    // The rows fixing bound-active variables hold their components at zero up
    // to solve roundoff; snap them so the ratio test below sees true zeros.
    for (int f = 0; f < nf; ++f) d[fixed[f]] = 0.0;
    const double dn = d.lpNorm<Eigen::Infinity>();
    if (dn > 10.0) d *= 10.0 / dn;
    // Ratio test: stop the step at the first bound instead of clamping, which
    // would knock the equalities the step was keeping satisfied.
    double alpha = 1.0;
    for (int i = 0; i < n; ++i) {
      if (d[i] > 0.0) alpha = std::min(alpha, std::max(ub[i] - x[i], 0.0) / d[i]);
      if (d[i] < 0.0) alpha = std::min(alpha, std::max(x[i] - lb[i], 0.0) / -d[i]);
    }
    if (alpha <= 0.0) return out;  // blocked in place; nothing more to gain here
    x += alpha * d;
    x = x.cwiseMax(lb).cwiseMin(ub);  // roundoff only
  }
  return out;
}

// Equality elimination: solve the QP on the null space of A_eq. The reduced
// problem has no equality rows and far fewer variables, which is where the
// active-set solver spends its time.
QpResult solve_qp_eliminated(const MatX& H, const VecX& g, const MatX& A_eq, const VecX& b_eq,
                             const MatX& A_in, const VecX& b_in) {
  const int n = static_cast<int>(H.rows());
  const int me = static_cast<int>(A_eq.rows());
  if (me == 0) return solve_qp(H, g, A_eq, b_eq, A_in, b_in);

  Eigen::ColPivHouseholderQR<MatX> qr(A_eq.transpose());
  const int r = static_cast<int>(qr.rank());
  const MatX q_full = qr.householderQ() * MatX::Identity(n, n);
  const MatX r_fac = qr.matrixR().topRows(r).template triangularView<Eigen::Upper>();

  // Minimum-norm particular solution of A_eq d = b_eq, with a consistency
  // check on any redundant rows.
  const VecX b_perm = qr.colsPermutation().transpose() * b_eq;
  const VecX y1 = r_fac.leftCols(r)
                      .template triangularView<Eigen::Upper>()
                      .transpose()
                      .solve(b_perm.head(r));
  if (r < me) {
    const VecX rest = r_fac.rightCols(me - r).transpose() * y1;
    if ((rest - b_perm.tail(me - r)).lpNorm<Eigen::Infinity>() >
        1e-8 * (1.0 + b_eq.lpNorm<Eigen::Infinity>()))
      throw QpInfeasible("qp: inconsistent equality constraints");
  }
  VecX d_p = q_full.leftCols(r) * y1;

  const int nz = n - r;
  QpResult out;
  VecX mu_in = VecX::Zero(A_in.rows());
  if (nz == 0) {
    if (A_in.rows() > 0 && ((A_in * d_p - b_in).array() > 1e-10).any())
      throw QpInfeasible("qp: inequalities are infeasible");
    out.x = d_p;
  } else {
    const MatX z = q_full.rightCols(nz);
    const MatX h_r = z.transpose() * H * z;
    const VecX g_r = z.transpose() * (g + H * d_p);
    const MatX a_r = A_in * z;
    const VecX b_r = b_in - A_in * d_p;
    QpResult sub = solve_qp(h_r, g_r, MatX::Zero(0, nz), VecX::Zero(0), a_r, b_r);
    out.x = d_p + z * sub.x;
    mu_in = sub.ineq_duals;
    out.iterations = sub.iterations;
  }

  VecX resid = g + H * out.x;
  if (A_in.rows() > 0) resid.noalias() += A_in.transpose() * mu_in;
  out.eq_duals = qr.solve(-resid);
  out.ineq_duals = mu_in;
  out.objective = 0.5 * out.x.dot(H * out.x) + g.dot(out.x);
  return out;
}

}  // namespace

SqpResult solve_sqp(const NlpProblem& nlp, const VecX& x0, const SqpOptions& opts) {
  const int n = nlp.num_vars();
  const int me = nlp.num_eq();
  const int mi = nlp.num_ineq();
  const VecX lb = nlp.lower_bounds();
  const VecX ub = nlp.upper_bounds();

  VecX x = x0.cwiseMax(lb).cwiseMin(ub);
  Evaluation ev = evaluate_values(nlp, x);
  add_derivatives(nlp, x, ev);

  // A variable pinned by identical bounds is an equality in disguise. Solving
  // it as one keeps its (possibly indefinite) cross-curvature out of the
  // reduced QP and removes a degenerate pair of opposing bound rows.
  std::vector<int> pinned;
  for (int i = 0; i < n; ++i)
    if (ub[i] - lb[i] == 0.0) pinned.push_back(i);
  const int np = static_cast<int>(pinned.size());

  MatX B = MatX::Identity(n, n);
  double mu = opts.initial_penalty;
  VecX lambda = VecX::Zero(me), nu = VecX::Zero(mi);

  // With an exact Lagrangian Hessian the subproblem may be nonconvex; a
  // Levenberg-style shift tau*I restores convexity when the factorization
  // or the step quality says so.
  const bool exact_hess = nlp.has_hessian();
  MatX B_raw;
  double tau = 0.0;

  SqpResult result;
  int hessian_resets = 0;
  // Infinity-norm trust region on the step; keeps the iterates where the
  // linearization and the quasi-Newton curvature are still representative.
  double trust = opts.initial_trust;
  constexpr double kTrustMin = 0.05, kTrustMax = 10.0;
  std::vector<std::pair<double, double>> fv_hist;  // (cost, violation) memory
  double kkt_best = std::numeric_limits<double>::infinity();
  int stall = 0, polish_rounds = 0;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    // Row scaling keeps QP duals commensurate with the cost gradient even
    // when constraint gradients span many orders of magnitude.
    VecX eq_scale = VecX::Ones(me), in_scale = VecX::Ones(mi);
    for (int r = 0; r < me; ++r)
      eq_scale[r] = 1.0 / std::max(1.0, ev.j_eq.row(r).template lpNorm<Eigen::Infinity>());
    for (int r = 0; r < mi; ++r)
      in_scale[r] = 1.0 / std::max(1.0, ev.j_in.row(r).template lpNorm<Eigen::Infinity>());
    MatX j_eq_s(me + np, n);
    j_eq_s.topRows(me) = eq_scale.asDiagonal() * ev.j_eq;
    j_eq_s.bottomRows(np).setZero();
    VecX c_eq_s(me + np);
    c_eq_s.head(me) = eq_scale.cwiseProduct(ev.c_eq);
    for (int q = 0; q < np; ++q) {
      j_eq_s(me + q, pinned[q]) = 1.0;
      c_eq_s[me + q] = x[pinned[q]] - ub[pinned[q]];
    }

    // An inequality row that sits at zero and is parallel to an equality row
    // is redundant (the equality already pins it) and makes the QP active set
    // degenerate; leave it out and let the equality's free-signed multiplier
    // carry its weight.
    std::vector<char> skip(mi, 0);
    if (me > 0) {
      VecX eq_norm(me);
      for (int q = 0; q < me; ++q) eq_norm[q] = ev.j_eq.row(q).norm();
      for (int r = 0; r < mi; ++r) {
        if (std::abs(ev.c_in[r]) > 1e-8) continue;
        const double rn = ev.j_in.row(r).norm();
        if (rn == 0.0) continue;
        for (int q = 0; q < me; ++q) {
          if (eq_norm[q] == 0.0) continue;
          const double cosang = std::abs(ev.j_in.row(r).dot(ev.j_eq.row(q))) / (rn * eq_norm[q]);
          if (cosang >= 1.0 - 1e-8) {
            skip[r] = 1;
            break;
          }
        }
      }
    }

    // Assemble the QP: general rows plus per-variable step bounds combining
    // the simple bounds with the trust region.
    const int nb = 2 * n;
    MatX A_in(mi + nb, n);
    VecX b_in(mi + nb);
    A_in.topRows(mi) = in_scale.asDiagonal() * ev.j_in;
    b_in.head(mi) = -in_scale.cwiseProduct(ev.c_in);
    for (int r = 0; r < mi; ++r)
      if (skip[r]) {
        A_in.row(r).setZero();
        b_in[r] = 1.0;
      }
    A_in.bottomRows(nb).setZero();
    std::vector<bool> is_true_bound(nb);  // vs. trust-region clip
    for (int i = 0; i < n; ++i) {
      const double up = std::min(ub[i] - x[i], trust);
      const double dn = std::min(x[i] - lb[i], trust);
      A_in(mi + 2 * i, i) = 1.0;
      b_in[mi + 2 * i] = up;
      is_true_bound[2 * i] = up == ub[i] - x[i];
      A_in(mi + 2 * i + 1, i) = -1.0;
      b_in[mi + 2 * i + 1] = dn;
      is_true_bound[2 * i + 1] = dn == x[i] - lb[i];
    }
    for (int q = 0; q < np; ++q) {
      const int i = pinned[q];
      A_in.row(mi + 2 * i).setZero();
      b_in[mi + 2 * i] = 1.0;
      is_true_bound[2 * i] = false;
      A_in.row(mi + 2 * i + 1).setZero();
      b_in[mi + 2 * i + 1] = 1.0;
      is_true_bound[2 * i + 1] = false;
    }

    if (exact_hess) {
      B_raw = nlp.lagrangian_hessian(x, lambda, nu);
      B_raw = (0.5 * (B_raw + B_raw.transpose())).eval();
      tau *= 0.25;  // let a previously needed shift decay instead of vanishing
      if (tau < 1e-12) tau = 0.0;
    }
    const double tau0 =
        exact_hess ? 1e-4 * std::max(1.0, B_raw.diagonal().cwiseAbs().maxCoeff()) : 0.0;
    auto bump_tau = [&] { tau = (tau == 0.0 ? tau0 : 10.0 * tau); };

    QpResult qp;
    bool qp_ok = false;
    bool used_elastic = false;
    const int max_attempts = exact_hess ? 12 : 4;
    for (int attempt = 0; attempt < max_attempts && !qp_ok; ++attempt) {
      if (exact_hess) {
        B = B_raw;
        B.diagonal().array() += tau;
      }
      try {
        qp = solve_qp_eliminated(B, ev.g, j_eq_s, -c_eq_s, A_in, b_in);
        qp_ok = true;
        used_elastic = false;
      } catch (const QpInfeasible&) {
        // Inconsistent linearization: aim the step at the violation instead.
        // Gauss-Newton on the violated rows, subject only to the step bounds,
        // is cheap and always consistent.
        try {
          MatX h_r = j_eq_s.transpose() * j_eq_s;
          VecX g_r = j_eq_s.transpose() * c_eq_s;
          for (int r = 0; r < mi; ++r) {
            if (ev.c_in[r] <= 0.0) continue;
            h_r.noalias() += A_in.row(r).transpose() * A_in.row(r);
            g_r.noalias() -= A_in.row(r).transpose() * b_in[r];
          }
          h_r.diagonal().array() += 1e-6 * std::max(1.0, h_r.diagonal().maxCoeff());
          QpResult rest = solve_qp(h_r, g_r, MatX::Zero(0, n), VecX::Zero(0),
                                   A_in.bottomRows(nb), b_in.tail(nb));
          qp = QpResult{};
          qp.x = rest.x;
          qp.eq_duals = VecX::Zero(me);
          qp.ineq_duals = VecX::Zero(mi + nb);
          qp_ok = true;
          used_elastic = true;
        } catch (const QpInfeasible&) {
          break;
        } catch (const std::exception&) {
          if (exact_hess) {
            bump_tau();
            continue;
          }
          break;
        }
      } catch (const std::exception& e) {
        // Indefinite or ill-conditioned model: convexify (exact mode) or fall
        // back to a fresh quasi-Newton matrix, then give up.
        if (opts.verbose) std::fprintf(stderr, "qp attempt %d: %s (tau %.2e)\n", attempt, e.what(), tau);
        if (exact_hess) {
          bump_tau();
          continue;
        }
        if (hessian_resets++ > 3) break;
        B = MatX::Identity(n, n);
      }
      if (qp_ok) {
        // A step breaching its own bound rows means the QP lost precision.
        double breach = 0.0;
        for (int i = 0; i < n; ++i)
          breach = std::max({breach, qp.x[i] - b_in[mi + 2 * i], -qp.x[i] - b_in[mi + 2 * i + 1]});
        if (!qp.x.allFinite() || breach > 1e-5) {
          qp_ok = false;
          if (exact_hess) {
            bump_tau();
          } else {
            if (hessian_resets++ > 3) break;
            B = MatX::Identity(n, n);
          }
        }
      }
    }
    if (!qp_ok) {
      result.x = x;
      result.status = SqpStatus::QpFailure;
      result.message = "QP subproblem failed";
      result.iterations = iter;
      result.cost = ev.f;
      result.feas_inf = violation_inf(ev);
      throw SqpFailure(result, result.message);
    }

    const VecX d = qp.x;
    // Elastic duals reflect the relaxation's big-M weight, not the problem's
    // multipliers; keep the last trustworthy estimates in that case. Bound
    // multipliers count only when the binding row is a true variable bound
    // rather than the trust region.
    VecX bound_dual = VecX::Zero(n);  // net signed contribution to stationarity
    if (!used_elastic) {
      lambda = eq_scale.cwiseProduct(qp.eq_duals.head(me));
      nu = in_scale.cwiseProduct(qp.ineq_duals.head(mi));
      for (int i = 0; i < n; ++i) {
        // A bound multiplier belongs in the stationarity residual only when
        // the iterate actually sits on that bound, not when the predicted
        // step would land there.
        if (is_true_bound[2 * i] && b_in[mi + 2 * i] <= 1e-9 * (1.0 + std::abs(x[i])))
          bound_dual[i] += qp.ineq_duals[mi + 2 * i];
        if (is_true_bound[2 * i + 1] && b_in[mi + 2 * i + 1] <= 1e-9 * (1.0 + std::abs(x[i])))
          bound_dual[i] -= qp.ineq_duals[mi + 2 * i + 1];
      }

      // Row scaling amplifies QP-level dual noise into the unscaled
      // stationarity equation, which caps the reachable KKT residual. Re-fit
      // the multipliers of everything active at the iterate by least squares,
      // pruning sign-violating inequality duals (mirrored stay rows at a
      // shared knot make the fit rank-deficient, so plain LS can split a
      // multiplier across both signs).
      struct ActEntry {
        int row;      // inequality row, or -1 for a variable bound
        int var;      // bound variable index
        double sign;  // +1 upper bound, -1 lower bound
        bool free;    // fixed variable (both bounds): dual may take any sign
      };
      std::vector<ActEntry> act;
      for (int r = 0; r < mi; ++r)
        if (nu[r] > 0.0 && ev.c_in[r] >= -1e-7 && !skip[r]) act.push_back({r, -1, 0.0, false});
      for (int i = 0; i < n; ++i) {
        if (ub[i] - lb[i] == 0.0) {
          act.push_back({-1, i, 1.0, true});
          continue;
        }
        const double span = 1e-9 * (1.0 + std::abs(x[i]));
        const bool up = is_true_bound[2 * i] && ub[i] - x[i] <= span;
        const bool lo = is_true_bound[2 * i + 1] && x[i] - lb[i] <= span;
        if (up && lo)
          act.push_back({-1, i, 1.0, true});
        else if (up)
          act.push_back({-1, i, 1.0, false});
        else if (lo)
          act.push_back({-1, i, -1.0, false});
      }
      for (int pass = 0; pass < 6 && me + static_cast<int>(act.size()) > 0; ++pass) {
        const int nact = static_cast<int>(act.size());
        MatX cols(n, me + nact);
        if (me > 0) cols.leftCols(me) = ev.j_eq.transpose();
        for (int a = 0; a < nact; ++a) {
          if (act[a].row >= 0)
            cols.col(me + a) = ev.j_in.row(act[a].row).transpose();
          else {
            cols.col(me + a).setZero();
            cols(act[a].var, me + a) = act[a].sign;
          }
        }
        const VecX y = cols.colPivHouseholderQr().solve(-ev.g);
        if (!y.allFinite()) break;
        std::vector<ActEntry> keep;
        for (int a = 0; a < nact; ++a)
          if (act[a].free || y[me + a] >= -1e-8) keep.push_back(act[a]);
        if (static_cast<int>(keep.size()) == nact) {
          lambda = y.head(me);
          nu.setZero();
          bound_dual.setZero();
          for (int a = 0; a < nact; ++a) {
            const double w = act[a].free ? y[me + a] : std::max(y[me + a], 0.0);
            if (act[a].row >= 0)
              nu[act[a].row] = w;
            else
              bound_dual[act[a].var] += act[a].sign * w;
          }
          break;
        }
        act = std::move(keep);
      }
    }

    VecX stat = ev.g + bound_dual;
    if (me > 0) stat.noalias() += ev.j_eq.transpose() * lambda;
    if (mi > 0) stat.noalias() += ev.j_in.transpose() * nu;
    double kkt_inf = stat.lpNorm<Eigen::Infinity>();
    for (int r = 0; r < mi; ++r)  // complementary slackness
      kkt_inf = std::max(kkt_inf, std::abs(nu[r] * std::min(ev.c_in[r], 0.0)));
    const double feas_inf = violation_inf(ev);

    SqpIterate it;
    it.cost = ev.f;
    it.feas_inf = feas_inf;
    it.kkt_inf = kkt_inf;
    it.penalty = mu;
    it.step_norm = d.lpNorm<Eigen::Infinity>();

    if (feas_inf <= opts.feas_tol && kkt_inf <= opts.opt_tol) {
      result.x = x;
      result.eq_duals = lambda;
      result.ineq_duals = nu;
      result.status = SqpStatus::Converged;
      result.iterations = iter;
      result.cost = ev.f;
      result.feas_inf = feas_inf;
      result.kkt_inf = kkt_inf;
      result.history.push_back(it);
      return result;
    }

    // Feasible but stationarity stopped improving: the QP is clipping the
    // remaining flat-direction step. Hand over to the active-set polish.
    if (exact_hess && feas_inf <= opts.feas_tol) {
      if (kkt_inf < 0.5 * kkt_best) {
        kkt_best = kkt_inf;
        stall = 0;
      } else if (++stall >= 5 && polish_rounds < 3) {
        ++polish_rounds;
        stall = 0;
        const PolishOutcome po =
            polish_active_set(nlp, x, lb, ub, opts.feas_tol, opts.opt_tol);
        if (po.ok) {
          it.cost = po.cost;
          it.feas_inf = po.feas;
          it.kkt_inf = po.kkt;
          result.x = po.x;
          result.eq_duals = po.lambda;
          result.ineq_duals = po.nu;
          result.status = SqpStatus::Converged;
          result.iterations = iter;
          result.cost = po.cost;
          result.feas_inf = po.feas;
          result.kkt_inf = po.kkt;
          result.history.push_back(it);
          return result;
        }
      }
    }

    // Exact-penalty weight: dominate the multipliers (growth-capped) and keep
    // the step a descent direction for the merit function.
    const double viol = violation_l1(ev, x, lb, ub);
    double dual_inf = std::max(lambda.size() ? lambda.lpNorm<Eigen::Infinity>() : 0.0,
                               nu.size() ? nu.lpNorm<Eigen::Infinity>() : 0.0);
    if (!used_elastic)
      for (int k = 0; k < nb; ++k)
        if (is_true_bound[k]) dual_inf = std::max(dual_inf, qp.ineq_duals[mi + k]);
    double mu_needed = std::min(1.1 * dual_inf, 10.0 * mu);
    if (viol > opts.feas_tol) {
      const double model = ev.g.dot(d) + 0.5 * d.dot(B * d);
      mu_needed = std::max(mu_needed, model / (0.5 * viol));
    }
    // Shed a penalty far above current need: an inflated mu turns the merit
    // line search into a crawl near the feasible manifold.
    mu = std::max(mu, mu_needed);
    const double mu_cap = 20.0 * std::max(std::max(dual_inf, mu_needed), opts.initial_penalty);
    mu = std::min(mu, mu_cap);

    const double merit0 = ev.f + mu * viol;
    const double descent = ev.g.dot(d) - mu * viol;
    it.merit = merit0;
    // Non-monotone reference (Grippo): compare against the worst recent merit
    // so curvature-induced bulges cannot freeze the step size. History keeps
    // (f, viol) so the reference follows the current penalty.
    fv_hist.emplace_back(ev.f, viol);
    if (fv_hist.size() > 5) fv_hist.erase(fv_hist.begin());
    double merit_ref = merit0;
    for (const auto& [fh, vh] : fv_hist) merit_ref = std::max(merit_ref, fh + mu * vh);

    double alpha = 1.0;
    bool accepted = false;
    Evaluation ev_next;
    VecX x_next;
    for (int ls = 0; ls < opts.max_line_search; ++ls) {
      x_next = x + alpha * d;
      ev_next = evaluate_values(nlp, x_next);
      const double merit1 = ev_next.f + mu * violation_l1(ev_next, x_next, lb, ub);
      if (merit1 <= merit_ref + opts.armijo_c * alpha * std::min(descent, 0.0) + 1e-12) {
        accepted = true;
        break;
      }
      if (ls == 0 && me > 0) {
        // Second-order correction: cancel the quadratic constraint bulge at
        // the full step so the merit function stops cutting Newton steps.
        VecX c_trial(me + np);
        c_trial.head(me) = eq_scale.cwiseProduct(ev_next.c_eq);
        for (int q = 0; q < np; ++q) c_trial[me + q] = x_next[pinned[q]] - ub[pinned[q]];
        MatX jjt = j_eq_s * j_eq_s.transpose();
        jjt.diagonal().array() += 1e-12;
        const VecX dc = j_eq_s.transpose() * jjt.ldlt().solve(-c_trial);
        const VecX x_soc = (x + d + dc).cwiseMax(lb).cwiseMin(ub);
        Evaluation ev_soc = evaluate_values(nlp, x_soc);
        const double merit_soc = ev_soc.f + mu * violation_l1(ev_soc, x_soc, lb, ub);
        if (merit_soc <= merit_ref + opts.armijo_c * std::min(descent, 0.0) + 1e-12) {
          x_next = x_soc;
          ev_next = std::move(ev_soc);
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    it.alpha = accepted ? alpha : 0.0;
    result.history.push_back(it);
    if (opts.verbose)
      std::printf(
          "sqp %3d  cost %12.5e  feas %9.2e  kkt %9.2e  mu %8.1e  dual %8.1e  step %9.2e  "
          "tr %7.2g  alpha %g\n",
          iter, it.cost, it.feas_inf, it.kkt_inf, it.penalty, dual_inf, it.step_norm, trust,
          it.alpha);

    if (!accepted) {
      if (trust > kTrustMin + 1e-12) {
        trust = std::max(0.25 * trust, kTrustMin);
        continue;
      }
      if (exact_hess && hessian_resets++ < 6) {
        bump_tau();  // push the step toward steepest descent
        continue;
      }
      if (!exact_hess && hessian_resets++ < 2) {
        B = MatX::Identity(n, n);  // curvature model went bad: restart it
        continue;
      }
      result.x = x;
      result.eq_duals = lambda;
      result.ineq_duals = nu;
      result.status = SqpStatus::LineSearchFailure;
      result.iterations = iter;
      result.cost = ev.f;
      result.feas_inf = feas_inf;
      result.kkt_inf = kkt_inf;
      result.message = "line search failed to find acceptable step";
      throw SqpFailure(result, result.message);
    }
    if (alpha >= 1.0 - 1e-12)
      trust = std::min(2.0 * trust, kTrustMax);
    else if (alpha < 0.25)
      trust = std::max(0.5 * trust, kTrustMin);

    add_derivatives(nlp, x_next, ev_next);

    if (exact_hess) {
      x = std::move(x_next);
      ev = std::move(ev_next);
      continue;
    }

    // Damped BFGS on the Lagrangian.
    const VecX s = x_next - x;
    VecX grad_l_next = ev_next.g;
    if (me > 0) grad_l_next.noalias() += ev_next.j_eq.transpose() * lambda;
    if (mi > 0) grad_l_next.noalias() += ev_next.j_in.transpose() * nu;
    VecX grad_l = ev.g;
    if (me > 0) grad_l.noalias() += ev.j_eq.transpose() * lambda;
    if (mi > 0) grad_l.noalias() += ev.j_in.transpose() * nu;
    VecX y = grad_l_next - grad_l;

    const VecX Bs = B * s;
    const double sBs = s.dot(Bs);
    double sy = s.dot(y);
    if (sBs > 1e-16 && y.norm() < 1e6 * (1.0 + s.norm())) {
      if (sy < 0.2 * sBs) {
        const double theta = 0.8 * sBs / (sBs - sy);
        y = theta * y + (1.0 - theta) * Bs;
        sy = s.dot(y);
      }
      if (sy > 1e-10 * s.norm() * y.norm()) {
        B.noalias() -= (Bs * Bs.transpose()) / sBs;
        B.noalias() += (y * y.transpose()) / sy;
        B = (0.5 * (B + B.transpose())).eval();
      }
    }
    if (B.diagonal().maxCoeff() > 1e8) B = MatX::Identity(n, n);

    x = x_next;
    ev = ev_next;
  }

  result.x = x;
  result.eq_duals = lambda;
  result.ineq_duals = nu;
  result.status = SqpStatus::IterationLimit;
  result.iterations = opts.max_iter;
  result.cost = ev.f;
  result.feas_inf = violation_inf(ev);
  if (!result.history.empty()) result.kkt_inf = result.history.back().kkt_inf;
  result.message = "iteration limit reached";
  throw SqpFailure(result, result.message);
}

}  // namespace uaav::trajopt
