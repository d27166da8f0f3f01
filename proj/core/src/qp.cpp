#include "uaav/trajopt/qp.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace uaav::trajopt {

// Dual active-set method (Goldfarb-Idnani). Works on constraints in the
// normal form n'x >= b; starts from the unconstrained minimizer and adds
// violated constraints, dropping blockers whose duals would go negative.
// J = L^-T Q and the triangular R track a QR factorization of L^-1 N_active,
// updated by Givens rotations as the working set changes.

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Stable Givens pair application used for both J-column and R-row updates.
struct Givens {
  double cc{1}, ss{0}, xny{0};
  bool identity{true};

  // Rotates (a, b) so the second component becomes zero; a receives +-hypot.
  static Givens annihilate(double& a, double& b) {
    Givens g;
    const double h = std::hypot(a, b);
    if (h == 0.0) return g;
    g.identity = false;
    double cc = a / h, ss = b / h;
    if (cc < 0) {
      cc = -cc;
      ss = -ss;
      a = -h;
    } else {
      a = h;
    }
    b = 0.0;
    g.cc = cc;
    g.ss = ss;
    g.xny = ss / (1.0 + cc);
    return g;
  }

  void apply(double& t1, double& t2) const {
    if (identity) return;
    const double u = t1;
    t1 = u * cc + t2 * ss;
    t2 = xny * (u + t1) - t2;
  }
};

}  // namespace

QpResult solve_qp(const MatX& H, const VecX& g, const MatX& A_eq, const VecX& b_eq,
                  const MatX& A_in, const VecX& b_in) {
  const int n = static_cast<int>(H.rows());
  const int me = static_cast<int>(A_eq.rows());
  const int mi = static_cast<int>(A_in.rows());

  Eigen::LLT<MatX> llt(H);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("qp: Hessian is not positive definite");

  // J = L^-T, x = unconstrained minimizer.
  MatX J = llt.matrixU().solve(MatX::Identity(n, n));
  VecX x = llt.solve(-g);
  double f_value = 0.5 * g.dot(x);

  MatX R = MatX::Zero(n, n);
  double R_norm = 1.0;
  std::vector<int> active;  // 0..me-1 equalities, me..me+mi-1 inequalities
  VecX u = VecX::Zero(n + 1);
  int iq = 0;

  const double scale = 1.0 + std::abs(H.trace()) / std::max(1, n);
  const double eps = std::numeric_limits<double>::epsilon() * 100.0 * scale;

  auto normal = [&](int idx) -> VecX {
    return idx < me ? VecX(-A_eq.row(idx).transpose()) : VecX(-A_in.row(idx - me).transpose());
  };
  auto rhs = [&](int idx) -> double { return idx < me ? -b_eq[idx] : -b_in[idx - me]; };

  VecX d(n), z(n), r(n);
  auto compute_steps = [&](const VecX& np) {
    d.noalias() = J.transpose() * np;
    z.setZero();
    if (iq < n) z.noalias() = J.rightCols(n - iq) * d.tail(n - iq);
    if (iq > 0)
      r.head(iq) = R.topLeftCorner(iq, iq).triangularView<Eigen::Upper>().solve(d.head(iq));
  };

  auto add_constraint = [&]() -> bool {
    for (int j = n - 1; j >= iq + 1; --j) {
      const Givens giv = Givens::annihilate(d[j - 1], d[j]);
      if (giv.identity) continue;
      for (int k = 0; k < n; ++k) giv.apply(J(k, j - 1), J(k, j));
    }
    ++iq;
    R.col(iq - 1).head(iq) = d.head(iq);
    if (std::abs(d[iq - 1]) <= std::numeric_limits<double>::epsilon() * R_norm) {
      --iq;
      return false;  // linearly dependent normal
    }
    R_norm = std::max(R_norm, std::abs(d[iq - 1]));
    return true;
  };

  auto delete_constraint = [&](int pos) {
    for (int i = pos; i < iq - 1; ++i) {
      active[i] = active[i + 1];
      u[i] = u[i + 1];
      R.col(i) = R.col(i + 1);
    }
    active.pop_back();
    u[iq - 1] = 0;
    --iq;
    for (int j = pos; j < iq; ++j) {
      const Givens giv = Givens::annihilate(R(j, j), R(j + 1, j));
      if (giv.identity) continue;
      for (int k = j + 1; k < iq; ++k) giv.apply(R(j, k), R(j + 1, k));
      for (int k = 0; k < n; ++k) giv.apply(J(k, j), J(k, j + 1));
    }
  };

  // Equalities enter the working set first and are never dropped.
  for (int i = 0; i < me; ++i) {
    const VecX np = normal(i);
    compute_steps(np);
    const double s = np.dot(x) - rhs(i);
    const double z2 = z.squaredNorm();
    if (z2 <= eps * eps) {
      if (std::abs(s) > 1e-9 * (1.0 + std::abs(rhs(i))))
        throw QpInfeasible("qp: inconsistent equality constraints");
      continue;  // redundant but consistent row
    }
    const double t2 = -s / z.dot(np);
    x += t2 * z;
    f_value += 0.5 * t2 * t2 * z.dot(np);
    u.head(iq) -= t2 * r.head(iq);
    u[iq] = t2;
    active.push_back(i);
    if (!add_constraint()) {
      active.pop_back();
      throw QpInfeasible("qp: dependent equality constraints");
    }
  }

  QpResult result;
  const int max_iter = 20 * (me + mi + 10);
  int iter = 0;

  while (true) {
    if (++iter > max_iter) throw std::runtime_error("qp: iteration limit reached");

    // Most violated inactive inequality.
    int ip = -1;
    double worst = -eps;
    VecX s_all = VecX::Zero(mi);
    if (mi > 0) s_all = b_in - A_in * x;  // >= 0 when feasible
    for (int i = 0; i < mi; ++i) {
      bool is_active = false;
      for (int k = 0; k < iq; ++k)
        if (active[k] == me + i) {
          is_active = true;
          break;
        }
      if (!is_active && s_all[i] < worst) {
        worst = s_all[i];
        ip = me + i;
      }
    }
    if (ip < 0) break;  // primal feasible: done

    const VecX np = normal(ip);
    double u_plus = 0.0;
    double s = np.dot(x) - rhs(ip);

    while (true) {
      if (++iter > max_iter) throw std::runtime_error("qp: iteration limit reached");
      compute_steps(np);

      double t1 = kInf;
      int drop = -1;
      for (int k = 0; k < iq; ++k) {
        if (active[k] >= me && r[k] > 0.0 && u[k] / r[k] < t1) {
          t1 = u[k] / r[k];
          drop = k;
        }
      }
      const double z2 = z.squaredNorm();
      const double t2 = z2 > eps * eps ? -s / z.dot(np) : kInf;
      const double t = std::min(t1, t2);
      if (t >= kInf) throw QpInfeasible("qp: inequalities are infeasible");

      if (t2 >= kInf) {
        // Dual-only step; the blocking constraint leaves the working set.
        u.head(iq) -= t * r.head(iq);
        u_plus += t;
        delete_constraint(drop);
        continue;
      }

      x += t * z;
      f_value += t * z.dot(np) * (0.5 * t + u_plus);
      u.head(iq) -= t * r.head(iq);
      u_plus += t;

      if (t == t2) {
        u[iq] = u_plus;
        active.push_back(ip);
        if (!add_constraint()) {
          active.pop_back();
          u[iq] = 0;
          break;  // dependent at solution precision; treat as satisfied
        }
        break;
      }
      delete_constraint(drop);
      s = np.dot(x) - rhs(ip);
      if (s >= -eps) break;  // became satisfied after dropping the blocker
    }
  }

  result.x = x;
  result.objective = f_value;
  result.iterations = iter;
  result.eq_duals = VecX::Zero(me);
  result.ineq_duals = VecX::Zero(mi);
  for (int k = 0; k < iq; ++k) {
    if (active[k] < me)
      result.eq_duals[active[k]] = u[k];
    else
      result.ineq_duals[active[k] - me] = std::max(0.0, u[k]);
  }
  return result;
}

}  // namespace uaav::trajopt
