#include "uaav/trajopt/transcription.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "uaav/dynamics.hpp"

namespace uaav::trajopt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double box_center(double lo, double hi) {
  if (lo > -kInf && hi < kInf) return 0.5 * (lo + hi);
  if (lo > -kInf) return lo;
  if (hi < kInf) return hi;
  return 0.0;
}

}  // namespace

VecX hermite_simpson_defect(const std::function<VecX(const VecX&, const VecX&)>& f,
                            const VecX& x_k, const VecX& x_k1, const VecX& u_k,
                            const VecX& u_k1, double h) {
  const VecX f_k = f(x_k, u_k);
  const VecX f_k1 = f(x_k1, u_k1);
  if (!f_k.allFinite()) throw TrajOptError("non-finite dynamics at the left knot");
  if (!f_k1.allFinite()) throw TrajOptError("non-finite dynamics at the right knot");
  const VecX x_c = 0.5 * (x_k + x_k1) + (h / 8.0) * (f_k - f_k1);
  const VecX u_c = 0.5 * (u_k + u_k1);
  const VecX f_c = f(x_c, u_c);
  if (!f_c.allFinite()) throw TrajOptError("non-finite dynamics at the Simpson midpoint");
  return x_k - x_k1 + (h / 6.0) * (f_k + 4.0 * f_c + f_k1);
}

double stage_cost(const VecX& u, double h, const MatX& R, double D) {
  return u.dot(R * u) * h + D * h;
}

// ---- CollocationNlp ----

struct CollocationNlp::Cache {
  VecX z_values{VecX::Zero(0)}, z_jacs{VecX::Zero(0)};
  std::vector<std::vector<VecX>> f_knot;            // [phase][local knot]
  std::vector<VecX> x_center, u_center, f_center;   // [global interval]
  VecX c_eq, c_in;
  std::vector<std::vector<MatX>> a_knot, b_knot;
  std::vector<MatX> a_center, b_center;
  MatX j_eq, j_in;
};

CollocationNlp::CollocationNlp(int nx, int nu, std::vector<PhaseSpec> phases,
                               CollocationBounds bounds, MatX control_cost, double time_cost)
    : nx_(nx),
      nu_(nu),
      phases_(std::move(phases)),
      bounds_(std::move(bounds)),
      control_cost_(std::move(control_cost)),
      time_cost_(time_cost),
      cache_(std::make_unique<Cache>()) {
  if (phases_.empty()) throw TrajOptError("transcription needs at least one phase");
  phase_start_.resize(phases_.size());
  for (size_t j = 0; j < phases_.size(); ++j) {
    auto& ph = phases_[j];
    if (ph.num_intervals <= 0) throw TrajOptError("each phase needs a positive interval count");
    if (!ph.dynamics) throw TrajOptError("phase dynamics callback missing");
    if (!ph.dynamics_jacobian) throw TrajOptError("phase dynamics Jacobian callback missing");
    if (bool(ph.stay) != bool(ph.stay_jacobian))
      throw TrajOptError("stay constraint needs both value and Jacobian callbacks");
    if (j + 1 < phases_.size() && bool(ph.exit_guard) != bool(ph.exit_guard_grad))
      throw TrajOptError("exit guard needs both value and gradient callbacks");
    phase_start_[j] = total_intervals_;
    total_intervals_ += ph.num_intervals;
    if (ph.stay) {
      const int rows = static_cast<int>(ph.stay(VecX::Zero(nx_)).size());
      num_stay_rows_ += rows * (ph.num_intervals + 1);
    }
    if (j + 1 < phases_.size() && ph.exit_guard) ++num_guard_rows_;
  }

  auto check_box = [](const VecX& lo, const VecX& hi, const char* what) {
    std::string bad;
    for (int i = 0; i < lo.size(); ++i)
      if (lo[i] > hi[i]) bad += (bad.empty() ? "" : ", ") + std::to_string(i);
    if (!bad.empty())
      throw TrajOptError(std::string("empty ") + what + " box at component(s) " + bad);
  };
  check_box(bounds_.x_lo, bounds_.x_hi, "state");
  check_box(bounds_.u_lo, bounds_.u_hi, "control");
  check_box(bounds_.x0_lo, bounds_.x0_hi, "initial");
  check_box(bounds_.xf_lo, bounds_.xf_hi, "final");
  if (bounds_.h_min <= 0 || bounds_.h_min > bounds_.h_max)
    throw TrajOptError("empty or nonpositive step box");
}

CollocationNlp::~CollocationNlp() = default;

int CollocationNlp::num_vars() const { return num_knots() * (nx_ + nu_) + num_phases(); }

int CollocationNlp::num_eq() const { return total_intervals_ * nx_ + num_guard_rows_; }

int CollocationNlp::num_ineq() const { return num_stay_rows_; }

VecX CollocationNlp::lower_bounds() const {
  VecX lb(num_vars());
  for (int k = 0; k < num_knots(); ++k) {
    lb.segment(state_offset(k), nx_) = bounds_.x_lo;
    lb.segment(control_offset(k), nu_) = bounds_.u_lo;
  }
  lb.segment(state_offset(0), nx_) = bounds_.x_lo.cwiseMax(bounds_.x0_lo);
  lb.segment(state_offset(num_knots() - 1), nx_) = bounds_.x_lo.cwiseMax(bounds_.xf_lo);
  for (int j = 0; j < num_phases(); ++j) lb[h_offset(j)] = bounds_.h_min;
  return lb;
}

VecX CollocationNlp::upper_bounds() const {
  VecX ub(num_vars());
  for (int k = 0; k < num_knots(); ++k) {
    ub.segment(state_offset(k), nx_) = bounds_.x_hi;
    ub.segment(control_offset(k), nu_) = bounds_.u_hi;
  }
  ub.segment(state_offset(0), nx_) = bounds_.x_hi.cwiseMin(bounds_.x0_hi);
  ub.segment(state_offset(num_knots() - 1), nx_) = bounds_.x_hi.cwiseMin(bounds_.xf_hi);
  for (int j = 0; j < num_phases(); ++j) ub[h_offset(j)] = bounds_.h_max;
  return ub;
}

VecX CollocationNlp::initial_guess() const {
  const VecX lb = lower_bounds();
  const VecX ub = upper_bounds();
  VecX c0(nx_), cf(nx_), um(nu_);
  for (int i = 0; i < nx_; ++i) {
    c0[i] = box_center(lb[state_offset(0) + i], ub[state_offset(0) + i]);
    cf[i] = box_center(lb[state_offset(num_knots() - 1) + i],
                       ub[state_offset(num_knots() - 1) + i]);
  }
  for (int i = 0; i < nu_; ++i) um[i] = box_center(bounds_.u_lo[i], bounds_.u_hi[i]);

  VecX z(num_vars());
  const int last = num_knots() - 1;
  for (int k = 0; k < num_knots(); ++k) {
    const double s = last > 0 ? static_cast<double>(k) / last : 0.0;
    z.segment(state_offset(k), nx_) = (1.0 - s) * c0 + s * cf;
    z.segment(control_offset(k), nu_) = um;
  }
  for (int j = 0; j < num_phases(); ++j)
    z[h_offset(j)] = 0.5 * (bounds_.h_min + bounds_.h_max);
  return z;
}

const CollocationNlp::Cache& CollocationNlp::values(const VecX& z) const {
  Cache& c = *cache_;
  if (c.z_values.size() == z.size() && c.z_values == z) return c;

  c.f_knot.assign(phases_.size(), {});
  c.x_center.assign(total_intervals_, VecX());
  c.u_center.assign(total_intervals_, VecX());
  c.f_center.assign(total_intervals_, VecX());
  c.c_eq.setZero(num_eq());
  c.c_in.setZero(num_ineq());

  int ineq_row = 0;
  for (int j = 0; j < num_phases(); ++j) {
    const PhaseSpec& ph = phases_[j];
    const double h = z[h_offset(j)];
    auto& fk = c.f_knot[j];
    fk.resize(ph.num_intervals + 1);
    for (int i = 0; i <= ph.num_intervals; ++i) {
      const int k = phase_start_[j] + i;
      const VecX x = z.segment(state_offset(k), nx_);
      const VecX u = z.segment(control_offset(k), nu_);
      fk[i] = ph.dynamics(x, u);
      if (!fk[i].allFinite())
        throw TrajOptError("non-finite dynamics at phase " + std::to_string(j) + " knot " +
                           std::to_string(i));
      if (ph.stay) {
        const VecX s = ph.stay(x);
        c.c_in.segment(ineq_row, s.size()) = s;
        ineq_row += static_cast<int>(s.size());
      }
    }
    for (int i = 0; i < ph.num_intervals; ++i) {
      const int k = phase_start_[j] + i;
      const int m = k;  // global interval index coincides with the left knot
      const VecX x_k = z.segment(state_offset(k), nx_);
      const VecX x_k1 = z.segment(state_offset(k + 1), nx_);
      const VecX u_k = z.segment(control_offset(k), nu_);
      const VecX u_k1 = z.segment(control_offset(k + 1), nu_);
      c.x_center[m] = 0.5 * (x_k + x_k1) + (h / 8.0) * (fk[i] - fk[i + 1]);
      c.u_center[m] = 0.5 * (u_k + u_k1);
      c.f_center[m] = ph.dynamics(c.x_center[m], c.u_center[m]);
      if (!c.f_center[m].allFinite())
        throw TrajOptError("non-finite dynamics at phase " + std::to_string(j) +
                           " midpoint of interval " + std::to_string(i));
      c.c_eq.segment(m * nx_, nx_) =
          x_k - x_k1 + (h / 6.0) * (fk[i] + 4.0 * c.f_center[m] + fk[i + 1]);
    }
  }

  int guard_row = total_intervals_ * nx_;
  for (int j = 0; j + 1 < num_phases(); ++j) {
    if (!phases_[j].exit_guard) continue;
    const VecX x = z.segment(state_offset(last_knot(j)), nx_);
    c.c_eq[guard_row++] = phases_[j].exit_guard(x);
  }

  c.z_values = z;
  c.z_jacs.resize(0);
  return c;
}

const CollocationNlp::Cache& CollocationNlp::jacobians(const VecX& z) const {
  Cache& c = const_cast<Cache&>(values(z));
  if (c.z_jacs.size() == z.size() && c.z_jacs == z) return c;

  c.a_knot.assign(phases_.size(), {});
  c.b_knot.assign(phases_.size(), {});
  c.a_center.assign(total_intervals_, MatX());
  c.b_center.assign(total_intervals_, MatX());
  c.j_eq.setZero(num_eq(), num_vars());
  c.j_in.setZero(num_ineq(), num_vars());

  const MatX eye = MatX::Identity(nx_, nx_);
  int ineq_row = 0;
  for (int j = 0; j < num_phases(); ++j) {
    const PhaseSpec& ph = phases_[j];
    const double h = z[h_offset(j)];
    auto& ak = c.a_knot[j];
    auto& bk = c.b_knot[j];
    ak.resize(ph.num_intervals + 1);
    bk.resize(ph.num_intervals + 1);
    for (int i = 0; i <= ph.num_intervals; ++i) {
      const int k = phase_start_[j] + i;
      const VecX x = z.segment(state_offset(k), nx_);
      const VecX u = z.segment(control_offset(k), nu_);
      ak[i].resize(nx_, nx_);
      bk[i].resize(nx_, nu_);
      ph.dynamics_jacobian(x, u, ak[i], bk[i]);
      if (ph.stay) {
        const MatX sj = ph.stay_jacobian(x);
        c.j_in.block(ineq_row, state_offset(k), sj.rows(), nx_) = sj;
        ineq_row += static_cast<int>(sj.rows());
      }
    }
    for (int i = 0; i < ph.num_intervals; ++i) {
      const int k = phase_start_[j] + i;
      const int m = k;
      c.a_center[m].resize(nx_, nx_);
      c.b_center[m].resize(nx_, nu_);
      ph.dynamics_jacobian(c.x_center[m], c.u_center[m], c.a_center[m], c.b_center[m]);

      const MatX& a_c = c.a_center[m];
      const MatX& b_c = c.b_center[m];
      const MatX dxc_dxk = 0.5 * eye + (h / 8.0) * ak[i];
      const MatX dxc_dxk1 = 0.5 * eye - (h / 8.0) * ak[i + 1];
      const MatX dxc_duk = (h / 8.0) * bk[i];
      const MatX dxc_duk1 = -(h / 8.0) * bk[i + 1];
      const VecX dxc_dh = (c.f_knot[j][i] - c.f_knot[j][i + 1]) / 8.0;

      auto rows = c.j_eq.middleRows(m * nx_, nx_);
      rows.middleCols(state_offset(k), nx_) =
          eye + (h / 6.0) * (ak[i] + 4.0 * a_c * dxc_dxk);
      rows.middleCols(state_offset(k + 1), nx_) =
          -eye + (h / 6.0) * (ak[i + 1] + 4.0 * a_c * dxc_dxk1);
      rows.middleCols(control_offset(k), nu_) =
          (h / 6.0) * (bk[i] + 4.0 * (a_c * dxc_duk + 0.5 * b_c));
      rows.middleCols(control_offset(k + 1), nu_) =
          (h / 6.0) * (bk[i + 1] + 4.0 * (a_c * dxc_duk1 + 0.5 * b_c));
      rows.col(h_offset(j)) =
          (c.f_knot[j][i] + 4.0 * c.f_center[m] + c.f_knot[j][i + 1]) / 6.0 +
          (h / 6.0) * 4.0 * (a_c * dxc_dh);
    }
  }

  int guard_row = total_intervals_ * nx_;
  for (int j = 0; j + 1 < num_phases(); ++j) {
    if (!phases_[j].exit_guard) continue;
    const VecX x = z.segment(state_offset(last_knot(j)), nx_);
    c.j_eq.row(guard_row).segment(state_offset(last_knot(j)), nx_) =
        phases_[j].exit_guard_grad(x).transpose();
    ++guard_row;
  }

  c.z_jacs = z;
  return c;
}

double CollocationNlp::cost(const VecX& z) const {
  double total = 0.0;
  for (int j = 0; j < num_phases(); ++j) {
    const double h = z[h_offset(j)];
    for (int i = 0; i < phases_[j].num_intervals; ++i) {
      const int k = phase_start_[j] + i;
      const VecX u = z.segment(control_offset(k), nu_);
      total += u.dot(control_cost_ * u) * h + time_cost_ * h;
    }
  }
  return total;
}

VecX CollocationNlp::cost_grad(const VecX& z) const {
  VecX g = VecX::Zero(num_vars());
  for (int j = 0; j < num_phases(); ++j) {
    const double h = z[h_offset(j)];
    double dh = 0.0;
    for (int i = 0; i < phases_[j].num_intervals; ++i) {
      const int k = phase_start_[j] + i;
      const VecX u = z.segment(control_offset(k), nu_);
      g.segment(control_offset(k), nu_) += 2.0 * h * (control_cost_ * u);
      dh += u.dot(control_cost_ * u) + time_cost_;
    }
    g[h_offset(j)] = dh;
  }
  return g;
}

VecX CollocationNlp::eq_constraints(const VecX& z) const { return values(z).c_eq; }
MatX CollocationNlp::eq_jacobian(const VecX& z) const { return jacobians(z).j_eq; }
VecX CollocationNlp::ineq_constraints(const VecX& z) const { return values(z).c_in; }
MatX CollocationNlp::ineq_jacobian(const VecX& z) const { return jacobians(z).j_in; }

namespace {
// Differencing analytic Jacobians: the underwater blocks have huge third
// derivatives, so a smaller step than cbrt(eps) keeps truncation error below
// the solver's stationarity tolerance at modest roundoff cost.
constexpr double kHessFdStep = 6.0554544523933395e-06;  // cbrt(machine epsilon)
}

MatX CollocationNlp::lagrangian_hessian(const VecX& z, const VecX& eq_duals,
                                        const VecX& in_duals) const {
  const int n = num_vars();
  MatX hess = MatX::Zero(n, n);

  // Cost curvature is analytic: the control-effort term u'Ru h couples each
  // left-knot control with itself and with the phase step.
  for (int j = 0; j < num_phases(); ++j) {
    const double h = z[h_offset(j)];
    for (int i = 0; i < phases_[j].num_intervals; ++i) {
      const int k = phase_start_[j] + i;
      const VecX u = z.segment(control_offset(k), nu_);
      hess.block(control_offset(k), control_offset(k), nu_, nu_) +=
          h * (control_cost_ + control_cost_.transpose());
      const VecX cross = (control_cost_ + control_cost_.transpose()) * u;
      hess.block(control_offset(k), h_offset(j), nu_, 1) += cross;
      hess.block(h_offset(j), control_offset(k), 1, nu_) += cross.transpose();
    }
  }

  // Defect curvature: each interval's defect touches 2(nx+nu)+1 variables, so
  // its multiplier-weighted Hessian block comes from central differences of
  // the analytic interval gradient.
  const int nloc = 2 * (nx_ + nu_) + 1;
  const MatX eye = MatX::Identity(nx_, nx_);
  for (int j = 0; j < num_phases(); ++j) {
    const PhaseSpec& ph = phases_[j];
    for (int i = 0; i < ph.num_intervals; ++i) {
      const int k = phase_start_[j] + i;
      const VecX lam = eq_duals.segment(k * nx_, nx_);
      if (lam.lpNorm<Eigen::Infinity>() < 1e-14) continue;

      VecX zl(nloc);
      zl << z.segment(state_offset(k), nx_), z.segment(control_offset(k), nu_),
          z.segment(state_offset(k + 1), nx_), z.segment(control_offset(k + 1), nu_),
          z[h_offset(j)];

      auto local_grad = [&](const VecX& v) {
        const VecX x_k = v.segment(0, nx_);
        const VecX u_k = v.segment(nx_, nu_);
        const VecX x_k1 = v.segment(nx_ + nu_, nx_);
        const VecX u_k1 = v.segment(2 * nx_ + nu_, nu_);
        const double h = v[nloc - 1];

        const VecX f_k = ph.dynamics(x_k, u_k);
        const VecX f_k1 = ph.dynamics(x_k1, u_k1);
        const VecX x_c = 0.5 * (x_k + x_k1) + (h / 8.0) * (f_k - f_k1);
        const VecX u_c = 0.5 * (u_k + u_k1);
        const VecX f_c = ph.dynamics(x_c, u_c);

        MatX a_k(nx_, nx_), b_k(nx_, nu_), a_k1(nx_, nx_), b_k1(nx_, nu_);
        MatX a_c(nx_, nx_), b_c(nx_, nu_);
        ph.dynamics_jacobian(x_k, u_k, a_k, b_k);
        ph.dynamics_jacobian(x_k1, u_k1, a_k1, b_k1);
        ph.dynamics_jacobian(x_c, u_c, a_c, b_c);

        const MatX dxc_dxk = 0.5 * eye + (h / 8.0) * a_k;
        const MatX dxc_dxk1 = 0.5 * eye - (h / 8.0) * a_k1;
        const MatX dxc_duk = (h / 8.0) * b_k;
        const MatX dxc_duk1 = -(h / 8.0) * b_k1;
        const VecX dxc_dh = (f_k - f_k1) / 8.0;

        VecX g(nloc);
        g.segment(0, nx_) = (eye + (h / 6.0) * (a_k + 4.0 * a_c * dxc_dxk)).transpose() * lam;
        g.segment(nx_, nu_) =
            ((h / 6.0) * (b_k + 4.0 * (a_c * dxc_duk + 0.5 * b_c))).transpose() * lam;
        g.segment(nx_ + nu_, nx_) =
            (-eye + (h / 6.0) * (a_k1 + 4.0 * a_c * dxc_dxk1)).transpose() * lam;
        g.segment(2 * nx_ + nu_, nu_) =
            ((h / 6.0) * (b_k1 + 4.0 * (a_c * dxc_duk1 + 0.5 * b_c))).transpose() * lam;
        g[nloc - 1] = ((f_k + 4.0 * f_c + f_k1) / 6.0 + (h / 6.0) * 4.0 * (a_c * dxc_dh)).dot(lam);
        return g;
      };

      MatX hl(nloc, nloc);
      VecX vp = zl, vm = zl;
      for (int c = 0; c < nloc; ++c) {
        const double step = kHessFdStep * std::max(1.0, std::abs(zl[c]));
        vp[c] = zl[c] + step;
        vm[c] = zl[c] - step;
        hl.col(c) = (local_grad(vp) - local_grad(vm)) / (2.0 * step);
        vp[c] = zl[c];
        vm[c] = zl[c];
      }
      hl = (0.5 * (hl + hl.transpose())).eval();

      const std::array<std::pair<int, int>, 5> span = {{{state_offset(k), nx_},
                                                        {control_offset(k), nu_},
                                                        {state_offset(k + 1), nx_},
                                                        {control_offset(k + 1), nu_},
                                                        {h_offset(j), 1}}};
      int row0 = 0;
      for (const auto& [gr, nr] : span) {
        int col0 = 0;
        for (const auto& [gc, nc] : span) {
          hess.block(gr, gc, nr, nc) += hl.block(row0, col0, nr, nc);
          col0 += nc;
        }
        row0 += nr;
      }
    }
  }

  // Guard-equality curvature.
  int guard_row = total_intervals_ * nx_;
  for (int j = 0; j + 1 < num_phases(); ++j) {
    if (!phases_[j].exit_guard) continue;
    const double w = eq_duals[guard_row++];
    if (std::abs(w) < 1e-14) continue;
    const int off = state_offset(last_knot(j));
    const VecX x0 = z.segment(off, nx_);
    MatX hb(nx_, nx_);
    VecX xp = x0, xm = x0;
    for (int c = 0; c < nx_; ++c) {
      const double step = kHessFdStep * std::max(1.0, std::abs(x0[c]));
      xp[c] = x0[c] + step;
      xm[c] = x0[c] - step;
      hb.col(c) =
          w * (phases_[j].exit_guard_grad(xp) - phases_[j].exit_guard_grad(xm)) / (2.0 * step);
      xp[c] = x0[c];
      xm[c] = x0[c];
    }
    hess.block(off, off, nx_, nx_) += 0.5 * (hb + hb.transpose());
  }

  // Stay-stack curvature, rows in assembly order.
  int row = 0;
  for (int j = 0; j < num_phases(); ++j) {
    const PhaseSpec& ph = phases_[j];
    if (!ph.stay) continue;
    for (int i = 0; i <= ph.num_intervals; ++i) {
      const int k = phase_start_[j] + i;
      const int off = state_offset(k);
      const VecX x0 = z.segment(off, nx_);
      const int nr = static_cast<int>(ph.stay(x0).size());
      const VecX w = in_duals.segment(row, nr);
      row += nr;
      if (w.lpNorm<Eigen::Infinity>() < 1e-14) continue;
      MatX hb(nx_, nx_);
      VecX xp = x0, xm = x0;
      for (int c = 0; c < nx_; ++c) {
        const double step = kHessFdStep * std::max(1.0, std::abs(x0[c]));
        xp[c] = x0[c] + step;
        xm[c] = x0[c] - step;
        hb.col(c) = (ph.stay_jacobian(xp) - ph.stay_jacobian(xm)).transpose() * w / (2.0 * step);
        xp[c] = x0[c];
        xm[c] = x0[c];
      }
      hess.block(off, off, nx_, nx_) += 0.5 * (hb + hb.transpose());
    }
  }

  // The finite-difference blocks are symmetric only up to their noise floor.
  return 0.5 * (hess + hess.transpose());
}

// ---- Water-exit front end ----

ModeSchedule ModeSchedule::water_exit() {
  ModeSchedule s;
  s.phases = {HybridMode::Water, HybridMode::TransitionExit, HybridMode::Air};
  s.knots_per_phase = {20, 8, 20};
  return s;
}

TrajOptProblem::TrajOptProblem() {
  x_init << -3.5, -1.0, 0.0, 0.0, 0.5, 0.0, 0.0;
  delta_init << 0.5, 0.1, 0.05, 0.0, 0.0, 0.0, 0.0;
  x_final << 0.0, 1.0, 0.0, 0.0, 10.0, 0.0, 0.0;
  delta_final << 2.0, 0.5, 0.15, M_PI / 2.0, 2.0, 2.0, 10.0;
  x_min = Vec7::Constant(-10.0);
  x_max = Vec7::Constant(10.0);
  u_min << -10.0, 0.0;
  u_max << 10.0, 5.0;
}

namespace {

// Signed guard that fires the from->to transition; positive crossing triggers.
struct TransitionGuard {
  double sign;
  int which;  // 1 or 2
};

TransitionGuard transition_guard(HybridMode from, HybridMode to) {
  using HM = HybridMode;
  if (from == HM::Water && to == HM::TransitionExit) return {+1.0, 1};
  if (from == HM::TransitionExit && to == HM::Air) return {+1.0, 2};
  if (from == HM::Air && to == HM::TransitionEntry) return {-1.0, 1};
  if (from == HM::TransitionEntry && to == HM::Water) return {-1.0, 2};
  throw TrajOptError("no guard connects " + to_string(from) + " -> " + to_string(to));
}

PlanarState to_state(const VecX& x) { return PlanarState::from_vec(Vec7(x)); }

ControlInput to_control(const VecX& u) { return ControlInput{u[0], u[1]}; }

}  // namespace

std::unique_ptr<CollocationNlp> build_problem(const TrajOptProblem& p,
                                              const VehicleParams& params) {
  const auto& sched = p.schedule;
  if (sched.phases.empty() || sched.phases.size() != sched.knots_per_phase.size())
    throw TrajOptError("mode schedule and knot counts disagree");

  std::vector<PhaseSpec> phases(sched.phases.size());
  for (size_t j = 0; j < sched.phases.size(); ++j) {
    const HybridMode mode = sched.phases[j];
    PhaseSpec& ph = phases[j];
    ph.num_intervals = sched.knots_per_phase[j];
    ph.dynamics = [mode, params](const VecX& x, const VecX& u) -> VecX {
      return dynamics::dynamics_f(to_state(x), to_control(u), mode, params);
    };
    ph.dynamics_jacobian = [mode, params](const VecX& x, const VecX& u, MatX& a, MatX& b) {
      const auto lin = dynamics::linearize(to_state(x), to_control(u), mode, params);
      a = lin.A;
      b = lin.B;
    };
    ph.stay = [mode, params](const VecX& x) -> VecX {
      return dynamics::guard_stack(to_state(x), mode, params);
    };
    ph.stay_jacobian = [mode, params](const VecX& x) -> MatX {
      return dynamics::guard_stack_jacobian(to_state(x), mode, params);
    };
    if (j + 1 < sched.phases.size()) {
      const TransitionGuard tg = transition_guard(mode, sched.phases[j + 1]);
      ph.exit_guard = [tg, params](const VecX& x) -> double {
        const PlanarState s = to_state(x);
        return tg.sign * (tg.which == 1 ? dynamics::guard_psi1(s, params)
                                        : dynamics::guard_psi2(s, params));
      };
      ph.exit_guard_grad = [tg, params](const VecX& x) -> VecX {
        const PlanarState s = to_state(x);
        return tg.sign * (tg.which == 1 ? dynamics::guard_psi1_grad(s, params)
                                        : dynamics::guard_psi2_grad(s, params));
      };
    }
  }

  CollocationBounds b;
  b.x_lo = p.x_min;
  b.x_hi = p.x_max;
  b.u_lo = p.u_min;
  b.u_hi = p.u_max;
  b.x0_lo = p.x_init - p.delta_init;
  b.x0_hi = p.x_init + p.delta_init;
  b.xf_lo = p.x_final - p.delta_final;
  b.xf_hi = p.x_final + p.delta_final;
  b.h_min = p.h_min;
  b.h_max = p.h_max;

  return std::make_unique<CollocationNlp>(7, 2, std::move(phases), std::move(b), MatX(p.R),
                                          p.D);
}

NominalTrajectory decode_trajectory(const CollocationNlp& nlp, const VecX& z,
                                    const TrajOptProblem& p, const VehicleParams& params) {
  NominalTrajectory traj;
  double t0 = 0.0;
  for (int j = 0; j < nlp.num_phases(); ++j) {
    NominalTrajectory::Phase ph;
    ph.mode = p.schedule.phases[j];
    ph.h = z[nlp.h_offset(j)];
    ph.start_time = t0;
    for (int k = nlp.first_knot(j); k <= nlp.last_knot(j); ++k) {
      const Vec7 x = z.segment(nlp.state_offset(k), 7);
      const Vec2 u = z.segment(nlp.control_offset(k), 2);
      ph.states.push_back(x);
      ph.controls.push_back(u);
      ph.derivs.push_back(dynamics::dynamics_f(PlanarState::from_vec(x),
                                               ControlInput{u[0], u[1]}, ph.mode, params));
    }
    t0 += ph.duration();
    traj.phases.push_back(std::move(ph));
  }
  return traj;
}

double NominalTrajectory::total_duration() const {
  double t = 0.0;
  for (const auto& ph : phases) t += ph.duration();
  return t;
}

int NominalTrajectory::phase_index(HybridMode mode) const {
  for (size_t j = 0; j < phases.size(); ++j)
    if (phases[j].mode == mode) return static_cast<int>(j);
  return -1;
}

const NominalTrajectory::Phase& NominalTrajectory::phase_for(HybridMode mode) const {
  const int j = phase_index(mode);
  if (j < 0) throw TrajOptError("trajectory has no phase in mode " + to_string(mode));
  return phases[j];
}

TrajectorySample sample(const NominalTrajectory& traj, double tau, HybridMode mode) {
  const auto& ph = traj.phase_for(mode);
  TrajectorySample out;
  const double T = ph.duration();
  if (tau < 0.0 || tau > T) {
    out.clamped = true;
    tau = std::min(std::max(tau, 0.0), T);
  }
  const int n = ph.intervals();
  const int i = std::min(static_cast<int>(tau / ph.h), n - 1);
  const double s = (tau - i * ph.h) / ph.h;
  const double s2 = s * s, s3 = s2 * s;

  const Vec7& x0 = ph.states[i];
  const Vec7& x1 = ph.states[i + 1];
  const Vec7& f0 = ph.derivs[i];
  const Vec7& f1 = ph.derivs[i + 1];
  out.x = (2.0 * s3 - 3.0 * s2 + 1.0) * x0 + (s3 - 2.0 * s2 + s) * ph.h * f0 +
          (-2.0 * s3 + 3.0 * s2) * x1 + (s3 - s2) * ph.h * f1;
  out.u = (1.0 - s) * ph.controls[i] + s * ph.controls[i + 1];
  return out;
}

TrajOptSolution solve(const TrajOptProblem& p, const VehicleParams& params,
                      const SolverOptions& opts) {
  const auto nlp = build_problem(p, params);
  SqpOptions sopts;
  sopts.feas_tol = opts.feas_tol;
  sopts.opt_tol = opts.opt_tol;
  sopts.max_iter = opts.max_iter;
  sopts.verbose = opts.verbose;
  // Underwater dynamics make the linearization trustworthy only locally;
  // start conservatively and let the trust region earn its size.
  sopts.initial_trust = 0.25;

  SqpResult res;
  try {
    res = solve_sqp(*nlp, nlp->initial_guess(), sopts);
  } catch (const SqpFailure& e) {
    const VecX c_eq = nlp->eq_constraints(e.result.x);
    const VecX c_in = nlp->ineq_constraints(e.result.x);
    int worst_eq = 0;
    double worst_eq_v = 0.0;
    for (int i = 0; i < c_eq.size(); ++i)
      if (std::abs(c_eq[i]) > worst_eq_v) worst_eq_v = std::abs(c_eq[i]), worst_eq = i;
    double worst_in_v = 0.0;
    for (int i = 0; i < c_in.size(); ++i) worst_in_v = std::max(worst_in_v, c_in[i]);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "trajectory optimization failed (%s); worst defect/guard row %d "
                  "|violation| %.3e, worst stay violation %.3e",
                  e.what(), worst_eq, worst_eq_v, worst_in_v);
    throw TrajOptError(buf);
  }

  TrajOptSolution sol;
  sol.trajectory = decode_trajectory(*nlp, res.x, p, params);
  sol.iterations = res.iterations;
  sol.cost = res.cost;
  sol.feas_inf = res.feas_inf;
  sol.kkt_inf = res.kkt_inf;
  return sol;
}

// ---- CSV exchange ----

void save_trajectory(const std::string& path, const NominalTrajectory& traj) {
  std::ofstream out(path);
  if (!out) throw TrajOptError("cannot open " + path + " for writing");
  out << "# uaav-trajectory v1\n# phases:";
  for (const auto& ph : traj.phases) out << ' ' << to_string(ph.mode);
  out << "\nphase,k,t,r_x,r_z,theta,delta,v_x,v_z,omega_y,delta_rate,thrust,h\n";
  char buf[512];
  for (size_t j = 0; j < traj.phases.size(); ++j) {
    const auto& ph = traj.phases[j];
    for (size_t k = 0; k < ph.states.size(); ++k) {
      const double t = ph.start_time + static_cast<double>(k) * ph.h;
      int n = std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g", j, k, t);
      for (int i = 0; i < 7; ++i)
        n += std::snprintf(buf + n, sizeof buf - n, ",%.17g", ph.states[k][i]);
      for (int i = 0; i < 2; ++i)
        n += std::snprintf(buf + n, sizeof buf - n, ",%.17g", ph.controls[k][i]);
      std::snprintf(buf + n, sizeof buf - n, ",%.17g", ph.h);
      out << buf << '\n';
    }
  }
}

NominalTrajectory load_trajectory(const std::string& path, const VehicleParams& params) {
  std::ifstream in(path);
  if (!in) throw TrajOptError("cannot open trajectory file " + path);
  std::string line;
  if (!std::getline(in, line) || line != "# uaav-trajectory v1")
    throw TrajOptError("unrecognized trajectory file format in " + path);
  if (!std::getline(in, line) || line.rfind("# phases:", 0) != 0)
    throw TrajOptError("trajectory file missing phase list in " + path);

  std::vector<HybridMode> modes;
  {
    std::istringstream ss(line.substr(std::strlen("# phases:")));
    std::string name;
    while (ss >> name) modes.push_back(mode_from_string(name));
  }
  if (modes.empty()) throw TrajOptError("trajectory file lists no phases");
  if (!std::getline(in, line) || line.rfind("phase,k,t,", 0) != 0)
    throw TrajOptError("trajectory file missing column header");

  NominalTrajectory traj;
  traj.phases.resize(modes.size());
  for (size_t j = 0; j < modes.size(); ++j) traj.phases[j].mode = modes[j];

  int lineno = 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<double> v;
    while (std::getline(ss, field, ',')) v.push_back(std::strtod(field.c_str(), nullptr));
    if (v.size() != 13)
      throw TrajOptError("malformed trajectory row at line " + std::to_string(lineno));
    const int j = static_cast<int>(v[0]);
    if (j < 0 || j >= static_cast<int>(modes.size()))
      throw TrajOptError("trajectory row names unknown phase at line " + std::to_string(lineno));
    auto& ph = traj.phases[j];
    if (static_cast<size_t>(v[1]) != ph.states.size())
      throw TrajOptError("trajectory knots out of order at line " + std::to_string(lineno));
    Vec7 x;
    for (int i = 0; i < 7; ++i) x[i] = v[3 + i];
    ph.states.push_back(x);
    ph.controls.push_back(Vec2(v[10], v[11]));
    if (ph.states.size() == 1) {
      ph.h = v[12];
      ph.start_time = v[2];
    } else if (std::abs(ph.h - v[12]) > 1e-12) {
      throw TrajOptError("inconsistent step within phase at line " + std::to_string(lineno));
    }
  }

  double t0 = 0.0;
  for (size_t j = 0; j < traj.phases.size(); ++j) {
    auto& ph = traj.phases[j];
    if (ph.states.size() < 2)
      throw TrajOptError("phase " + std::to_string(j) + " has fewer than two knots");
    if (j > 0) {
      const Vec7 gap = traj.phases[j - 1].states.back() - ph.states.front();
      if (gap.lpNorm<Eigen::Infinity>() > 1e-9)
        throw TrajOptError("discontinuous state across phase boundary " + std::to_string(j));
    }
    if (std::abs(ph.start_time - t0) > 1e-9)
      throw TrajOptError("phase " + std::to_string(j) + " start time disagrees with steps");
    for (size_t k = 0; k < ph.states.size(); ++k)
      ph.derivs.push_back(dynamics::dynamics_f(
          PlanarState::from_vec(ph.states[k]),
          ControlInput{ph.controls[k][0], ph.controls[k][1]}, ph.mode, params));
    t0 += ph.duration();
  }
  return traj;
}

}  // namespace uaav::trajopt
