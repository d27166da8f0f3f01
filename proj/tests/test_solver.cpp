#include <doctest.h>

#include <cmath>
#include <random>

#include "uaav/trajopt/qp.hpp"
#include "uaav/trajopt/sqp.hpp"

using namespace uaav;
using namespace uaav::trajopt;

namespace {

// Equality-constrained QP oracle: solve the KKT system
//   [H A'; A 0] [x; lambda] = [-g; b]
// directly with a dense LU factorization.
struct KktSolution {
  VecX x;
  VecX lambda;
};

KktSolution solve_kkt(const MatX& H, const VecX& g, const MatX& A, const VecX& b) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(A.rows());
  MatX kkt = MatX::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n) = H;
  kkt.topRightCorner(n, m) = A.transpose();
  kkt.bottomLeftCorner(m, n) = A;
  VecX rhs(n + m);
  rhs.head(n) = -g;
  rhs.tail(m) = b;
  const VecX sol = kkt.fullPivLu().solve(rhs);
  return {sol.head(n), sol.tail(m)};
}

MatX random_spd(int n, std::mt19937& rng) {
  std::normal_distribution<double> gauss;
  MatX m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = gauss(rng);
  return m * m.transpose() + 0.5 * static_cast<double>(n) * MatX::Identity(n, n);
}

VecX random_vec(int n, std::mt19937& rng) {
  std::normal_distribution<double> gauss;
  VecX v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

const MatX kNoRows = MatX::Zero(0, 0);
const VecX kNoRhs = VecX::Zero(0);

MatX empty_rows(int n) { return MatX::Zero(0, n); }

// Minimal problems for the SQP driver. Derivatives intentionally left to the
// finite-difference defaults so those paths get exercised too.
class QuarticBowl : public NlpProblem {
 public:
  int num_vars() const override { return 1; }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 0; }
  double cost(const VecX& x) const override {
    const double d = x[0] - 2.0;
    return d * d + 0.1 * d * d * d * d;
  }
};

class HalfspaceQuadratic : public NlpProblem {
 public:
  int num_vars() const override { return 1; }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 1; }
  double cost(const VecX& x) const override { return x[0] * x[0]; }
  VecX ineq_constraints(const VecX& x) const override {
    VecX c(1);
    c[0] = 1.0 - x[0];  // x >= 1
    return c;
  }
};

class Rosenbrock : public NlpProblem {
 public:
  int num_vars() const override { return 2; }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 0; }
  double cost(const VecX& x) const override {
    const double a = x[1] - x[0] * x[0];
    const double b = 1.0 - x[0];
    return 100.0 * a * a + b * b;
  }
};

class CircleTangent : public NlpProblem {
 public:
  int num_vars() const override { return 2; }
  int num_eq() const override { return 1; }
  int num_ineq() const override { return 0; }
  double cost(const VecX& x) const override { return x[0] + x[1]; }
  VecX eq_constraints(const VecX& x) const override {
    VecX c(1);
    c[0] = x[0] * x[0] + x[1] * x[1] - 2.0;
    return c;
  }
};

class ShiftedBowlWithFloor : public NlpProblem {
 public:
  int num_vars() const override { return 1; }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 0; }
  VecX lower_bounds() const override { return VecX::Zero(1); }
  double cost(const VecX& x) const override { return (x[0] + 1.0) * (x[0] + 1.0); }
};

// Hock-Schittkowski 71, the usual four-variable benchmark with one equality,
// one inequality, and box bounds.
class Hs71 : public NlpProblem {
 public:
  int num_vars() const override { return 4; }
  int num_eq() const override { return 1; }
  int num_ineq() const override { return 1; }
  VecX lower_bounds() const override { return VecX::Constant(4, 1.0); }
  VecX upper_bounds() const override { return VecX::Constant(4, 5.0); }
  double cost(const VecX& x) const override {
    return x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2];
  }
  VecX eq_constraints(const VecX& x) const override {
    VecX c(1);
    c[0] = x.squaredNorm() - 40.0;
    return c;
  }
  VecX ineq_constraints(const VecX& x) const override {
    VecX c(1);
    c[0] = 25.0 - x[0] * x[1] * x[2] * x[3];
    return c;
  }
};

// Linearizing the circle at the origin yields a zero constraint row, so the
// first QP subproblem is inconsistent and must go through the elastic
// relaxation before the iterates can recover.
class CircleFromCenter : public NlpProblem {
 public:
  int num_vars() const override { return 2; }
  int num_eq() const override { return 1; }
  int num_ineq() const override { return 1; }
  double cost(const VecX& x) const override { return x[0] + x[1]; }
  VecX eq_constraints(const VecX& x) const override {
    VecX c(1);
    c[0] = x[0] * x[0] + x[1] * x[1] - 2.0;
    return c;
  }
  VecX ineq_constraints(const VecX& x) const override {
    VecX c(1);
    c[0] = 1.0 - x[0];  // x >= 1
    return c;
  }
};

class InfeasibleCircleLine : public NlpProblem {
 public:
  int num_vars() const override { return 2; }
  int num_eq() const override { return 2; }
  int num_ineq() const override { return 0; }
  double cost(const VecX& x) const override { return x.squaredNorm(); }
  VecX eq_constraints(const VecX& x) const override {
    VecX c(2);
    c[0] = x[0] * x[0] + x[1] * x[1] - 1.0;
    c[1] = x[0] + x[1] - 2.0;  // line misses the unit circle
    return c;
  }
};

}  // namespace

TEST_CASE("qp recovers the unconstrained minimizer when nothing binds") {
  MatX h = MatX::Identity(2, 2);
  VecX g(2);
  g << -1.0, -2.0;
  const QpResult r = solve_qp(h, g, empty_rows(2), kNoRhs, empty_rows(2), kNoRhs);
  CHECK(r.x[0] == doctest::Approx(1.0));
  CHECK(r.x[1] == doctest::Approx(2.0));
  CHECK(r.objective == doctest::Approx(-2.5));
}

TEST_CASE("qp equality projection matches the hand multiplier") {
  // min x^2 + y^2 s.t. x + y = 1: x = y = 1/2, lambda = -1.
  MatX h = 2.0 * MatX::Identity(2, 2);
  VecX g = VecX::Zero(2);
  MatX a(1, 2);
  a << 1.0, 1.0;
  VecX b(1);
  b << 1.0;
  const QpResult r = solve_qp(h, g, a, b, empty_rows(2), kNoRhs);
  CHECK(r.x[0] == doctest::Approx(0.5));
  CHECK(r.x[1] == doctest::Approx(0.5));
  CHECK(r.eq_duals[0] == doctest::Approx(-1.0));
}

TEST_CASE("qp active inequality carries the hand-derived dual") {
  // min 0.5|x|^2 s.t. x0 >= 1: x = (1, 0), mu = 1 on the -x0 <= -1 row.
  MatX h = MatX::Identity(2, 2);
  VecX g = VecX::Zero(2);
  MatX a(1, 2);
  a << -1.0, 0.0;
  VecX b(1);
  b << -1.0;
  const QpResult r = solve_qp(h, g, empty_rows(2), kNoRhs, a, b);
  CHECK(r.x[0] == doctest::Approx(1.0));
  CHECK(r.x[1] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(r.ineq_duals[0] == doctest::Approx(1.0));
}

TEST_CASE("qp box clamp matches the componentwise solution") {
  // min 0.5|x - c|^2 over [-1, 1]^2 with c = (2, -3).
  MatX h = MatX::Identity(2, 2);
  VecX g(2);
  g << -2.0, 3.0;
  MatX a(4, 2);
  a << 1, 0, 0, 1, -1, 0, 0, -1;
  VecX b(4);
  b << 1, 1, 1, 1;
  const QpResult r = solve_qp(h, g, empty_rows(2), kNoRhs, a, b);
  CHECK(r.x[0] == doctest::Approx(1.0));
  CHECK(r.x[1] == doctest::Approx(-1.0));
  CHECK(r.ineq_duals[0] == doctest::Approx(1.0));   // upper bound on x0
  CHECK(r.ineq_duals[3] == doctest::Approx(2.0));   // lower bound on x1
  CHECK(r.ineq_duals[1] == doctest::Approx(0.0));
  CHECK(r.ineq_duals[2] == doctest::Approx(0.0));
}

TEST_CASE("qp equality-only instances agree with a dense KKT factorization") {
  std::mt19937 rng(91);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 18);
    const int m = 1 + static_cast<int>(rng() % static_cast<unsigned>(n - 1));
    const MatX h = random_spd(n, rng);
    const VecX g = random_vec(n, rng);
    MatX a(m, n);
    for (int i = 0; i < m; ++i) a.row(i) = random_vec(n, rng).transpose();
    const VecX b = random_vec(m, rng);

    const KktSolution ref = solve_kkt(h, g, a, b);
    const QpResult r = solve_qp(h, g, a, b, empty_rows(n), kNoRhs);
    CAPTURE(trial);
    CHECK((r.x - ref.x).lpNorm<Eigen::Infinity>() < 1e-8 * (1.0 + ref.x.norm()));
    CHECK((r.eq_duals - ref.lambda).lpNorm<Eigen::Infinity>() <
          1e-7 * (1.0 + ref.lambda.norm()));
  }
}

TEST_CASE("qp randomized instances satisfy the KKT conditions") {
  std::mt19937 rng(1729);
  std::uniform_real_distribution<double> unif(0.1, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 12);
    const int me = static_cast<int>(rng() % 3) % std::max(1, n - 1);
    const int mi = 1 + static_cast<int>(rng() % 20);
    const MatX h = random_spd(n, rng);
    const VecX g = random_vec(n, rng);
    MatX a_eq(me, n);
    for (int i = 0; i < me; ++i) a_eq.row(i) = random_vec(n, rng).transpose();
    const VecX x_feas = random_vec(n, rng);
    const VecX b_eq = a_eq * x_feas;
    MatX a_in(mi, n);
    VecX b_in(mi);
    for (int i = 0; i < mi; ++i) {
      a_in.row(i) = random_vec(n, rng).transpose();
      b_in[i] = a_in.row(i).dot(x_feas) + unif(rng);  // keeps x_feas strictly inside
    }

    const QpResult r = solve_qp(h, g, a_eq, b_eq, a_in, b_in);
    CAPTURE(trial);

    const VecX stat = h * r.x + g + a_eq.transpose() * r.eq_duals +
                      a_in.transpose() * r.ineq_duals;
    CHECK(stat.lpNorm<Eigen::Infinity>() < 1e-7 * (1.0 + g.norm()));
    if (me > 0) CHECK((a_eq * r.x - b_eq).lpNorm<Eigen::Infinity>() < 1e-8);
    const VecX slack = b_in - a_in * r.x;
    CHECK(slack.minCoeff() > -1e-8);
    CHECK(r.ineq_duals.minCoeff() >= 0.0);
    for (int i = 0; i < mi; ++i) CHECK(std::abs(r.ineq_duals[i] * slack[i]) < 1e-6);
    CHECK(r.objective ==
          doctest::Approx(0.5 * r.x.dot(h * r.x) + g.dot(r.x)).epsilon(1e-8));
  }
}

TEST_CASE("qp reports infeasible inequalities") {
  MatX h = MatX::Identity(1, 1);
  VecX g = VecX::Zero(1);
  MatX a(2, 1);
  a << 1.0, -1.0;  // x <= 0 and x >= 1
  VecX b(2);
  b << 0.0, -1.0;
  CHECK_THROWS_AS(solve_qp(h, g, empty_rows(1), kNoRhs, a, b), QpInfeasible);
}

TEST_CASE("qp reports inconsistent equalities and accepts redundant ones") {
  MatX h = MatX::Identity(2, 2);
  VecX g = VecX::Zero(2);
  MatX a(2, 2);
  a << 1.0, 1.0, 1.0, 1.0;
  VecX b(2);
  b << 1.0, 2.0;
  CHECK_THROWS_AS(solve_qp(h, g, a, b, empty_rows(2), kNoRhs), QpInfeasible);

  b << 1.0, 1.0;  // duplicated row, same right-hand side
  const QpResult r = solve_qp(MatX(2.0 * MatX::Identity(2, 2)), g, a, b, empty_rows(2), kNoRhs);
  CHECK(r.x[0] == doctest::Approx(0.5));
  CHECK(r.x[1] == doctest::Approx(0.5));
}

TEST_CASE("qp rejects an indefinite Hessian") {
  MatX h(2, 2);
  h << 1.0, 0.0, 0.0, -1.0;
  VecX g = VecX::Zero(2);
  CHECK_THROWS_WITH_AS(solve_qp(h, g, empty_rows(2), kNoRhs, empty_rows(2), kNoRhs),
                       "qp: Hessian is not positive definite", std::runtime_error);
}

TEST_CASE("sqp minimizes a smooth single-variable bowl") {
  // The quartic's gradient is 4(x-2)^3, so a stationarity residual of 1e-4
  // only pins x to within (1e-4/4)^(1/3) ~ 0.03 of the minimizer.
  QuarticBowl nlp;
  const SqpResult r = solve_sqp(nlp, VecX::Constant(1, -3.0));
  CHECK(r.converged());
  CHECK(r.kkt_inf <= 1e-4);
  CHECK(std::abs(r.x[0] - 2.0) < 0.03);
  CHECK(std::pow(r.x[0] - 2.0, 4.0) < 1e-5);
}

TEST_CASE("sqp finds the active halfspace and its multiplier") {
  HalfspaceQuadratic nlp;
  const SqpResult r = solve_sqp(nlp, VecX::Constant(1, 5.0));
  CHECK(r.converged());
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.ineq_duals[0] == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("sqp handles the Rosenbrock valley") {
  Rosenbrock nlp;
  VecX x0(2);
  x0 << -1.2, 1.0;
  const SqpResult r = solve_sqp(nlp, x0);
  CHECK(r.converged());
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("sqp solves the tangent-to-circle problem with its multiplier") {
  CircleTangent nlp;
  VecX x0(2);
  x0 << 0.5, -0.8;
  SqpOptions opts;
  opts.opt_tol = 1e-6;
  const SqpResult r = solve_sqp(nlp, x0, opts);
  CHECK(r.converged());
  CHECK(r.kkt_inf <= 1e-6);
  CHECK(r.x[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(r.x[1] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(r.eq_duals[0] == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("sqp respects simple bounds") {
  ShiftedBowlWithFloor nlp;
  const SqpResult r = solve_sqp(nlp, VecX::Constant(1, 3.0));
  CHECK(r.converged());
  CHECK(r.x[0] == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("sqp reproduces the published HS71 optimum") {
  Hs71 nlp;
  VecX x0(4);
  x0 << 1.0, 5.0, 5.0, 1.0;
  const SqpResult r = solve_sqp(nlp, x0);
  CHECK(r.converged());
  CHECK(r.cost == doctest::Approx(17.0140173).epsilon(1e-5));
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(r.x[1] == doctest::Approx(4.742999).epsilon(1e-3));
  CHECK(r.x[2] == doctest::Approx(3.821150).epsilon(1e-3));
  CHECK(r.x[3] == doctest::Approx(1.379408).epsilon(1e-3));
}

TEST_CASE("sqp recovers from an inconsistent first linearization") {
  CircleFromCenter nlp;
  const SqpResult r = solve_sqp(nlp, VecX::Zero(2));
  CHECK(r.converged());
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.x[1] == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("sqp reports an infeasible problem instead of pretending") {
  InfeasibleCircleLine nlp;
  VecX x0(2);
  x0 << 0.4, 0.3;
  SqpOptions opts;
  opts.max_iter = 60;
  try {
    solve_sqp(nlp, x0, opts);
    FAIL("expected SqpFailure");
  } catch (const SqpFailure& e) {
    CHECK(e.result.status != SqpStatus::Converged);
    CHECK(e.result.feas_inf > 0.05);
  }
}
