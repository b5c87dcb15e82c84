#include <doctest.h>

#include <cmath>
#include <numbers>

#include "nhsync/error.hpp"
#include "nhsync/invariant_graph.hpp"
#include "nhsync/models.hpp"

using namespace nhsync;
constexpr double kPi = std::numbers::pi;

namespace {

models::PoincareParams single_tone(double gamma) {
  models::PoincareParams p;
  p.gamma = gamma;
  p.forcing = models::Forcing::SingleTone;
  p.forcing_frequency = 2 * kPi;
  return p;
}

// Closed-form solution of r' = -alpha r (r - a) (the gamma = 0 radial equation).
double radial_solution(double r0, double alpha, double a, double t) {
  return a / (1.0 - (1.0 - a / r0) * std::exp(-alpha * a * t));
}

// Invariant graph of theta' = omega, r' = -lambda (r - c sin theta): rho = A sin + B cos.
struct LinearOracle {
  double A, B;
  LinearOracle(double omega, double lambda, double c)
      : A(lambda * lambda * c / (omega * omega + lambda * lambda)),
        B(-lambda * c * omega / (omega * omega + lambda * lambda)) {}
  double rho(double th) const { return A * std::sin(th) + B * std::cos(th); }
  double slope(double th) const { return A * std::cos(th) - B * std::sin(th); }
};

double sup_offset(const TorusGraph& g, double c) {
  double worst = 0;
  for (double v : g.values()) worst = std::max(worst, std::abs(v - c));
  return worst;
}

// theta' = -sin(theta) pulls every phase to 0.
class Collapsing : public PhaseNormalSystem {
 public:
  Collapsing() : PhaseNormalSystem(1, 1, {}) {}
  void phase_rate(std::span<const double> th, std::span<const double>, std::span<const double>,
                  std::span<double> out) const override {
    out[0] = -std::sin(th[0]);
  }
  void normal_rate(std::span<const double>, std::span<const double> r, std::span<const double>,
                   std::span<double> out) const override {
    out[0] = -r[0];
  }
};

}  // namespace

TEST_CASE("oracles") {
  // The radial closed form satisfies its ODE.
  const double r0 = 1.3, t = 0.7, h = 1e-5;
  const double r = radial_solution(r0, 1.0, 1.0, t);
  const double dr = (radial_solution(r0, 1.0, 1.0, t + h) - radial_solution(r0, 1.0, 1.0, t - h)) / (2 * h);
  CHECK(std::abs(dr + r * (r - 1.0)) < 1e-8);
  CHECK(radial_solution(r0, 1.0, 1.0, 0.0) == doctest::Approx(r0));
  // The linear graph solves omega rho' = -lambda (rho - c sin).
  LinearOracle lin(1.3, 0.7, 0.5);
  for (double th : {0.0, 1.0, 2.5, 4.0}) {
    CHECK(std::abs(1.3 * lin.slope(th) + 0.7 * (lin.rho(th) - 0.5 * std::sin(th))) < 1e-14);
  }
  // Unit-speed special case from the closed form.
  LinearOracle unit(1.0, 2.0, 1.0);
  CHECK(unit.A == doctest::Approx(4.0 / 5.0));
  CHECK(unit.B == doctest::Approx(-2.0 / 5.0));
}

TEST_CASE("persistence threshold") {
  CHECK(persistence_threshold(1, 1) == 0.5);
  CHECK(persistence_threshold(2, 3) == 9.0);
  CHECK(persistence_threshold(1, 1e-200) < 1e-300);
  CHECK_THROWS_AS(persistence_threshold(0, 1), Error);
  CHECK_THROWS_AS(persistence_threshold(1, -1), Error);
  try {
    persistence_threshold(-1, 1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Domain);
  }
}

TEST_CASE("graph transform on the unperturbed cylinder") {
  models::PoincareParams p;
  p.gamma = 0.0;
  auto chart = models::poincare_polar(p);
  TransformOptions to;
  to.window = 20.0;

  SUBCASE("exact cylinder is a fixed point") {
    auto rho = reference_graph(*chart, 8);
    CHECK(rho.torus_dim() == 3);
    auto t = graph_transform_step(rho, *chart, to);
    CHECK(sup_offset(t, p.a) <= 1e-9);
  }
  SUBCASE("offset graph contracts at the radial rate") {
    const double v[1] = {p.a + 0.1};
    auto rho = TorusGraph::constant(1, {8, 8, 8}, v);
    auto t = graph_transform_step(rho, *chart, to);
    const double oracle = radial_solution(p.a + 0.1, p.alpha, p.a, 20.0);
    CHECK(std::abs(oracle - p.a) <= 0.1 * std::exp(-20.0));
    CHECK(sup_offset(t, p.a) <= 0.1 * std::exp(-20.0) + 1e-6);
    CHECK(sup_offset(t, oracle) <= 1e-9);
  }
  SUBCASE("short window matches the closed form") {
    const double v[1] = {1.4};
    auto rho = TorusGraph::constant(1, {8, 8, 8}, v);
    to.window = 1.5;
    auto t = graph_transform_step(rho, *chart, to);
    CHECK(sup_offset(t, radial_solution(1.4, 1.0, 1.0, 1.5)) <= 1e-9);
  }
}

TEST_CASE("graph transform details") {
  auto chart = models::poincare_polar(single_tone(0.2));
  auto rho = reference_graph(*chart, 16);
  TransformOptions to;
  to.window = 20.0;
  to.threads = 1;
  auto t1 = graph_transform_step(rho, *chart, to);

  SUBCASE("successive steps contract") {
    auto t2 = graph_transform_step(t1, *chart, to);
    CHECK(t2.sup_distance(t1) < t1.sup_distance(rho));
  }
  SUBCASE("thread count does not change the result") {
    to.threads = 3;
    auto t3 = graph_transform_step(rho, *chart, to);
    CHECK(t3.values() == t1.values());
  }
  SUBCASE("mismatched graph and chart escape") {
    auto wrong = TorusGraph::constant(1, {16}, std::vector<double>{1.0});
    CHECK_THROWS_AS(graph_transform_step(wrong, *chart, to), Error);
    auto negative = TorusGraph::constant(1, {16, 16}, std::vector<double>{-0.5});
    try {
      graph_transform_step(negative, *chart, to);
      FAIL("expected chart escape");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ChartEscape);
    }
  }
}

TEST_CASE("solve_graph") {
  SUBCASE("unperturbed cylinder from an offset start") {
    models::PoincareParams p;
    p.gamma = 0.0;
    auto chart = models::poincare_polar(p);
    auto rho0 = TorusGraph::constant(1, {8, 8, 8}, std::vector<double>{1.3 * p.a});
    SolveOptions so;
    so.window = 20.0;
    so.tol = 1e-8;
    auto sol = solve_graph(rho0, *chart, so);
    CHECK(sol.diagnostics.converged);
    CHECK(sol.diagnostics.deltas.size() <= 5);
    CHECK(sup_offset(sol.graph, p.a) <= 1e-8);
  }
  SUBCASE("below threshold: converges, fixed point and small residual") {
    auto chart = models::poincare_polar(single_tone(0.3));
    SolveOptions so;
    so.tol = 1e-7;
    auto rho0 = reference_graph(*chart, 32);
    auto sol = solve_graph(rho0, *chart, so);
    CHECK(sol.diagnostics.converged);
    CHECK(sol.diagnostics.contraction_factor < 1.0);
    CHECK(sol.diagnostics.window == doctest::Approx(20.0).epsilon(1e-6));
    TransformOptions to;
    to.window = sol.diagnostics.window;
    to.integrator_tol = 1e-9;
    auto again = graph_transform_step(sol.graph, *chart, to);
    CHECK(again.sup_distance(sol.graph) <= 2 * so.tol);
    // The residual is limited by the interpolation error of the grid.
    const double res32 = invariance_residual(sol.graph, *chart);
    auto fine = solve_graph(reference_graph(*chart, 64), *chart, so);
    const double res64 = invariance_residual(fine.graph, *chart);
    MESSAGE("residual 32: " << res32 << "  64: " << res64);
    CHECK(res64 < res32);
    CHECK(res64 < 1e-3);
  }
  SUBCASE("far above threshold the iteration reports no graph") {
    auto chart = models::poincare_polar(single_tone(5.0));
    SolveOptions so;
    so.tol = 1e-7;
    so.max_iter = 30;
    bool failed = false;
    try {
      solve_graph(reference_graph(*chart, 16), *chart, so);
    } catch (const NoGraphError& e) {
      failed = true;
      CHECK(e.code() == ErrorCode::NoInvariantGraph);
      CHECK_FALSE(e.last().diagnostics.deltas.empty());
    } catch (const Error& e) {
      failed = true;
      CHECK(e.code() == ErrorCode::ChartEscape);
    }
    CHECK(failed);
  }
  SUBCASE("iteration budget exhausted") {
    auto chart = models::poincare_polar(single_tone(0.3));
    SolveOptions so;
    so.tol = 1e-14;
    so.max_iter = 2;
    try {
      solve_graph(reference_graph(*chart, 16), *chart, so);
      FAIL("expected no-graph");
    } catch (const NoGraphError& e) {
      CHECK(e.last().diagnostics.deltas.size() == 2);
      CHECK_FALSE(e.last().diagnostics.converged);
      CHECK(e.last().graph.node_count() == 256);
    }
  }
}

TEST_CASE("pullback graph") {
  SUBCASE("unperturbed: constant a") {
    models::PoincareParams p;
    p.gamma = 0.0;
    p.forcing = models::Forcing::SingleTone;
    auto chart = models::poincare_polar(p);
    auto res = pullback_graph(*chart, {16, 16});
    CHECK(res.converged);
    CHECK(sup_offset(res.graph, p.a) <= 1e-6);
  }
  SUBCASE("window 0 returns the seeds, unconverged") {
    auto chart = models::poincare_polar(single_tone(0.3));
    PullbackOptions po;
    po.window = 0.0;
    auto res = pullback_graph(*chart, {16, 16}, po);
    CHECK_FALSE(res.converged);
    CHECK(sup_offset(res.graph, 1.0) == 0.0);
  }
  SUBCASE("agrees with solve_graph at gamma 0.3") {
    auto chart = models::poincare_polar(single_tone(0.3));
    SolveOptions so;
    so.tol = 1e-8;
    auto sol = solve_graph(reference_graph(*chart, 32), *chart, so);
    auto res = pullback_graph(*chart, {32, 32});
    CHECK(res.converged);
    const double err = sol.graph.interpolation_error_estimate();
    const double gap = res.graph.sup_distance(sol.graph);
    MESSAGE("pullback gap " << gap << " grid error " << err);
    CHECK(gap <= std::max(1e-4, 2 * err));
  }
  SUBCASE("phase collapse leaves most nodes empty") {
    auto chart = std::make_shared<const Collapsing>();
    PullbackOptions po;
    po.window = 30.0;
    try {
      pullback_graph(*chart, {32}, po);
      FAIL("expected insufficient sampling");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InsufficientSampling);
    }
  }
}

TEST_CASE("slope field") {
  SUBCASE("constant graph has zero slope") {
    models::PoincareParams p;
    p.gamma = 0.0;
    p.forcing = models::Forcing::SingleTone;
    auto chart = models::poincare_polar(p);
    auto sigma = slope_field(reference_graph(*chart, 16), *chart);
    CHECK(sup_offset(sigma, 0.0) <= 1e-8);
  }
  SUBCASE("linear system against the closed form") {
    const double lambda = 1.5, c = 0.5;
    auto chart = models::linear_graph({1.0, lambda, c});
    LinearOracle lin(1.0, lambda, c);
    auto rho = TorusGraph::from_function(1, {64}, 1, [&](std::span<const double> a, std::span<double> out) {
      out[0] = lin.rho(a[0]);
    });
    auto sigma = slope_field(rho, *chart);
    double worst = 0;
    for (std::size_t n = 0; n < sigma.node_count(); ++n) {
      const double th = 2 * kPi * static_cast<double>(n) / 64.0;
      worst = std::max(worst, std::abs(sigma.value(n)[0] - lin.slope(th)));
    }
    CHECK(worst < 1e-6);
    // The graph itself is the transform's fixed point.
    auto sol = solve_graph(reference_graph(*chart, 64), *chart);
    double gerr = 0;
    for (std::size_t n = 0; n < 64; ++n)
      gerr = std::max(gerr, std::abs(sol.graph.value(n)[0] - lin.rho(2 * kPi * n / 64.0)));
    CHECK(gerr < 1e-7);
  }
  SUBCASE("forced Poincare against finite differences") {
    auto chart = models::poincare_polar(single_tone(0.2));
    SolveOptions so;
    so.tol = 1e-9;
    auto sol = solve_graph(reference_graph(*chart, 32), *chart, so);
    auto sigma = slope_field(sol.graph, *chart);
    auto fd = finite_difference_slope(sol.graph, 1);
    const double gap = sigma.sup_distance(fd);
    MESSAGE("slope gap " << gap);
    CHECK(gap <= std::max(5e-3, 3 * sol.graph.interpolation_error_estimate()));
  }
}

TEST_CASE("NH rates") {
  SUBCASE("unperturbed cylinder") {
    models::PoincareParams p;
    p.gamma = 0.0;
    auto chart = models::poincare_polar(p);
    auto r = nh_rates(reference_graph(*chart, 8), *chart);
    CHECK(r.samples == 8);
    CHECK(std::abs(r.lambda_N - p.alpha * p.a) <= 0.05);
    CHECK(std::abs(r.lambda_T_max) <= 0.02);
    CHECK(r.ratio > 1.0);
    p.alpha = 2.0;
    auto chart2 = models::poincare_polar(p);
    auto r2 = nh_rates(reference_graph(*chart2, 8), *chart2);
    CHECK(r2.lambda_N / r.lambda_N == doctest::Approx(2.0).epsilon(0.1));
  }
  SUBCASE("instantaneous tangential maximum") {
    auto params = single_tone(0.4);
    auto chart = models::poincare_polar(params);
    SolveOptions so;
    so.tol = 1e-7;
    auto sol = solve_graph(reference_graph(*chart, 32), *chart, so);
    auto r = nh_rates(sol.graph, *chart);
    // Bound from the leading term -(gamma/r) f sin(theta) evaluated on the graph nodes.
    double bound = 0;
    std::vector<double> ang(2);
    for (std::size_t n = 0; n < sol.graph.node_count(); ++n) {
      sol.graph.node_angles(n, ang);
      const double f = std::sin(ang[1]);
      bound = std::max(bound, params.gamma / sol.graph.value(n)[0] * std::abs(f * std::sin(ang[0])));
    }
    MESSAGE("instantaneous " << r.instantaneous_tangential_max << " bound " << bound);
    CHECK(r.instantaneous_tangential_max == doctest::Approx(bound).epsilon(0.25));
    CHECK(r.ratio > 1.0);
  }
}

TEST_CASE("invariance residual") {
  models::PoincareParams p;
  p.gamma = 0.0;
  auto chart = models::poincare_polar(p);
  CHECK(invariance_residual(reference_graph(*chart, 8), *chart) <= 1e-9);
  auto bumped = TorusGraph::from_function(1, {32, 8, 8}, 1, [&](std::span<const double> a, std::span<double> out) {
    out[0] = p.a + 0.05 * std::sin(a[0]);
  });
  // Mismatch at theta = 0 is omega * 0.05.
  CHECK(invariance_residual(bumped, *chart) >= 0.01);
}
