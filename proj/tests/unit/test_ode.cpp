#include <doctest.h>

#include <cmath>
#include <numbers>

#include "nhsync/error.hpp"
#include "nhsync/models.hpp"
#include "nhsync/ode.hpp"

using namespace nhsync;
using ode::SystemSpec;
using ode::Vec;

namespace {

SystemSpec linear(std::vector<double> A) {
  const auto n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(A.size()))));
  return SystemSpec(
      n,
      [A, n](double, std::span<const double> x, std::span<double> dx) {
        for (std::size_t i = 0; i < n; ++i) {
          dx[i] = 0;
          for (std::size_t j = 0; j < n; ++j) dx[i] += A[i * n + j] * x[j];
        }
      },
      [A](double, std::span<const double>, std::span<double> J) {
        std::copy(A.begin(), A.end(), J.begin());
      });
}

}  // namespace

TEST_CASE("constant field keeps the state exactly") {
  SystemSpec zero(1, [](double, std::span<const double>, std::span<double> dx) { dx[0] = 0; });
  const Vec x0{1.0};
  auto traj = ode::integrate(zero, x0, 0.0, 10.0, 1e-8);
  CHECK(traj.back_time() == 10.0);
  CHECK(traj.back_state()[0] == 1.0);
}

TEST_CASE("exponential growth matches e") {
  auto sys = linear({1.0});
  auto traj = ode::integrate(sys, Vec{1.0}, 0.0, 1.0, 1e-10);
  CHECK(std::abs(traj.back_state()[0] - std::numbers::e) < 1e-8);
}

TEST_CASE("unforced polar Poincare stays on r = a") {
  models::PoincareParams p;
  p.gamma = 0.0;
  p.a = 1.3;
  auto chart = models::poincare_polar(p);
  auto sys = chart->time_system();
  auto traj = ode::integrate(sys, Vec{0.2, p.a}, 0.0, 50.0, 1e-10);
  double worst = 0;
  for (std::size_t i = 0; i < traj.size(); ++i)
    worst = std::max(worst, std::abs(traj.state(i)[1] - p.a));
  CHECK(worst <= 1e-9);
}

TEST_CASE("trajectory interpolation is exact at stored times and handles backward runs") {
  SystemSpec rot(2, [](double, std::span<const double> x, std::span<double> dx) {
    dx[0] = -x[1];
    dx[1] = x[0];
  });
  auto traj = ode::integrate(rot, Vec{1.0, 0.0}, 0.0, 3.0, 1e-9);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    auto v = traj.at(traj.time(i));
    CHECK(v[0] == traj.state(i)[0]);
    CHECK(v[1] == traj.state(i)[1]);
  }
  auto back = ode::integrate(rot, Vec{1.0, 0.0}, 0.0, -3.0, 1e-9);
  CHECK(back.front_time() == -3.0);
  CHECK(back.back_time() == 0.0);
  CHECK(std::abs(back.front_state()[0] - std::cos(3.0)) < 1e-7);
  CHECK(std::abs(back.front_state()[1] + std::sin(3.0)) < 1e-7);
}

TEST_CASE("time reversal returns to the initial state") {
  // Pendulum, non-stiff.
  SystemSpec pend(2, [](double, std::span<const double> x, std::span<double> dx) {
    dx[0] = x[1];
    dx[1] = -std::sin(x[0]);
  });
  const double tol = 1e-10;
  const Vec x0{0.8, 0.1};
  ode::IntegrateOptions opts;
  opts.tol = tol;
  auto fwd = ode::propagate(pend, x0, 0.0, 1.0, opts);
  auto back = ode::propagate(pend, fwd, 1.0, 0.0, opts);
  const double norm = std::hypot(x0[0], x0[1]);
  CHECK(std::hypot(back[0] - x0[0], back[1] - x0[1]) <= 10 * tol * norm);
}

TEST_CASE("dense output between steps tracks the solution") {
  SystemSpec rot(2, [](double, std::span<const double> x, std::span<double> dx) {
    dx[0] = -x[1];
    dx[1] = x[0];
  });
  const double tol = 1e-10;
  auto traj = ode::integrate(rot, Vec{1.0, 0.0}, 0.0, 10.0, tol);
  double worst_state = 0, worst_residual = 0;
  Vec d(2);
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    const double tm = 0.5 * (traj.time(i) + traj.time(i + 1));
    auto x = traj.at(tm);
    worst_state = std::max(worst_state, std::hypot(x[0] - std::cos(tm), x[1] - std::sin(tm)));
    traj.interpolate_derivative(tm, d);
    auto f = rot.eval(tm, x);
    worst_residual = std::max(worst_residual, std::hypot(d[0] - f[0], d[1] - f[1]));
  }
  // Cubic Hermite: state error O(h^4), residual O(h^3) with h ~ tol^(1/5).
  CHECK(worst_state < 1e3 * tol);
  CHECK(worst_residual < std::pow(tol, 0.6) * 10);
}

TEST_CASE("blow-up reports integration failure with the last good time") {
  SystemSpec blow(1, [](double, std::span<const double> x, std::span<double> dx) {
    dx[0] = x[0] * x[0];
  });
  try {
    ode::integrate(blow, Vec{1.0}, 0.0, 2.0, 1e-8);
    FAIL("expected failure");
  } catch (const IntegrationError& e) {
    CHECK((e.code() == ErrorCode::IntegrationFailure || e.code() == ErrorCode::NaNFailure));
    CHECK(e.last_good_time() < 1.0 + 1e-6);
    CHECK(e.last_good_time() > 0.99);
  }
}

TEST_CASE("non-finite field output is a NaN failure") {
  SystemSpec bad(1, [](double t, std::span<const double>, std::span<double> dx) {
    dx[0] = t > 0.5 ? std::nan("") : 1.0;
  });
  CHECK_THROWS_AS(ode::integrate(bad, Vec{0.0}, 0.0, 1.0, 1e-8), IntegrationError);
  try {
    ode::integrate(bad, Vec{0.0}, 0.0, 1.0, 1e-8);
  } catch (const IntegrationError& e) {
    CHECK(e.code() == ErrorCode::NaNFailure);
  }
}

TEST_CASE("tolerance outside (1e-14, 1e-2) is rejected") {
  auto sys = linear({-1.0});
  CHECK_THROWS_AS(ode::integrate(sys, Vec{1.0}, 0.0, 1.0, 1.0), Error);
  CHECK_THROWS_AS(ode::integrate(sys, Vec{1.0}, 0.0, 1.0, 1e-15), Error);
}

TEST_CASE("tangent propagation: linear diagonal system") {
  auto sys = linear({-1.0, 0.0, 0.0, -2.0});
  auto ex = ode::lyapunov_exponents(sys, Vec{1.0, 1.0}, 2, 0.0, 2000.0, 1.0);
  CHECK(std::abs(ex[0] + 1.0) < 1e-3);
  CHECK(std::abs(ex[1] + 2.0) < 1e-3);
}

TEST_CASE("tangent propagation: rotation is an isometry") {
  auto sys = linear({0.0, -1.0, 1.0, 0.0});
  auto ex = ode::lyapunov_exponents(sys, Vec{1.0, 0.0}, 2, 0.0, 100.0, 0.7);
  CHECK(std::abs(ex[0]) <= 1e-3);
  CHECK(std::abs(ex[1]) <= 1e-3);
}

TEST_CASE("tangent propagation: unforced Poincare exponents (0, -alpha a)") {
  models::PoincareParams p;
  p.gamma = 0.0;
  auto sys = models::poincare_cartesian(p);
  auto ex = ode::lyapunov_exponents(sys, Vec{1.0, 0.0}, 2, 0.0, 300.0, 1.0);
  CHECK(std::abs(ex[0]) < 2e-2);
  CHECK(std::abs(ex[1] + p.alpha * p.a) < 2e-2);
}

TEST_CASE("tangent propagation records the base trajectory and rejects bad frames") {
  auto sys = linear({-1.0, 0.0, 0.0, -2.0});
  const Vec frame{1.0, 0.0, 0.0, 1.0};
  auto res = ode::integrate_with_tangents(sys, Vec{1.0, 1.0}, frame, 2, 0.0, 5.0, 0.5);
  CHECK(res.trajectory.back_time() == doctest::Approx(5.0));
  CHECK(std::abs(res.trajectory.back_state()[0] - std::exp(-5.0)) < 1e-7);
  const Vec skew{1.0, 0.0, 1.0, 1.0};
  CHECK_THROWS_AS(ode::integrate_with_tangents(sys, Vec{1.0, 1.0}, skew, 2, 0.0, 5.0, 0.5), Error);
  CHECK_THROWS_AS(ode::integrate_with_tangents(sys, Vec{1.0, 1.0}, frame, 2, 0.0, 5.0, 0.0), Error);
}

TEST_CASE("jacobian_check") {
  SUBCASE("constant matrix") {
    auto sys = linear({0.3, -1.2, 2.0, 0.7});
    CHECK(ode::jacobian_check(sys, Vec{0.4, -0.9}, 0.0, 1e-5) <= 1e-9);
  }
  SUBCASE("forced Poincare, Cartesian") {
    models::PoincareParams p;
    p.gamma = 0.3;
    auto sys = models::poincare_cartesian(p);
    CHECK(ode::jacobian_check(sys, Vec{1.0, 0.2}, 0.3, 1e-5) <= 1e-6);
  }
  SUBCASE("class I neuron at theta = pi/3") {
    auto sys = models::class1_neuron();
    const Vec x{std::numbers::pi / 3, 0.5};
    Vec fd(4);
    sys.fd_jacobian(0.0, x, fd, 1e-5);
    CHECK(std::abs(std::sin(x[0]) - fd[0]) <= 1e-7);
    CHECK(ode::jacobian_check(sys, x, 0.0, 1e-5) <= 1e-7);
  }
  SUBCASE("bad step") {
    auto sys = linear({1.0});
    CHECK_THROWS_AS(ode::jacobian_check(sys, Vec{1.0}, 0.0, 1e-2), Error);
  }
}

TEST_CASE("finite-difference fallback agrees with the analytic Jacobian") {
  models::RosslerParams rp;
  auto analytic = models::rossler(rp);
  SystemSpec no_jac(3, [analytic](double t, std::span<const double> x, std::span<double> dx) {
    analytic.eval(t, x, dx);
  });
  CHECK_FALSE(no_jac.has_analytic_jacobian());
  const Vec x{1.0, -2.0, 0.5};
  auto a = analytic.jacobian(0.0, x);
  auto f = no_jac.jacobian(0.0, x);
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(a[i] - f[i]) < 1e-7);
}
