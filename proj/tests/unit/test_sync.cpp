#include <doctest.h>

#include <cmath>
#include <numbers>

#include "nhsync/error.hpp"
#include "nhsync/invariant_graph.hpp"
#include "nhsync/models.hpp"
#include "nhsync/sync.hpp"

using namespace nhsync;
constexpr double kPi = std::numbers::pi;

namespace {

PhaseSeries linear_series(std::size_t n, double dt, std::function<double(double)> f) {
  std::vector<double> t(n), ph(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = dt * static_cast<double>(i);
    ph[i] = f(t[i]);
  }
  return PhaseSeries(std::move(t), 1, std::move(ph));
}

PhaseSeries adler_series(double delta, double k, double horizon) {
  auto sys = models::adler({delta, k, 1});
  auto traj = ode::integrate(sys, std::vector<double>{0.0}, 0.0, horizon, 1e-10);
  return sample_phases(traj, 0.0, 0.05, 1, [](double, std::span<const double> x, std::span<double> out) {
    out[0] = x[0];
  });
}

// Periodic trapezoid quadrature of the Adler slip period.
double adler_period_quadrature(double delta, double k, int n = 100000) {
  double s = 0;
  const double h = 2 * kPi / n;
  for (int i = 0; i < n; ++i) s += 1.0 / (delta - k * std::sin(i * h));
  return s * h;
}

}  // namespace

TEST_CASE("oracles") {
  const double closed = 2 * kPi / std::sqrt(0.5 * 0.5 - 0.3 * 0.3);
  CHECK(std::abs(adler_period_quadrature(0.5, 0.3) - closed) / closed < 1e-10);
  // Bounded solution of x' = -x + sin t.
  auto xs = [](double t) { return 0.5 * (std::sin(t) - std::cos(t)); };
  const double h = 1e-5, t = 0.8;
  CHECK(std::abs((xs(t + h) - xs(t - h)) / (2 * h) - (-xs(t) + std::sin(t))) < 1e-9);
  // Stable roots of delta - k sin(2 theta) = 0: two per circle.
  const double d = 0.2, k = 0.5;
  int stable = 0;
  for (int i = 0; i < 4000; ++i) {
    const double a = 2 * kPi * i / 4000.0, b = 2 * kPi * (i + 1) / 4000.0;
    const double fa = d - k * std::sin(2 * a), fb = d - k * std::sin(2 * b);
    if (fa > 0 && fb <= 0) ++stable;
  }
  CHECK(stable == 2);
}

TEST_CASE("unwrap and phase series") {
  std::vector<double> w{0.1, 3.0, -3.0, -0.1, 3.1};
  auto u = unwrap(w);
  for (std::size_t i = 1; i < u.size(); ++i) CHECK(std::abs(u[i] - u[i - 1]) <= kPi);
  CHECK(u[2] == doctest::Approx(2 * kPi - 3.0));
  auto ps = PhaseSeries::from_wrapped({0, 1, 2}, 2, {0.0, 3.0, 1.0, -3.0, 2.0, 0.0});
  CHECK(ps.phase(1, 1) == doctest::Approx(2 * kPi - 3.0));
  CHECK_THROWS_AS(PhaseSeries({0, 0}, 1, {0, 1}), Error);
  CHECK_THROWS_AS(PhaseSeries({0, 1}, 1, {0}), Error);
}

TEST_CASE("rotation number") {
  SUBCASE("linear phase") {
    auto ps = linear_series(5000, 0.1, [](double t) { return t + 0.3; });
    auto r = rotation_number(ps, 0);
    CHECK(std::abs(r.rho - 1 / (2 * kPi)) < 1e-6);
    CHECK(r.error < 1e-9);
  }
  SUBCASE("Adler locked and drifting") {
    auto locked = rotation_number(adler_series(0.3, 0.5, 800), 0);
    CHECK(std::abs(locked.rho) < 1e-4);
    auto drift = rotation_number(adler_series(0.5, 0.3, 1000), 0);
    const double oracle = 1.0 / adler_period_quadrature(0.5, 0.3);
    CHECK(std::abs(drift.rho - oracle) < 1e-3);
    CHECK(std::abs(drift.rho - 0.4 / (2 * kPi)) < 1e-3);
  }
  SUBCASE("bounded wiggle does not move the estimate") {
    auto a = rotation_number(linear_series(8000, 0.05, [](double t) { return 1.3 * t; }), 0);
    auto b = rotation_number(
        linear_series(8000, 0.05, [](double t) { return 1.3 * t + 0.4 * std::sin(2.1 * t); }), 0);
    CHECK(std::abs(a.rho - b.rho) <= std::max(b.error, 1e-4));
  }
  SUBCASE("too short") {
    CHECK_THROWS_AS(rotation_number(linear_series(10, 0.1, [](double t) { return t; }), 0), Error);
    CHECK_THROWS_AS(rotation_number(linear_series(100, 0.1, [](double t) { return t; }), 0, 0.5), Error);
  }
}

TEST_CASE("m:n locking") {
  const double dt = 0.05;
  const std::size_t n = 8000;
  auto t1 = linear_series(n, dt, [](double t) { return t; });
  SUBCASE("identical series") {
    auto l = detect_mn_locking(t1, 0, t1, 0);
    REQUIRE(l);
    CHECK(l->m == 1);
    CHECK(l->n == 1);
    CHECK(l->residual == 0.0);
  }
  SUBCASE("constructed 3:2") {
    auto t2 = linear_series(n, dt, [](double t) { return 2.0 / 3.0 * t + 0.1 * std::sin(t); });
    auto l = detect_mn_locking(t1, 0, t2, 0);
    REQUIRE(l);
    CHECK(l->m == 3);
    CHECK(l->n == 2);
    CHECK(l->residual <= 0.3 + 1e-12);
    auto s = detect_mn_locking(t2, 0, t1, 0);
    REQUIRE(s);
    CHECK(s->m == 2);
    CHECK(s->n == 3);
    CHECK(s->residual == doctest::Approx(l->residual));
  }
  SUBCASE("golden mean is unlocked") {
    const double phi = (1 + std::sqrt(5.0)) / 2;
    auto t2 = linear_series(n, dt, [phi](double t) { return phi * t; });
    CHECK_FALSE(detect_mn_locking(t1, 0, t2, 0));
  }
  SUBCASE("argument checks") {
    LockingOptions o;
    o.m_max = 13;
    CHECK_THROWS_AS(detect_mn_locking(t1, 0, t1, 0, o), Error);
    auto shorter = linear_series(n - 1, dt, [](double t) { return t; });
    CHECK_THROWS_AS(detect_mn_locking(t1, 0, shorter, 0), Error);
  }
}

TEST_CASE("phase collapse") {
  SUBCASE("Adler inside the tongue collapses to one cluster") {
    auto chart = models::adler_phase({0.2, 0.5, 1});
    auto r = phase_collapse(*chart, nullptr, {});
    CHECK(r.cluster_count == 1);
    REQUIRE(r.cluster_phases.size() == 1);
    CHECK(std::abs(std::remainder(r.cluster_phases[0] - std::asin(0.4), 2 * kPi)) < 1e-4);
  }
  SUBCASE("bistable model gives two clusters at any ring rotation") {
    auto chart = models::adler_phase({0.2, 0.5, 2});
    for (double off : {0.0, 0.37, 2.1}) {
      CollapseOptions o;
      o.offset = off;
      auto r = phase_collapse(*chart, nullptr, {}, o);
      CHECK(r.cluster_count == 2);
    }
  }
  SUBCASE("unforced Poincare ring rotates rigidly") {
    models::PoincareParams p;
    p.gamma = 0.0;
    p.forcing = models::Forcing::SingleTone;
    auto chart = models::poincare_polar(p);
    auto graph = reference_graph(*chart, 16);
    const std::vector<double> phi0{0.0};
    CollapseOptions o;
    o.horizon = 50.0;
    auto r = phase_collapse(*chart, &graph, phi0, o);
    CHECK(r.cluster_count == 0);
    for (std::size_t i = 1; i < r.final_phases.size(); ++i) {
      const double gap = std::remainder(r.final_phases[i] - r.final_phases[i - 1], 2 * kPi);
      CHECK(std::abs(gap - 2 * kPi / 64) < 1e-7);
    }
    CHECK_THROWS_AS(phase_collapse(*chart, nullptr, phi0, o), Error);
    o.ring = 16;
    CHECK_THROWS_AS(phase_collapse(*chart, &graph, phi0, o), Error);
  }
}

TEST_CASE("Arnold tongue scan") {
  TongueScanOptions o;
  o.n_delta = 21;
  o.n_k = 6;
  o.horizon = 400.0;
  o.threads = 2;
  auto grid = arnold_tongue_scan(o);
  const double cell = (o.delta_max - o.delta_min) / (o.n_delta - 1);

  SUBCASE("boundary |delta| = k within two cells and interval shape") {
    for (std::size_t ik = 0; ik < o.n_k; ++ik) {
      double lo = HUGE_VAL, hi = -HUGE_VAL;
      std::size_t count = 0;
      for (std::size_t id = 0; id < o.n_delta; ++id) {
        const auto& pt = grid.at(id, ik);
        CHECK(pt.status == "ok");
        if (pt.locking) {
          lo = std::min(lo, pt.delta);
          hi = std::max(hi, pt.delta);
          ++count;
        }
      }
      const double k = grid.at(0, ik).k;
      if (ik == 0) {
        // Decoupled: only the exact resonance can look locked.
        CHECK(count <= 1);
        continue;
      }
      REQUIRE(count > 0);
      CHECK(std::abs(hi - k) <= 2 * cell);
      CHECK(std::abs(lo + k) <= 2 * cell);
      CHECK(static_cast<double>(count) >= (hi - lo) / cell + 1 - 2);
    }
  }
  SUBCASE("width grows with k") {
    std::size_t prev = 0;
    for (std::size_t ik = 0; ik < o.n_k; ++ik) {
      std::size_t count = 0;
      for (std::size_t id = 0; id < o.n_delta; ++id) count += grid.at(id, ik).locking ? 1 : 0;
      CHECK(count >= prev);
      prev = count;
    }
  }
  SUBCASE("rotation number outside the tongue") {
    for (const auto& pt : grid.points) {
      if (std::abs(pt.delta) > pt.k + 2 * cell) {
        const double oracle = std::copysign(std::sqrt(pt.delta * pt.delta - pt.k * pt.k), pt.delta) / (2 * kPi);
        CHECK(std::abs(pt.rotation_relative - oracle) < 1e-3);
      }
    }
  }
  SUBCASE("CSV and determinism") {
    auto csv = grid.to_csv();
    CHECK(csv.rfind("delta,k,m,n,residual,rotation_osc,rotation_forcing,rotation_relative,status\n", 0) == 0);
    o.threads = 1;
    CHECK(arnold_tongue_scan(o).to_csv() == csv);
  }
  SUBCASE("forced Poincare family") {
    TongueScanOptions f;
    f.family = TongueFamily::ForcedPoincare;
    f.horizon = 300.0;
    auto locked = tongue_point(f, 0.02, 0.3);
    CHECK(locked.status == "ok");
    REQUIRE(locked.locking);
    CHECK(locked.locking->m == 1);
    auto free = tongue_point(f, 0.5, 0.0);
    CHECK_FALSE(free.locking);
    CHECK(free.rotation_osc == doctest::Approx(1.5 / (2 * kPi)).epsilon(1e-4));
  }
  SUBCASE("bad resolution") {
    o.n_delta = 300;
    CHECK_THROWS_AS(arnold_tongue_scan(o), Error);
  }
}

TEST_CASE("attracting trajectory") {
  SUBCASE("x' = -x + sin t converges to the bounded solution") {
    ode::SystemSpec sys(1, [](double t, std::span<const double> x, std::span<double> dx) {
      dx[0] = -x[0] + std::sin(t);
    });
    auto r = attracting_trajectory(sys, {{3.0}, {-2.0}, {0.5}}, 0.0, 40.0);
    CHECK(r.verdict == AttractVerdict::Attracting);
    CHECK(r.exponent == doctest::Approx(-1.0).epsilon(1e-4));
    REQUIRE(r.trajectory);
    const double tf = r.trajectory->back_time();
    CHECK(std::abs(r.trajectory->back_state()[0] - 0.5 * (std::sin(tf) - std::cos(tf))) < 1e-6);
  }
  SUBCASE("x' = x is not uniformly attracting") {
    ode::SystemSpec sys(1, [](double, std::span<const double> x, std::span<double> dx) { dx[0] = x[0]; });
    auto r = attracting_trajectory(sys, {{1e-8}, {-1e-8}}, 0.0, 10.0);
    CHECK(r.verdict == AttractVerdict::NotUniformlyAttracting);
    CHECK_FALSE(r.trajectory);
  }
  SUBCASE("time-dependent rate at least 0.5") {
    ode::SystemSpec sys(1, [](double t, std::span<const double> x, std::span<double> dx) {
      dx[0] = -(0.75 + 0.25 * std::sin(t)) * x[0];
    });
    auto r = attracting_trajectory(sys, {{1.0}, {-1.0}}, 0.0, 60.0);
    CHECK(r.verdict == AttractVerdict::Attracting);
    CHECK(r.exponent <= -0.5);
    for (double e : r.window_exponents) CHECK(e <= -0.5);
  }
  SUBCASE("two attractors give no common limit") {
    ode::SystemSpec sys(1, [](double, std::span<const double> x, std::span<double> dx) {
      dx[0] = x[0] - x[0] * x[0] * x[0];
    });
    auto r = attracting_trajectory(sys, {{0.5}, {-0.5}}, 0.0, 30.0, {5.0, 1e-2, 1e-6, 1e-10});
    CHECK(r.verdict != AttractVerdict::Attracting);
  }
}
