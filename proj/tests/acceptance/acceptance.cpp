// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <vector>

#include "nhsync/chaos.hpp"
#include "nhsync/error.hpp"
#include "nhsync/invariant_graph.hpp"
#include "nhsync/models.hpp"
#include "nhsync/network.hpp"
#include "nhsync/ode.hpp"
#include "nhsync/sync.hpp"

using namespace nhsync;
namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::size_t worker_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

double sup_offset(const TorusGraph& g, double value) {
  double worst = 0.0;
  for (double v : g.values()) worst = std::max(worst, std::abs(v - value));
  return worst;
}

models::PoincareParams poincare(double gamma, models::Forcing forcing = models::Forcing::TwoTone) {
  models::PoincareParams p;
  p.gamma = gamma;
  p.forcing = forcing;
  return p;
}

// 1. Unperturbed cylinder.
void ac1(Outcome& o) {
  double worst_time = 0.0;
  for (double alpha : {0.5, 1.0, 2.0}) {
    for (double a : {0.5, 1.0}) {
      const auto start = std::chrono::steady_clock::now();
      models::PoincareParams p = poincare(0.0);
      p.alpha = alpha;
      p.a = a;
      auto chart = models::poincare_polar(p);
      SolveOptions so;
      so.threads = worker_threads();
      auto sol = solve_graph(reference_graph(*chart, 16), *chart, so);
      NHRateOptions ro;
      ro.threads = worker_threads();
      auto r = nh_rates(sol.graph, *chart, ro);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      worst_time = std::max(worst_time, secs);
      const double err = sup_offset(sol.graph, a);
      std::ostringstream tag;
      tag << "alpha=" << alpha << " a=" << a;
      o.check(err <= 1e-6, tag.str() + " sup error " + std::to_string(err));
      o.check(std::abs(r.lambda_N - alpha * a) <= 0.05 * alpha * a,
              tag.str() + " lambda_N " + std::to_string(r.lambda_N));
      o.check(std::abs(r.lambda_T_max) <= 0.02, tag.str() + " lambda_T " + std::to_string(r.lambda_T_max));
      o.check(secs <= 10.0, tag.str() + " runtime " + std::to_string(secs));
    }
  }
  o.detail << "6 cases, slowest " << worst_time << " s";
}

// 2. Persistence threshold.
void ac2(Outcome& o) {
  for (double alpha : {0.5, 1.0, 2.0, 3.7})
    for (double a : {0.5, 1.0, 1.3})
      o.check(persistence_threshold(alpha, a) == alpha * a * a / 2.0, "threshold formula");

  for (double gamma : {0.1, 0.2, 0.3}) {
    auto chart = models::poincare_polar(poincare(gamma));
    SolveOptions so;
    so.threads = worker_threads();
    try {
      auto sol = solve_graph(reference_graph(*chart, 16), *chart, so);
      NHRateOptions ro;
      ro.threads = worker_threads();
      auto r = nh_rates(sol.graph, *chart, ro);
      o.detail << "gamma=" << gamma << " converged, ratio " << r.ratio << "; ";
      o.check(r.ratio > 1.0, "NH ratio at gamma " + std::to_string(gamma));
    } catch (const Error& e) {
      o.check(false, "gamma " + std::to_string(gamma) + " did not converge: " + e.what());
    }
  }

  // gamma = 0.8: either no graph, or a positive largest Lyapunov exponent.
  bool converged = false;
  {
    auto chart = models::poincare_polar(poincare(0.8));
    SolveOptions so;
    so.threads = worker_threads();
    try {
      auto sol = solve_graph(reference_graph(*chart, 16), *chart, so);
      converged = sol.diagnostics.converged;
    } catch (const Error& e) {
      converged = false;
      o.detail << "gamma=0.8 no graph (" << error_code_name(e.code()) << "); ";
    }
  }
  const auto sys = models::poincare_cartesian(poincare(0.8));
  ode::IntegrateOptions io;
  io.tol = 1e-10;
  const std::vector<double> x0{1.0, 0.0};
  const auto x = ode::propagate(sys, x0, 0.0, 200.0, io);
  const double lam = ode::lyapunov_exponents(sys, x, 1, 200.0, 2200.0, 1.0)[0];
  o.detail << "gamma=0.8 graph " << (converged ? "converged" : "failed") << ", lambda1 " << lam;
  o.check(!converged || lam > 0.01, "gamma 0.8: invariant graph found and lambda1 <= 0.01");
}

// 3. Pullback and graph transform agree.
void ac3(Outcome& o) {
  auto chart = models::poincare_polar(poincare(0.3, models::Forcing::SingleTone));
  SolveOptions so;
  so.threads = worker_threads();
  auto sol = solve_graph(reference_graph(*chart, 32), *chart, so);
  PullbackOptions po;
  po.threads = worker_threads();
  auto pb = pullback_graph(*chart, {32, 32}, po);
  const double err = sol.graph.interpolation_error_estimate();
  const double gap = pb.graph.sup_distance(sol.graph);
  const double bound = std::max(1e-4, 2 * err);
  o.detail << "sup gap " << gap << " bound " << bound;
  o.check(pb.converged, "pullback converged");
  o.check(gap <= bound, "gap within bound");
}

// 4. Slope field against finite differences.
void ac4(Outcome& o) {
  auto chart = models::poincare_polar(poincare(0.2, models::Forcing::SingleTone));
  SolveOptions so;
  so.tol = 1e-9;
  so.threads = worker_threads();
  auto sol = solve_graph(reference_graph(*chart, 32), *chart, so);
  SlopeOptions sl;
  sl.threads = worker_threads();
  auto sigma = slope_field(sol.graph, *chart, sl);
  auto fd = finite_difference_slope(sol.graph, 1);
  const double gap = sigma.sup_distance(fd);
  const double bound = std::max(5e-3, 3 * sol.graph.interpolation_error_estimate());
  o.detail << "sup gap " << gap << " bound " << bound;
  o.check(gap <= bound, "gap within bound");
}

// Independent oracle: periodic trapezoid rule for the integral of 1 / (mu + 1 - cos).
double quadrature_period(double mu) {
  const std::size_t n = 200000;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += 1.0 / (mu + 1.0 - std::cos(2 * kPi * static_cast<double>(i) / n));
  return 2 * kPi * s / static_cast<double>(n);
}

// Time for theta to advance by 2 pi from 0.
double integrated_period(double mu, double horizon) {
  const auto sys = models::class1_neuron({mu, {}});
  ode::IntegrateOptions io;
  io.tol = 1e-12;
  const std::vector<double> x0{0.0, mu};
  const auto traj = ode::integrate(sys, x0, 0.0, horizon, io);
  require(traj.back_state()[0] > 2 * kPi, ErrorCode::InsufficientData, "horizon too short");
  double lo = 0.0, hi = traj.back_time();
  for (int i = 0; i < 200 && hi - lo > 1e-13 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (traj.at(mid)[0] < 2 * kPi ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// 5. Class I neuron period.
void ac5(Outcome& o) {
  for (double mu : {0.1, 0.5, 1.5}) {
    const double q = quadrature_period(mu);
    const double closed = 2 * kPi / std::sqrt(mu * mu + 2 * mu);
    o.check(std::abs(q - closed) <= 1e-9 * closed, "quadrature oracle vs closed form");
    o.check(std::abs(models::class1_period(mu) - closed) <= 1e-12 * closed, "class1_period");
    const double t = integrated_period(mu, 2 * q);
    const double rel = std::abs(t - closed) / closed;
    o.detail << "mu=" << mu << " rel " << rel << "; ";
    o.check(rel <= 1e-6, "integrated period at mu " + std::to_string(mu));
  }
  const double slow = integrated_period(1e-4, 1000.0);
  const double fast = integrated_period(1.0, 10.0);
  o.detail << "T(1e-4)/T(1) = " << slow / fast;
  o.check(slow > 100 * fast, "period divergence");
}

// 6. Adler tongue.
void ac6(Outcome& o) {
  TongueScanOptions opts;
  opts.n_delta = 64;
  opts.n_k = 64;
  opts.threads = worker_threads();
  const auto grid = arnold_tongue_scan(opts);
  const double cell = (opts.delta_max - opts.delta_min) / (opts.n_delta - 1);
  std::size_t wrong = 0, far = 0;
  double worst_rot = 0.0;
  for (const auto& pt : grid.points) {
    const bool expected = std::abs(pt.delta) <= pt.k;
    if (pt.locking.has_value() != expected) {
      ++wrong;
      if (std::abs(std::abs(pt.delta) - pt.k) > 2 * cell) ++far;
    }
    if (std::abs(pt.delta) > pt.k + 2 * cell) {
      const double oracle = std::copysign(std::sqrt(pt.delta * pt.delta - pt.k * pt.k), pt.delta) / (2 * kPi);
      worst_rot = std::max(worst_rot, std::abs(pt.rotation_relative - oracle));
    }
  }
  o.detail << wrong << " cells off the analytic tongue, " << far << " beyond 2 cells; rotation error " << worst_rot;
  o.check(far == 0, "boundary within 2 cells");
  o.check(worst_rot <= 1e-3, "rotation number outside the tongue");
}

PhaseSeries linear_series(std::size_t n, double dt, const std::function<double(double)>& f) {
  std::vector<double> t(n), p(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = dt * static_cast<double>(i);
    p[i] = f(t[i]);
  }
  return PhaseSeries(std::move(t), 1, std::move(p));
}

// 7. m:n locking.
void ac7(Outcome& o) {
  const auto a = linear_series(8000, 0.05, [](double t) { return t; });
  const auto b = linear_series(8000, 0.05, [](double t) { return 2.0 / 3.0 * t + 0.1 * std::sin(t); });
  const double phi = (1 + std::sqrt(5.0)) / 2;
  const auto g = linear_series(8000, 0.05, [phi](double t) { return phi * t; });
  const auto l = detect_mn_locking(a, 0, b, 0);
  const auto l2 = detect_mn_locking(a, 0, b, 0);
  o.check(l && l->m == 3 && l->n == 2, "3:2 pair detected as (3,2)");
  o.check(l && l2 && l->residual == l2->residual, "deterministic");
  o.check(!detect_mn_locking(a, 0, g, 0), "golden-mean pair unlocked");
  if (l) o.detail << "resonant pair (" << l->m << "," << l->n << ") residual " << l->residual << "; ";
  o.detail << "golden mean unlocked";
}

// 8. Aggregation benchmark.
void ac8(Outcome& o) {
  AggregateOptions opts;
  opts.threads = worker_threads();
  const auto tree = aggregate(two_block_network(0.5, 0.02), opts);
  o.check(tree.depth() >= 1, "at least one level");
  if (tree.depth() == 0) return;
  const auto& l1 = tree.levels[0];
  o.check(l1.partition == Partition{{0, 1, 2}, {3, 4, 5}}, "level-1 partition is the two blocks");
  o.check(l1.validation_error <= 0.15, "reduced model within 0.15 rad");
  o.detail << "level-1 validation error " << l1.validation_error << " rad; ";
  if (l1.clusters.size() != 2 || l1.couplings.size() != 2) {
    o.check(false, "two clusters with two fitted couplings");
    return;
  }
  // Two-node Adler oracle: the reduced pair locks iff |dw| <= k12 + k21, and k scales with inter.
  const double dw = std::abs(l1.clusters[1].omega_hat - l1.clusters[0].omega_hat);
  const double ksum = l1.couplings[0].k_hat + l1.couplings[1].k_hat;
  const double threshold = 0.02 * dw / ksum;
  o.detail << "fitted threshold " << threshold << "; ";
  o.check(dw > ksum, "blocks apart at inter 0.02");
  const auto merged = aggregate(two_block_network(0.5, 1.5 * threshold), opts);
  const bool merges = merged.depth() == 2 && merged.levels[1].partition == Partition{{0, 1, 2, 3, 4, 5}};
  o.check(merges, "merge at level 2 above the threshold");
  o.detail << "inter " << 1.5 * threshold << " gives depth " << merged.depth();
}

// 9. Lyapunov exponents.
void ac9(Outcome& o) {
  const ode::SystemSpec diag(2, [](double, std::span<const double> x, std::span<double> f) {
    f[0] = -x[0];
    f[1] = -2 * x[1];
  });
  const std::vector<double> x0{1.0, 1.0};
  const auto ld = ode::lyapunov_exponents(diag, x0, 2, 0.0, 5000.0, 1.0);
  o.check(std::abs(ld[0] + 1) <= 1e-3 && std::abs(ld[1] + 2) <= 1e-3, "diag(-1,-2)");
  o.detail << "diag (" << ld[0] << ", " << ld[1] << "); ";

  for (double alpha : {0.5, 1.0, 2.0}) {
    models::PoincareParams p = poincare(0.0, models::Forcing::Zero);
    p.alpha = alpha;
    const std::vector<double> y0{p.a, 0.0};
    const auto lp = ode::lyapunov_exponents(models::poincare_cartesian(p), y0, 2, 0.0, 500.0, 1.0);
    o.check(std::abs(lp[0]) <= 2e-2 && std::abs(lp[1] + alpha * p.a) <= 2e-2,
            "unforced Poincare alpha " + std::to_string(alpha));
    o.detail << "Poincare alpha=" << alpha << " (" << lp[0] << ", " << lp[1] << "); ";
  }

  const auto ross = models::rossler();
  ode::IntegrateOptions io;
  io.tol = 1e-10;
  const std::vector<double> r0{1.0, 1.0, 0.0};
  const auto start = ode::propagate(ross, r0, 0.0, 200.0, io);
  const double l1 = ode::lyapunov_exponents(ross, start, 1, 200.0, 10200.0, 1.0, 1e-9, 1)[0];
  const double l2 = ode::lyapunov_exponents(ross, start, 1, 200.0, 10200.0, 2.5, 1e-9, 2)[0];
  o.detail << "Rossler lambda1 " << l1 << " / " << l2;
  o.check(l1 > 0 && l2 > 0, "Rossler lambda1 positive");
  o.check(std::abs(l1 - l2) <= 0.02, "Rossler runs agree");
}

// 10. Phase coherence.
void ac10(Outcome& o) {
  const auto sys = models::rossler();
  ode::IntegrateOptions io;
  io.tol = 1e-9;
  const std::vector<double> x0{1.0, 1.0, 0.0};
  const auto x = ode::propagate(sys, x0, 0.0, 200.0, io);
  const auto traj = ode::integrate(sys, x, 200.0, 5200.0, io);
  const auto rep = coherence(crossing_times(section_crossings(traj, rossler_section())));
  o.detail << "Rossler index " << rep.coherence_index << " over " << rep.count << " returns; ";
  o.check(rep.coherence_index < 0.1, "Rossler coherence index < 0.1");

  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(1.0, 2.0);
  std::vector<double> times{0.0};
  for (int i = 0; i < 20000; ++i) times.push_back(times.back() + u(rng));
  const auto null = coherence(times);
  const double analytic = std::sqrt(1.0 / 12.0) / 1.5;
  o.detail << "uniform null " << null.coherence_index << " (analytic " << analytic << ")";
  o.check(std::abs(null.coherence_index - analytic) <= 0.03, "uniform null case");
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + NHSYNC_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 11. CLI determinism for every experiment kind.
void ac11(Outcome& o) {
  const fs::path root = fs::temp_directory_path() / "nhsync_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::vector<std::pair<std::string, std::string>> configs{
      {"simulate", R"({"model": "circuit", "numerics": {"horizon": 50}})"},
      {"graph", R"({"experiment": "graph", "model": "poincare", "params": {"gamma": 0.3, "forcing": "single"},
                    "numerics": {"grid": 32}})"},
      {"tongue", R"({"experiment": "tongue", "model": "adler", "tongue": {"n_delta": 16, "n_k": 8}})"},
      {"collapse", R"({"experiment": "collapse", "model": "poincare",
                       "params": {"gamma": 0.3, "forcing": "single", "forcing_frequency": 1.0},
                       "numerics": {"grid": 32, "horizon": 100}, "collapse": {"fibers": [0, 1.5]}})"},
      {"aggregate", R"({"experiment": "aggregate", "model": "network", "params": {"preset": "two_block"}})"},
      {"lyapunov", R"({"experiment": "lyapunov", "model": "rossler", "numerics": {"horizon": 500, "seed": 9}})"},
      {"coherence", R"({"experiment": "coherence", "model": "rossler", "numerics": {"horizon": 500}})"}};
  std::size_t compared = 0;
  for (const auto& [name, text] : configs) {
    const fs::path cfg = root / (name + ".json");
    std::ofstream(cfg) << text;
    const fs::path a = root / (name + "_a"), b = root / (name + "_b");
    const int ra = run_cli("run " + cfg.string() + " --output-dir " + a.string() + " --seed 17 --threads 1");
    const int rb = run_cli("run " + cfg.string() + " --output-dir " + b.string() + " --seed 17");
    o.check(ra == 0 && rb == 0, name + " runs succeed");
    if (ra != 0 || rb != 0) continue;
    for (const auto& e : fs::directory_iterator(a)) {
      if (e.path().extension() != ".csv") continue;
      ++compared;
      o.check(slurp(e.path()) == slurp(b / e.path().filename()), name + "/" + e.path().filename().string());
    }
  }
  fs::remove_all(root);
  o.detail << compared << " CSV files compared across 7 experiment kinds";
  o.check(compared >= 7, "every kind wrote a CSV");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"AC1 unperturbed cylinder", ac1},   {"AC2 persistence threshold", ac2},
      {"AC3 method agreement", ac3},       {"AC4 slope check", ac4},
      {"AC5 class I neuron", ac5},         {"AC6 Adler tongue", ac6},
      {"AC7 m:n locking", ac7},            {"AC8 aggregation benchmark", ac8},
      {"AC9 Lyapunov exponents", ac9},     {"AC10 coherence", ac10},
      {"AC11 CLI determinism", ac11}};
  // Runtime limits in seconds; 0 means none stated.
  const std::vector<double> limits{60, 300, 120, 0, 0, 180, 0, 300, 0, 0, 0};

  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& [name, fn] = criteria[i];
    if (!only.empty() && std::find(only.begin(), only.end(), name.substr(0, name.find(' '))) == only.end())
      continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limits[i] > 0) o.check(secs <= limits[i], "runtime limit " + std::to_string(limits[i]) + " s");
    failures += o.pass ? 0 : 1;
    std::printf("%s %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, only.empty() ? criteria.size() : only.size());
  return failures == 0 ? 0 : 1;
}
