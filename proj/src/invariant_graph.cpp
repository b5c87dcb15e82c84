#include "nhsync/invariant_graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "parallel.hpp"

namespace nhsync {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kMaxDim = 16;

struct Dims {
  std::size_t k, p, d;
};

Dims check_graph(const TorusGraph& rho, const PhaseNormalSystem& sys, const char* who) {
  const Dims g{sys.phase_dim(), sys.normal_dim(), sys.forcing_dim()};
  require(g.p >= 1 && g.p <= kMaxDim, ErrorCode::InvalidArgument,
          std::string(who) + ": chart needs 1..16 normal coordinates");
  require(rho.phase_dims() == g.k && rho.forcing_dims() == g.d && rho.normal_dim() == g.p,
          ErrorCode::InvalidArgument, std::string(who) + ": graph does not match the chart");
  return g;
}

double sym_max_eigen(const double* m, std::size_t n) {
  if (n == 1) return m[0];
  Eigen::MatrixXd a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (m[i * n + j] + m[j * n + i]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double wrap_angle(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0) w += kTwoPi;
  return w;
}

double wrapped_diff(double a, double b) { return std::remainder(a - b, kTwoPi); }

[[noreturn]] void escape(const std::string& who, const std::string& detail) {
  throw Error(ErrorCode::ChartEscape, who + ": left the chart domain (" + detail + ")");
}

// Runs body, mapping chart domain failures to ChartEscape.
template <class Body>
void in_chart(const char* who, Body&& body) {
  try {
    body();
  } catch (const IntegrationError&) {
    throw;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Domain) escape(who, e.what());
    throw;
  }
}

// theta' on the graph; state (theta, phi), dim k + d.
ode::SystemSpec on_graph_phase_system(const TorusGraph& rho, const PhaseNormalSystem& sys) {
  const std::size_t k = sys.phase_dim(), p = sys.normal_dim(), d = sys.forcing_dim();
  const auto& w = sys.forcing_frequencies();
  return ode::SystemSpec(k + d, [&rho, &sys, &w, k, p, d](double, std::span<const double> y,
                                                          std::span<double> dy) {
    double r[kMaxDim];
    rho.evaluate(y, std::span<double>(r, p));
    sys.phase_rate(y.subspan(0, k), std::span<const double>(r, p), y.subspan(k, d),
                   dy.subspan(0, k));
    for (std::size_t i = 0; i < d; ++i) dy[k + i] = w[i];
  });
}

std::vector<double> theta_gradient(const TorusGraph& rho, std::span<const double> ang,
                                   std::size_t k, std::span<double> value) {
  const std::size_t p = rho.normal_dim(), m = rho.torus_dim();
  std::vector<double> grad(p * m), out(p * k);
  rho.evaluate_with_gradient(ang, value, grad);
  for (std::size_t c = 0; c < p; ++c)
    for (std::size_t j = 0; j < k; ++j) out[c * k + j] = grad[c * m + j];
  return out;
}

std::vector<std::size_t> torus_resolution(const PhaseNormalSystem& sys, std::size_t n) {
  return std::vector<std::size_t>(sys.phase_dim() + sys.forcing_dim(), n);
}

}  // namespace

std::size_t default_grid_resolution(std::size_t torus_dim) { return torus_dim <= 2 ? 128 : 48; }

TorusGraph reference_graph(const PhaseNormalSystem& sys, std::size_t resolution) {
  const auto ref = sys.reference_normal();
  return TorusGraph::constant(sys.phase_dim(), torus_resolution(sys, resolution), ref);
}

double normal_rate_estimate(const TorusGraph& rho, const PhaseNormalSystem& sys) {
  const auto [k, p, d] = check_graph(rho, sys, "normal_rate_estimate");
  std::vector<double> ang(k + d);
  ChartPartials cp;
  double sum = 0;
  for (std::size_t n = 0; n < rho.node_count(); ++n) {
    rho.node_angles(n, ang);
    std::span<const double> a(ang);
    sys.partials(a.subspan(0, k), rho.value(n), a.subspan(k, d), cp);
    sum += -sym_max_eigen(cp.r_r.data(), p);
  }
  return sum / static_cast<double>(rho.node_count());
}

double default_window(const TorusGraph& rho, const PhaseNormalSystem& sys) {
  const double lam = normal_rate_estimate(rho, sys);
  require(lam > 0, ErrorCode::Precondition,
          "normal dynamics are not attracting near the graph (estimated rate " +
              std::to_string(lam) + ")");
  return std::min(20.0 / lam, 500.0);
}

TorusGraph graph_transform_step(const TorusGraph& rho, const PhaseNormalSystem& sys,
                                const TransformOptions& opts) {
  const auto [k, p, d] = check_graph(rho, sys, "graph_transform_step");
  require(opts.window >= 0 && std::isfinite(opts.window), ErrorCode::InvalidArgument,
          "graph_transform_step: window must be finite and non-negative");
  const auto& w = sys.forcing_frequencies();
  auto phase_sys = on_graph_phase_system(rho, sys);
  // (theta, phi, r): theta follows the graph, r follows the true normal equation.
  ode::SystemSpec fwd_sys(k + d + p, [&rho, &sys, &w, k, p, d](double, std::span<const double> z,
                                                               std::span<double> dz) {
    double rg[kMaxDim];
    auto ang = z.subspan(0, k + d);
    rho.evaluate(ang, std::span<double>(rg, p));
    auto theta = z.subspan(0, k);
    auto phi = z.subspan(k, d);
    sys.phase_rate(theta, std::span<const double>(rg, p), phi, dz.subspan(0, k));
    for (std::size_t i = 0; i < d; ++i) dz[k + i] = w[i];
    sys.normal_rate(theta, z.subspan(k + d, p), phi, dz.subspan(k + d, p));
  });

  ode::IntegrateOptions io;
  io.tol = opts.integrator_tol;
  const std::size_t threads = std::min(detail::resolve_threads(opts.threads), rho.node_count());
  std::vector<ode::Propagator> back_props, fwd_props;
  for (std::size_t t = 0; t < threads; ++t) {
    back_props.emplace_back(phase_sys, io);
    fwd_props.emplace_back(fwd_sys, io);
  }
  std::vector<double> values(rho.node_count() * p);
  const double T = opts.window;
  detail::parallel_for(rho.node_count(), threads, [&](std::size_t n, std::size_t wk) {
    in_chart("graph_transform_step", [&] {
      std::vector<double> z(k + d + p);
      std::span<double> zs(z);
      rho.node_angles(n, zs.subspan(0, k + d));
      if (T > 0) back_props[wk].advance(zs.subspan(0, k + d), 0.0, -T);
      rho.evaluate(zs.subspan(0, k + d), zs.subspan(k + d, p));
      if (!sys.in_domain(zs.subspan(k + d, p))) escape("graph_transform_step", "graph value");
      if (T > 0) {
        fwd_props[wk].advance(zs, -T, 0.0, [&](double, std::span<const double> x, auto) {
          if (!sys.in_domain(x.subspan(k + d, p))) escape("graph_transform_step", "normal state");
        });
      }
      for (std::size_t c = 0; c < p; ++c) {
        const double v = z[k + d + c];
        if (!std::isfinite(v))
          throw IntegrationError(ErrorCode::NaNFailure, "graph_transform_step: non-finite value", 0.0);
        values[n * p + c] = v;
      }
    });
  });
  return TorusGraph(k, rho.resolution(), p, std::move(values));
}

GraphSolution solve_graph(const PhaseNormalSystem& sys, const SolveOptions& opts) {
  const std::size_t m = sys.phase_dim() + sys.forcing_dim();
  return solve_graph(reference_graph(sys, default_grid_resolution(m)), sys, opts);
}

GraphSolution solve_graph(const TorusGraph& rho0, const PhaseNormalSystem& sys,
                          const SolveOptions& opts) {
  check_graph(rho0, sys, "solve_graph");
  require(opts.tol > 0 && opts.max_iter >= 1, ErrorCode::InvalidArgument,
          "solve_graph: need tol > 0 and max_iter >= 1");
  TransformOptions to;
  to.window = opts.window > 0 ? opts.window : default_window(rho0, sys);
  to.integrator_tol = opts.integrator_tol > 0 ? opts.integrator_tol
                                              : std::clamp(opts.tol / 100, 1e-12, 1e-9);
  to.threads = opts.threads;

  GraphSolution sol{rho0, {}};
  sol.diagnostics.window = to.window;
  auto& deltas = sol.diagnostics.deltas;
  auto fit_factor = [&] {
    if (deltas.size() < 2) return;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      if (!(deltas[i] > 0)) continue;
      const double x = static_cast<double>(i), y = std::log(deltas[i]);
      sx += x; sy += y; sxx += x * x; sxy += x * y;
      ++n;
    }
    if (n < 2) return;
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    sol.diagnostics.contraction_factor = std::exp(slope);
  };

  std::size_t non_decreasing = 0;
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    TorusGraph next = graph_transform_step(sol.graph, sys, to);
    const double delta = next.sup_distance(sol.graph);
    if (!std::isfinite(delta))
      throw IntegrationError(ErrorCode::NaNFailure, "solve_graph: non-finite iterate", 0.0);
    if (!deltas.empty() && delta >= deltas.back()) {
      ++non_decreasing;
    } else {
      non_decreasing = 0;
    }
    deltas.push_back(delta);
    sol.graph = std::move(next);
    fit_factor();
    if (delta < opts.tol) {
      sol.diagnostics.converged = true;
      return sol;
    }
    if (non_decreasing >= 5) {
      std::ostringstream os;
      os << "solve_graph: deltas non-decreasing for 5 iterations (last " << delta << ")";
      throw NoGraphError(os.str(), std::move(sol));
    }
  }
  std::ostringstream os;
  os << "solve_graph: no convergence in " << opts.max_iter << " iterations (last delta "
     << deltas.back() << ")";
  throw NoGraphError(os.str(), std::move(sol));
}

PullbackResult pullback_graph(const PhaseNormalSystem& sys, const std::vector<std::size_t>& grid,
                              const PullbackOptions& opts) {
  const std::size_t k = sys.phase_dim(), p = sys.normal_dim(), d = sys.forcing_dim();
  require(p >= 1 && p <= kMaxDim, ErrorCode::InvalidArgument,
          "pullback_graph: chart needs 1..16 normal coordinates");
  require(grid.size() == k + d, ErrorCode::InvalidArgument,
          "pullback_graph: grid must list one resolution per torus dimension");
  require(opts.ensemble >= 1, ErrorCode::InvalidArgument, "pullback_graph: ensemble must be >= 1");
  const auto ref = sys.reference_normal();
  TorusGraph seeds = TorusGraph::constant(k, grid, ref);

  PullbackResult res;
  const double lam = normal_rate_estimate(seeds, sys);
  res.window = opts.window >= 0 ? opts.window : (lam > 0 ? 20.0 / lam : 0.0);
  require(std::isfinite(res.window), ErrorCode::InvalidArgument,
          "pullback_graph: window must be finite");
  res.converged = res.window > 0 && lam > 0 && res.window * lam >= 20.0 * (1 - 1e-12);
  if (res.window == 0) {
    res.graph = std::move(seeds);
    res.converged = false;
    return res;
  }

  std::size_t n_theta = 1, n_phi = 1;
  for (std::size_t j = 0; j < k; ++j) n_theta *= grid[j];
  for (std::size_t j = k; j < k + d; ++j) n_phi *= grid[j];
  const auto per_dim = static_cast<std::size_t>(
      std::ceil(std::pow(static_cast<double>(opts.ensemble), 1.0 / static_cast<double>(k)) - 1e-9));
  std::vector<std::size_t> seed_res(k);
  std::size_t n_seeds = 1;
  for (std::size_t j = 0; j < k; ++j) {
    seed_res[j] = grid[j] * (k == 1 ? opts.ensemble : per_dim);
    n_seeds *= seed_res[j];
  }
  std::vector<double> h(k);
  for (std::size_t j = 0; j < k; ++j) h[j] = kTwoPi / static_cast<double>(grid[j]);

  // Quadratic design in the wrapped offsets: 1, delta_j, delta_j delta_l (j <= l).
  const std::size_t n_params = 1 + k + k * (k + 1) / 2;
  const auto ext = sys.extended_system();
  const auto& w = sys.forcing_frequencies();
  ode::IntegrateOptions io;
  io.tol = opts.integrator_tol;
  const std::size_t threads = std::min(detail::resolve_threads(opts.threads), n_phi);
  std::vector<ode::Propagator> props;
  for (std::size_t t = 0; t < threads; ++t) props.emplace_back(ext, io);

  std::vector<double> values(n_theta * n_phi * p, 0.0);
  std::vector<unsigned char> filled(n_theta * n_phi, 0);
  const double T = res.window;

  detail::parallel_for(n_phi, threads, [&](std::size_t f, std::size_t wk) {
    in_chart("pullback_graph", [&] {
      // Forcing-node angles.
      std::vector<double> phi_node(d);
      {
        std::size_t rem = f;
        for (std::size_t j = k + d; j-- > k;) {
          phi_node[j - k] = kTwoPi * static_cast<double>(rem % grid[j]) / static_cast<double>(grid[j]);
          rem /= grid[j];
        }
      }
      // Flow every seed to the node's forcing phase.
      std::vector<double> ends(n_seeds * (k + p));
      std::vector<double> z(k + p + d);
      for (std::size_t s = 0; s < n_seeds; ++s) {
        std::size_t rem = s;
        for (std::size_t j = k; j-- > 0;) {
          z[j] = kTwoPi * (static_cast<double>(rem % seed_res[j]) + 0.5) /
                 static_cast<double>(seed_res[j]);
          rem /= seed_res[j];
        }
        for (std::size_t c = 0; c < p; ++c) z[k + c] = ref[c];
        for (std::size_t j = 0; j < d; ++j) z[k + p + j] = phi_node[j] - w[j] * T;
        props[wk].advance(z, 0.0, T, [&](double, std::span<const double> x, auto) {
          if (!sys.in_domain(x.subspan(k, p))) escape("pullback_graph", "normal state");
        });
        for (std::size_t j = 0; j < k; ++j) ends[s * (k + p) + j] = wrap_angle(z[j]);
        for (std::size_t c = 0; c < p; ++c) ends[s * (k + p) + k + c] = z[k + c];
      }
      // Bin endpoints by theta cell.
      std::vector<std::vector<std::size_t>> cells(n_theta);
      for (std::size_t s = 0; s < n_seeds; ++s) {
        std::size_t cell = 0;
        for (std::size_t j = 0; j < k; ++j) {
          auto i = static_cast<std::size_t>(std::floor(ends[s * (k + p) + j] / h[j] + 0.5));
          cell = cell * grid[j] + i % grid[j];
        }
        cells[cell].push_back(s);
      }
      // Local quadratic fit around each theta node over +-1.5 h.
      std::vector<std::size_t> idx(k), nb(k);
      std::vector<int> off(k);
      std::vector<std::size_t> near;
      for (std::size_t tn = 0; tn < n_theta; ++tn) {
        {
          std::size_t rem = tn;
          for (std::size_t j = k; j-- > 0;) {
            idx[j] = rem % grid[j];
            rem /= grid[j];
          }
        }
        near.clear();
        std::fill(off.begin(), off.end(), -2);
        for (;;) {
          std::size_t cell = 0;
          for (std::size_t j = 0; j < k; ++j) {
            const auto g = static_cast<long>(grid[j]);
            nb[j] = static_cast<std::size_t>(((static_cast<long>(idx[j]) + off[j]) % g + g) % g);
            cell = cell * grid[j] + nb[j];
          }
          for (std::size_t s : cells[cell]) {
            bool inside = true;
            for (std::size_t j = 0; j < k && inside; ++j) {
              const double dl = wrapped_diff(ends[s * (k + p) + j], h[j] * static_cast<double>(idx[j]));
              inside = std::abs(dl) <= 1.5 * h[j];
            }
            if (inside) near.push_back(s);
          }
          std::size_t j = 0;
          while (j < k && off[j] == 2) off[j++] = -2;
          if (j == k) break;
          ++off[j];
        }
        std::sort(near.begin(), near.end());
        near.erase(std::unique(near.begin(), near.end()), near.end());
        if (near.size() < n_params + 1) continue;
        Eigen::MatrixXd A(near.size(), n_params);
        Eigen::MatrixXd B(near.size(), p);
        for (std::size_t row = 0; row < near.size(); ++row) {
          const std::size_t s = near[row];
          std::vector<double> dl(k);
          for (std::size_t j = 0; j < k; ++j)
            dl[j] = wrapped_diff(ends[s * (k + p) + j], h[j] * static_cast<double>(idx[j])) / h[j];
          std::size_t col = 0;
          A(row, col++) = 1.0;
          for (std::size_t j = 0; j < k; ++j) A(row, col++) = dl[j];
          for (std::size_t j = 0; j < k; ++j)
            for (std::size_t l = j; l < k; ++l) A(row, col++) = dl[j] * dl[l];
          for (std::size_t c = 0; c < p; ++c) B(row, c) = ends[s * (k + p) + k + c];
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
        if (qr.rank() < static_cast<Eigen::Index>(n_params)) continue;
        const Eigen::MatrixXd coef = qr.solve(B);
        const std::size_t node = tn * n_phi + f;
        for (std::size_t c = 0; c < p; ++c) values[node * p + c] = coef(0, c);
        filled[node] = 1;
      }
    });
  });

  std::size_t empty = 0;
  for (unsigned char v : filled) empty += v ? 0 : 1;
  res.empty_fraction = static_cast<double>(empty) / static_cast<double>(filled.size());
  if (res.empty_fraction > 0.2) {
    std::ostringstream os;
    os << "pullback_graph: " << res.empty_fraction * 100 << "% of grid nodes received no samples";
    fail(ErrorCode::InsufficientSampling, os.str());
  }
  // Fill empty nodes from filled theta neighbours, sweep by sweep.
  while (empty > 0) {
    std::vector<unsigned char> next = filled;
    std::vector<double> nv = values;
    std::size_t fixed = 0;
    for (std::size_t node = 0; node < filled.size(); ++node) {
      if (filled[node]) continue;
      const std::size_t tn = node / n_phi, f = node % n_phi;
      std::vector<std::size_t> idx(k);
      std::size_t rem = tn;
      for (std::size_t j = k; j-- > 0;) {
        idx[j] = rem % grid[j];
        rem /= grid[j];
      }
      std::vector<double> acc(p, 0.0);
      std::size_t cnt = 0;
      for (std::size_t j = 0; j < k; ++j) {
        for (int sgn : {-1, 1}) {
          auto nid = idx;
          nid[j] = sgn < 0 ? (idx[j] + grid[j] - 1) % grid[j] : (idx[j] + 1) % grid[j];
          std::size_t t2 = 0;
          for (std::size_t l = 0; l < k; ++l) t2 = t2 * grid[l] + nid[l];
          const std::size_t other = t2 * n_phi + f;
          if (!filled[other]) continue;
          for (std::size_t c = 0; c < p; ++c) acc[c] += values[other * p + c];
          ++cnt;
        }
      }
      if (cnt == 0) continue;
      for (std::size_t c = 0; c < p; ++c) nv[node * p + c] = acc[c] / static_cast<double>(cnt);
      next[node] = 1;
      ++fixed;
    }
    if (fixed == 0) fail(ErrorCode::InsufficientSampling, "pullback_graph: cannot fill empty nodes");
    filled.swap(next);
    values.swap(nv);
    empty -= fixed;
  }
  res.graph = TorusGraph(k, grid, p, std::move(values));
  return res;
}

TorusGraph slope_field(const TorusGraph& rho, const PhaseNormalSystem& sys,
                       const SlopeOptions& opts) {
  const auto [k, p, d] = check_graph(rho, sys, "slope_field");
  const double T = opts.window > 0 ? opts.window : default_window(rho, sys);
  const auto& w = sys.forcing_frequencies();
  const std::size_t ns = p * k;
  auto phase_sys = on_graph_phase_system(rho, sys);
  // (theta, phi, sigma) with sigma' = R_r sigma + R_theta - sigma (Theta_theta + Theta_r sigma).
  ode::SystemSpec fwd_sys(k + d + ns, [&rho, &sys, &w, k, p, d](double, std::span<const double> z,
                                                               std::span<double> dz) {
    thread_local ChartPartials cp;
    double rg[kMaxDim];
    auto ang = z.subspan(0, k + d);
    auto theta = z.subspan(0, k);
    auto phi = z.subspan(k, d);
    const std::span<const double> r(rg, p);
    rho.evaluate(ang, std::span<double>(rg, p));
    sys.phase_rate(theta, r, phi, dz.subspan(0, k));
    for (std::size_t i = 0; i < d; ++i) dz[k + i] = w[i];
    sys.partials(theta, r, phi, cp);
    const double* s = z.data() + k + d;
    double* ds = dz.data() + k + d;
    double tang[9];  // k <= 3
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        double v = cp.theta_theta[i * k + j];
        for (std::size_t c = 0; c < p; ++c) v += cp.theta_r[i * p + c] * s[c * k + j];
        tang[i * k + j] = v;
      }
    for (std::size_t c = 0; c < p; ++c)
      for (std::size_t j = 0; j < k; ++j) {
        double v = cp.r_theta[c * k + j];
        for (std::size_t e = 0; e < p; ++e) v += cp.r_r[c * p + e] * s[e * k + j];
        for (std::size_t i = 0; i < k; ++i) v -= s[c * k + i] * tang[i * k + j];
        ds[c * k + j] = v;
      }
  });
  require(k <= 3, ErrorCode::InvalidArgument, "slope_field: at most 3 phases");

  ode::IntegrateOptions io;
  io.tol = opts.integrator_tol;
  const std::size_t threads = std::min(detail::resolve_threads(opts.threads), rho.node_count());
  std::vector<ode::Propagator> back_props, fwd_props;
  for (std::size_t t = 0; t < threads; ++t) {
    back_props.emplace_back(phase_sys, io);
    fwd_props.emplace_back(fwd_sys, io);
  }
  std::vector<double> values(rho.node_count() * ns);
  detail::parallel_for(rho.node_count(), threads, [&](std::size_t n, std::size_t wk) {
    try {
      in_chart("slope_field", [&] {
        std::vector<double> z(k + d + ns), r(p);
        std::span<double> zs(z);
        rho.node_angles(n, zs.subspan(0, k + d));
        back_props[wk].advance(zs.subspan(0, k + d), 0.0, -T);
        auto sigma0 = theta_gradient(rho, zs.subspan(0, k + d), k, r);
        std::copy(sigma0.begin(), sigma0.end(), z.begin() + static_cast<long>(k + d));
        fwd_props[wk].advance(zs, -T, 0.0, [&](double t, std::span<const double> x, auto) {
          for (std::size_t i = 0; i < ns; ++i)
            if (!(std::abs(x[k + d + i]) <= opts.blowup)) {
              std::ostringstream os;
              os << "slope_field: slope blew up at t = " << t << " (|sigma| > " << opts.blowup << ")";
              fail(ErrorCode::NHRatioViolation, os.str());
            }
        });
        std::copy(z.begin() + static_cast<long>(k + d), z.end(),
                  values.begin() + static_cast<long>(n * ns));
      });
    } catch (const IntegrationError& e) {
      fail(ErrorCode::NHRatioViolation, std::string("slope_field: ") + e.what());
    }
  });
  return TorusGraph(k, rho.resolution(), ns, std::move(values));
}

TorusGraph finite_difference_slope(const TorusGraph& rho, std::size_t k) {
  require(k >= 1 && k <= rho.torus_dim(), ErrorCode::InvalidArgument,
          "finite_difference_slope: bad phase dimension");
  const std::size_t p = rho.normal_dim(), m = rho.torus_dim();
  const double h = 1e-5;
  std::vector<double> values(rho.node_count() * p * k);
  std::vector<double> ang(m), up(p), dn(p);
  for (std::size_t n = 0; n < rho.node_count(); ++n) {
    rho.node_angles(n, ang);
    for (std::size_t j = 0; j < k; ++j) {
      const double a = ang[j];
      ang[j] = a + h;
      rho.evaluate(ang, up);
      ang[j] = a - h;
      rho.evaluate(ang, dn);
      ang[j] = a;
      for (std::size_t c = 0; c < p; ++c) values[(n * p + c) * k + j] = (up[c] - dn[c]) / (2 * h);
    }
  }
  return TorusGraph(rho.phase_dims(), rho.resolution(), p * k, std::move(values));
}

NHRates nh_rates(const TorusGraph& rho, const PhaseNormalSystem& sys, const NHRateOptions& opts) {
  const auto [k, p, d] = check_graph(rho, sys, "nh_rates");
  require(opts.sample_count >= 1 && opts.horizon > 0 && opts.renorm_interval > 0,
          ErrorCode::InvalidArgument, "nh_rates: need samples >= 1, horizon > 0, renorm > 0");
  require(k <= 3, ErrorCode::InvalidArgument, "nh_rates: at most 3 phases");
  const std::size_t n = k + p + d;
  const auto& w = sys.forcing_frequencies();
  // State (theta, s, phi): s is a placeholder carrying the normal block of the
  // variational equation; the Jacobian is blockdiag(Theta_theta + Theta_r rho_theta, R_r).
  ode::SystemSpec aug(
      n,
      [&rho, &sys, &w, k, p, d](double, std::span<const double> z, std::span<double> dz) {
        double ang[6], rg[kMaxDim];
        for (std::size_t j = 0; j < k; ++j) ang[j] = z[j];
        for (std::size_t j = 0; j < d; ++j) ang[k + j] = z[k + p + j];
        rho.evaluate(std::span<const double>(ang, k + d), std::span<double>(rg, p));
        sys.phase_rate(z.subspan(0, k), std::span<const double>(rg, p), z.subspan(k + p, d),
                       dz.subspan(0, k));
        for (std::size_t c = 0; c < p; ++c) dz[k + c] = 0.0;
        for (std::size_t j = 0; j < d; ++j) dz[k + p + j] = w[j];
      },
      [&rho, &sys, k, p, d, n](double, std::span<const double> z, std::span<double> jac) {
        thread_local ChartPartials cp;
        double ang[6], rg[kMaxDim];
        for (std::size_t j = 0; j < k; ++j) ang[j] = z[j];
        for (std::size_t j = 0; j < d; ++j) ang[k + j] = z[k + p + j];
        auto sigma = theta_gradient(rho, std::span<const double>(ang, k + d), k,
                                    std::span<double>(rg, p));
        sys.partials(z.subspan(0, k), std::span<const double>(rg, p), z.subspan(k + p, d), cp);
        std::fill(jac.begin(), jac.end(), 0.0);
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            double v = cp.theta_theta[i * k + j];
            for (std::size_t c = 0; c < p; ++c) v += cp.theta_r[i * p + c] * sigma[c * k + j];
            jac[i * n + j] = v;
          }
        for (std::size_t c = 0; c < p; ++c)
          for (std::size_t e = 0; e < p; ++e) jac[(k + c) * n + k + e] = cp.r_r[c * p + e];
      });

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> uni(0.0, kTwoPi);
  std::vector<std::vector<double>> starts(opts.sample_count, std::vector<double>(n));
  for (auto& x : starts) {
    for (std::size_t j = 0; j < k; ++j) x[j] = uni(rng);
    for (std::size_t j = 0; j < d; ++j) x[k + p + j] = uni(rng);
    double ang[6];
    for (std::size_t j = 0; j < k; ++j) ang[j] = x[j];
    for (std::size_t j = 0; j < d; ++j) ang[k + j] = x[k + p + j];
    rho.evaluate(std::span<const double>(ang, k + d), std::span<double>(x.data() + k, p));
  }
  std::vector<double> frame((k + p) * n, 0.0);
  for (std::size_t v = 0; v < k + p; ++v) frame[v * n + v] = 1.0;
  ode::TangentOptions to;
  to.tol = opts.integrator_tol;
  to.record = false;
  std::vector<double> tang(opts.sample_count), norm(opts.sample_count);
  detail::parallel_for(opts.sample_count, opts.threads, [&](std::size_t s, std::size_t) {
    in_chart("nh_rates", [&] {
      auto ex = ode::integrate_with_tangents(aug, starts[s], frame, k + p, 0.0, opts.horizon,
                                             opts.renorm_interval, to)
                    .exponents();
      tang[s] = *std::max_element(ex.begin(), ex.begin() + static_cast<long>(k));
      norm[s] = *std::max_element(ex.begin() + static_cast<long>(k), ex.end());
    });
  });

  NHRates out;
  out.samples = opts.sample_count;
  out.lambda_T_max = *std::max_element(tang.begin(), tang.end());
  out.lambda_N = -*std::max_element(norm.begin(), norm.end());
  out.ratio = out.lambda_N / std::max(out.lambda_T_max, kNHRatioFloor);

  std::vector<double> ang(k + d), rv(p);
  ChartPartials cp;
  double inst = -HUGE_VAL;
  for (std::size_t node = 0; node < rho.node_count(); ++node) {
    rho.node_angles(node, ang);
    auto sigma = theta_gradient(rho, ang, k, rv);
    std::span<const double> a(ang);
    in_chart("nh_rates", [&] { sys.partials(a.subspan(0, k), rv, a.subspan(k, d), cp); });
    double m[9];
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        double v = cp.theta_theta[i * k + j];
        for (std::size_t c = 0; c < p; ++c) v += cp.theta_r[i * p + c] * sigma[c * k + j];
        m[i * k + j] = v;
      }
    inst = std::max(inst, sym_max_eigen(m, k));
  }
  out.instantaneous_tangential_max = inst;
  return out;
}

double persistence_threshold(double alpha, double a) {
  require(alpha > 0 && a > 0 && std::isfinite(alpha) && std::isfinite(a), ErrorCode::Domain,
          "persistence_threshold: alpha and a must be positive");
  return alpha * a * a / 2.0;
}

double invariance_residual(const TorusGraph& rho, const PhaseNormalSystem& sys,
                           std::size_t sample_count, std::uint64_t seed) {
  const auto [k, p, d] = check_graph(rho, sys, "invariance_residual");
  const std::size_t m = k + d;
  const auto& w = sys.forcing_frequencies();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, kTwoPi);
  std::vector<double> ang(m), r(p), grad(p * m), th(k), rr(p);
  double worst = 0;
  for (std::size_t s = 0; s < sample_count; ++s) {
    for (double& a : ang) a = uni(rng);
    rho.evaluate_with_gradient(ang, r, grad);
    std::span<const double> as(ang);
    in_chart("invariance_residual", [&] {
      sys.phase_rate(as.subspan(0, k), r, as.subspan(k, d), th);
      sys.normal_rate(as.subspan(0, k), r, as.subspan(k, d), rr);
    });
    for (std::size_t c = 0; c < p; ++c) {
      double adv = 0;
      for (std::size_t j = 0; j < k; ++j) adv += grad[c * m + j] * th[j];
      for (std::size_t j = 0; j < d; ++j) adv += grad[c * m + k + j] * w[j];
      worst = std::max(worst, std::abs(rr[c] - adv));
    }
  }
  return worst;
}

}  // namespace nhsync
