#include "nhsync/sync.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "nhsync/error.hpp"
#include "nhsync/format.hpp"
#include "parallel.hpp"

namespace nhsync {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_angle(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0) w += kTwoPi;
  return w;
}

// Least-squares slope of y against x.
double ls_slope(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}

std::size_t discard_start(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
}

}  // namespace

PhaseSeries::PhaseSeries(std::vector<double> times, std::size_t components,
                         std::vector<double> phases)
    : times_(std::move(times)), components_(components), phases_(std::move(phases)) {
  require(components_ >= 1, ErrorCode::InvalidArgument, "PhaseSeries: need at least one component");
  require(phases_.size() == times_.size() * components_, ErrorCode::InvalidArgument,
          "PhaseSeries: phase count does not match times x components");
  for (std::size_t i = 1; i < times_.size(); ++i)
    require(times_[i] > times_[i - 1], ErrorCode::InvalidArgument,
            "PhaseSeries: times must increase strictly");
}

PhaseSeries PhaseSeries::from_wrapped(std::vector<double> times, std::size_t components,
                                      std::vector<double> wrapped) {
  require(components >= 1 && wrapped.size() == times.size() * components,
          ErrorCode::InvalidArgument, "PhaseSeries: phase count does not match times x components");
  const std::size_t n = times.size();
  std::vector<double> col(n);
  for (std::size_t c = 0; c < components; ++c) {
    for (std::size_t i = 0; i < n; ++i) col[i] = wrapped[i * components + c];
    auto u = unwrap(col);
    for (std::size_t i = 0; i < n; ++i) wrapped[i * components + c] = u[i];
  }
  return PhaseSeries(std::move(times), components, std::move(wrapped));
}

std::vector<double> PhaseSeries::component(std::size_t c) const {
  require(c < components_, ErrorCode::InvalidArgument, "PhaseSeries: component out of range");
  std::vector<double> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = phase(i, c);
  return out;
}

std::vector<double> unwrap(std::span<const double> wrapped) {
  std::vector<double> out(wrapped.begin(), wrapped.end());
  for (std::size_t i = 1; i < out.size(); ++i)
    out[i] = out[i - 1] + std::remainder(wrapped[i] - wrapped[i - 1], kTwoPi);
  return out;
}

PhaseSeries sample_phases(const ode::Trajectory& traj, double t_begin, double dt,
                          std::size_t components, const PhaseExtractor& extract) {
  require(dt > 0 && !traj.empty(), ErrorCode::InvalidArgument,
          "sample_phases: need dt > 0 and a non-empty trajectory");
  require(t_begin >= traj.front_time() && t_begin <= traj.back_time(), ErrorCode::InvalidArgument,
          "sample_phases: start outside the trajectory");
  const auto count =
      static_cast<std::size_t>(std::floor((traj.back_time() - t_begin) / dt * (1 + 1e-12))) + 1;
  std::vector<double> times(count), wrapped(count * components), x(traj.dim());
  for (std::size_t i = 0; i < count; ++i) {
    const double t = std::min(t_begin + dt * static_cast<double>(i), traj.back_time());
    times[i] = t;
    traj.interpolate(t, x);
    extract(t, x, std::span<double>(wrapped.data() + i * components, components));
  }
  return PhaseSeries::from_wrapped(std::move(times), components, std::move(wrapped));
}

RotationEstimate rotation_number(const PhaseSeries& ps, std::size_t component,
                                 double discard_fraction) {
  require(discard_fraction >= 0 && discard_fraction < 0.5, ErrorCode::InvalidArgument,
          "rotation_number: discard_fraction must lie in [0, 0.5)");
  require(component < ps.components(), ErrorCode::InvalidArgument,
          "rotation_number: component out of range");
  const std::size_t start = discard_start(ps.size(), discard_fraction);
  const std::size_t n = ps.size() - start;
  require(ps.size() > start && n >= 16, ErrorCode::InsufficientData,
          "rotation_number: fewer than 16 samples after the transient");
  std::vector<double> t(ps.times().begin() + static_cast<long>(start), ps.times().end());
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = ps.phase(start + i, component);
  RotationEstimate est;
  est.rho = ls_slope(t, y) / kTwoPi;
  const std::size_t h = n / 2;
  const double s1 = ls_slope(std::span(t).subspan(0, h), std::span(y).subspan(0, h));
  const double s2 = ls_slope(std::span(t).subspan(h), std::span(y).subspan(h));
  est.error = std::abs(s1 - s2) / kTwoPi;
  return est;
}

std::optional<Locking> detect_mn_locking(const PhaseSeries& ps1, std::size_t c1,
                                         const PhaseSeries& ps2, std::size_t c2,
                                         const LockingOptions& opts) {
  require(opts.m_max >= 1 && opts.n_max >= 1 && opts.m_max <= 12 && opts.n_max <= 12,
          ErrorCode::InvalidArgument, "detect_mn_locking: m_max and n_max must lie in 1..12");
  require(ps1.size() == ps2.size(), ErrorCode::InvalidArgument,
          "detect_mn_locking: series must share a time grid");
  for (std::size_t i = 0; i < ps1.size(); ++i)
    require(std::abs(ps1.time(i) - ps2.time(i)) <= 1e-9 * (1 + std::abs(ps1.time(i))),
            ErrorCode::InvalidArgument, "detect_mn_locking: series must share a time grid");
  const std::size_t start = discard_start(ps1.size(), opts.discard_fraction);
  if (ps1.size() < start + 2) return std::nullopt;
  std::optional<Locking> best;
  for (int m = 1; m <= opts.m_max; ++m) {
    for (int n = 1; n <= opts.n_max; ++n) {
      if (std::gcd(m, n) != 1) continue;
      double lo = HUGE_VAL, hi = -HUGE_VAL;
      for (std::size_t i = start; i < ps1.size(); ++i) {
        const double psi = m * ps2.phase(i, c2) - n * ps1.phase(i, c1);
        lo = std::min(lo, psi);
        hi = std::max(hi, psi);
      }
      const double variation = hi - lo;
      if (!(variation < opts.bound)) continue;
      const bool better = !best || variation < 2 * best->residual - 1e-12 ||
                          (std::abs(variation - 2 * best->residual) <= 1e-12 &&
                           m + n < best->m + best->n);
      if (better) best = Locking{m, n, variation / 2};
    }
  }
  return best;
}

CollapseResult phase_collapse(const PhaseNormalSystem& sys, const TorusGraph* graph,
                              std::span<const double> phi0, const CollapseOptions& opts) {
  const std::size_t k = sys.phase_dim(), p = sys.normal_dim(), d = sys.forcing_dim();
  require(k == 1, ErrorCode::InvalidArgument, "phase_collapse: needs a single phase");
  require(opts.ring >= 32, ErrorCode::InvalidArgument, "phase_collapse: ring size must be >= 32");
  require(phi0.size() == d, ErrorCode::InvalidArgument,
          "phase_collapse: fiber needs one angle per forcing frequency");
  require(opts.horizon > 0, ErrorCode::InvalidArgument, "phase_collapse: horizon must be positive");
  if (p > 0) {
    require(graph != nullptr, ErrorCode::InvalidArgument,
            "phase_collapse: a graph is required when the chart has normal coordinates");
    require(graph->phase_dims() == k && graph->forcing_dims() == d && graph->normal_dim() == p,
            ErrorCode::InvalidArgument, "phase_collapse: graph does not match the chart");
  }
  const auto ext = sys.extended_system();
  ode::IntegrateOptions io;
  io.tol = opts.integrator_tol;
  ode::Propagator prop(ext, io);
  CollapseResult res;
  res.final_phases.resize(opts.ring);
  std::vector<double> z(k + p + d), ang(k + d);
  for (std::size_t i = 0; i < opts.ring; ++i) {
    z[0] = opts.offset + kTwoPi * static_cast<double>(i) / static_cast<double>(opts.ring);
    for (std::size_t j = 0; j < d; ++j) z[k + p + j] = phi0[j];
    if (p > 0) {
      ang[0] = z[0];
      for (std::size_t j = 0; j < d; ++j) ang[1 + j] = phi0[j];
      graph->evaluate(ang, std::span<double>(z.data() + k, p));
    }
    try {
      prop.advance(z, 0.0, opts.horizon, [&](double, std::span<const double> x, auto) {
        if (!sys.in_domain(x.subspan(k, p)))
          fail(ErrorCode::ChartEscape, "phase_collapse: left the chart domain");
      });
    } catch (const IntegrationError&) {
      throw;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Domain)
        fail(ErrorCode::ChartEscape, std::string("phase_collapse: ") + e.what());
      throw;
    }
    res.final_phases[i] = wrap_angle(z[0]);
  }

  std::vector<double> sorted = res.final_phases;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t K = sorted.size();
  std::vector<std::size_t> cuts;  // cluster starts after a large gap
  for (std::size_t i = 0; i < K; ++i) {
    const double next = i + 1 < K ? sorted[i + 1] : sorted[0] + kTwoPi;
    if (next - sorted[i] > opts.gap) cuts.push_back((i + 1) % K);
  }
  res.cluster_count = cuts.size();
  for (std::size_t c = 0; c < cuts.size(); ++c) {
    const std::size_t begin = cuts[c], end = cuts[(c + 1) % cuts.size()];
    double sx = 0, sy = 0;
    std::size_t i = begin;
    do {
      sx += std::cos(sorted[i]);
      sy += std::sin(sorted[i]);
      i = (i + 1) % K;
    } while (i != end);
    res.cluster_phases.push_back(wrap_angle(std::atan2(sy, sx)));
  }
  std::sort(res.cluster_phases.begin(), res.cluster_phases.end());
  return res;
}

TonguePoint tongue_point(const TongueScanOptions& opts, double delta, double k) {
  TonguePoint pt;
  pt.delta = delta;
  pt.k = k;
  const double W = opts.forcing_frequency;
  const std::size_t samples =
      static_cast<std::size_t>(std::floor(opts.horizon / opts.sample_dt)) + 1;
  std::vector<double> times(samples), osc(samples), forcing(samples), rel(samples);
  try {
    ode::IntegrateOptions io;
    io.tol = opts.integrator_tol;
    io.max_step = opts.sample_dt * 20;
    if (opts.family == TongueFamily::Adler) {
      models::AdlerParams ap;
      ap.delta = delta;
      ap.k = k;
      auto sys = models::adler(ap);
      auto traj = ode::integrate(sys, std::vector<double>{0.0}, 0.0, opts.horizon, io);
      for (std::size_t i = 0; i < samples; ++i) {
        const double t = std::min(opts.sample_dt * static_cast<double>(i), opts.horizon);
        times[i] = t;
        rel[i] = traj.at(t)[0];
        forcing[i] = W * t;
        osc[i] = forcing[i] + rel[i];
      }
    } else {
      models::PoincareParams pp = opts.poincare;
      pp.omega = W + delta;
      pp.gamma = k;
      pp.forcing = models::Forcing::SingleTone;
      pp.forcing_frequency = W;
      auto sys = models::poincare_cartesian(pp);
      auto traj = ode::integrate(sys, std::vector<double>{pp.a, 0.0}, 0.0, opts.horizon, io);
      std::vector<double> wrapped(samples);
      for (std::size_t i = 0; i < samples; ++i) {
        const double t = std::min(opts.sample_dt * static_cast<double>(i), opts.horizon);
        times[i] = t;
        auto x = traj.at(t);
        wrapped[i] = std::atan2(x[1], x[0]);
        forcing[i] = W * t;
      }
      osc = unwrap(wrapped);
      for (std::size_t i = 0; i < samples; ++i) rel[i] = osc[i] - forcing[i];
    }
    // Guard against duplicate final sample times.
    if (samples >= 2 && times[samples - 1] <= times[samples - 2]) {
      times.pop_back();
      osc.pop_back();
      forcing.pop_back();
      rel.pop_back();
    }
    PhaseSeries ps_osc(times, 1, osc), ps_force(times, 1, forcing), ps_rel(times, 1, rel);
    pt.rotation_osc = rotation_number(ps_osc, 0, opts.discard_fraction).rho;
    pt.rotation_forcing = rotation_number(ps_force, 0, opts.discard_fraction).rho;
    pt.rotation_relative = rotation_number(ps_rel, 0, opts.discard_fraction).rho;
    LockingOptions lo;
    lo.m_max = opts.m_max;
    lo.n_max = opts.n_max;
    lo.bound = opts.bound;
    lo.discard_fraction = opts.discard_fraction;
    // m * theta_osc - n * theta_forcing bounded: m oscillator cycles per n forcing cycles.
    pt.locking = detect_mn_locking(ps_force, 0, ps_osc, 0, lo);
  } catch (const Error& e) {
    pt.status = error_code_name(e.code());
  }
  return pt;
}

TongueGrid arnold_tongue_scan(const TongueScanOptions& opts) {
  require(opts.n_delta >= 1 && opts.n_k >= 1 && opts.n_delta <= 256 && opts.n_k <= 256,
          ErrorCode::InvalidArgument, "arnold_tongue_scan: resolution must lie in 1..256 per axis");
  require(opts.horizon > 0 && std::isfinite(opts.horizon) && opts.sample_dt > 0,
          ErrorCode::InvalidArgument, "arnold_tongue_scan: horizon and sample_dt must be positive");
  require(opts.delta_max >= opts.delta_min && opts.k_max >= opts.k_min,
          ErrorCode::InvalidArgument, "arnold_tongue_scan: empty parameter range");
  auto axis = [](double lo, double hi, std::size_t n, std::size_t i) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  TongueGrid grid;
  grid.n_delta = opts.n_delta;
  grid.n_k = opts.n_k;
  grid.points.resize(opts.n_delta * opts.n_k);
  detail::parallel_for(grid.points.size(), opts.threads, [&](std::size_t i, std::size_t) {
    const std::size_t ik = i / opts.n_delta, id = i % opts.n_delta;
    grid.points[i] = tongue_point(opts, axis(opts.delta_min, opts.delta_max, opts.n_delta, id),
                                  axis(opts.k_min, opts.k_max, opts.n_k, ik));
  });
  return grid;
}

std::string TongueGrid::to_csv() const {
  std::ostringstream os;
  os << "delta,k,m,n,residual,rotation_osc,rotation_forcing,rotation_relative,status\n";
  for (const auto& p : points) {
    os << format_double(p.delta) << ',' << format_double(p.k) << ',';
    if (p.locking) {
      os << p.locking->m << ',' << p.locking->n << ',' << format_double(p.locking->residual);
    } else {
      os << "0,0,";
    }
    os << ',' << format_double(p.rotation_osc) << ',' << format_double(p.rotation_forcing) << ','
       << format_double(p.rotation_relative) << ',' << p.status << '\n';
  }
  return os.str();
}

const char* attract_verdict_name(AttractVerdict v) noexcept {
  switch (v) {
    case AttractVerdict::Attracting: return "attracting";
    case AttractVerdict::NotUniformlyAttracting: return "not-uniformly-attracting";
    case AttractVerdict::NoCommonLimit: return "no-common-limit";
  }
  return "unknown";
}

AttractResult attracting_trajectory(const ode::SystemSpec& sys,
                                    const std::vector<std::vector<double>>& candidates,
                                    double t0, double horizon, const AttractOptions& opts) {
  require(!candidates.empty(), ErrorCode::InvalidArgument, "attracting_trajectory: no candidates");
  require(horizon > 0 && opts.window > 0 && opts.window <= horizon, ErrorCode::InvalidArgument,
          "attracting_trajectory: need 0 < window <= horizon");
  const std::size_t n = sys.dim();
  for (const auto& c : candidates)
    require(c.size() == n, ErrorCode::InvalidArgument,
            "attracting_trajectory: candidate dimension mismatch");

  // State plus fundamental matrix over one window.
  ode::SystemSpec var(n + n * n, [&sys, n](double t, std::span<const double> z, std::span<double> dz) {
    thread_local std::vector<double> J;
    J.resize(n * n);
    sys.eval(t, z.subspan(0, n), dz.subspan(0, n));
    sys.jacobian(t, z.subspan(0, n), J);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double v = 0;
        for (std::size_t l = 0; l < n; ++l) v += J[i * n + l] * z[n + l * n + j];
        dz[n + i * n + j] = v;
      }
  });
  ode::IntegrateOptions io;
  io.tol = opts.integrator_tol;
  ode::Propagator prop(var, io);

  const auto windows = static_cast<std::size_t>(std::floor(horizon / opts.window + 1e-9));
  AttractResult res;
  res.exponent = -HUGE_VAL;
  bool sign_change = false;
  std::vector<std::vector<double>> finals;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<double> z(n + n * n);
    std::copy(candidates[c].begin(), candidates[c].end(), z.begin());
    double t = t0;
    for (std::size_t w = 0; w < windows; ++w) {
      std::fill(z.begin() + static_cast<long>(n), z.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) z[n + i * n + i] = 1.0;
      prop.advance(z, t, t + opts.window);
      t += opts.window;
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Phi(
          z.data() + n, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(Phi);
      const double lam = std::log(svd.singularValues()(0)) / opts.window;
      if (c == 0) res.window_exponents.push_back(lam);
      res.exponent = std::max(res.exponent, lam);
      if (lam > -opts.margin) sign_change = true;
    }
    finals.emplace_back(z.begin(), z.begin() + static_cast<long>(n));
  }
  if (sign_change) {
    res.verdict = AttractVerdict::NotUniformlyAttracting;
    return res;
  }
  for (std::size_t c = 1; c < finals.size(); ++c) {
    double dist = 0, scale = 1;
    for (std::size_t i = 0; i < n; ++i) {
      dist = std::max(dist, std::abs(finals[c][i] - finals[0][i]));
      scale = std::max(scale, std::abs(finals[0][i]));
    }
    if (dist > opts.convergence_tol * scale) {
      res.verdict = AttractVerdict::NoCommonLimit;
      return res;
    }
  }
  res.verdict = AttractVerdict::Attracting;
  res.trajectory = ode::integrate(sys, candidates[0], t0, t0 + windows * opts.window, io);
  return res;
}

}  // namespace nhsync
