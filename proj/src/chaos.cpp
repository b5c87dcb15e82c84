#include "nhsync/chaos.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "nhsync/error.hpp"

namespace nhsync {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

void SectionSpec::validate(std::size_t dim) const {
  require(normal.size() == dim, ErrorCode::InvalidArgument,
          "SectionSpec: normal has the wrong dimension");
  require(std::any_of(normal.begin(), normal.end(), [](double v) { return v != 0.0; }),
          ErrorCode::InvalidArgument, "SectionSpec: normal must be nonzero");
  require(std::all_of(normal.begin(), normal.end(), [](double v) { return std::isfinite(v); }) &&
              std::isfinite(offset),
          ErrorCode::InvalidArgument, "SectionSpec: non-finite plane");
  require(half_normal.empty() || half_normal.size() == dim, ErrorCode::InvalidArgument,
          "SectionSpec: half_normal has the wrong dimension");
}

SectionSpec rossler_section() {
  SectionSpec s;
  s.normal = {0.0, 1.0, 0.0};
  s.offset = 0.0;
  s.direction = CrossingDirection::Positive;
  s.half_normal = {1.0, 0.0, 0.0};
  s.half_offset = 0.0;
  return s;
}

std::vector<Crossing> section_crossings(const ode::Trajectory& traj, const SectionSpec& sec) {
  sec.validate(traj.dim());
  std::vector<Crossing> out;
  if (traj.size() < 2) return out;
  const bool want_pos = sec.direction != CrossingDirection::Negative;
  const bool want_neg = sec.direction != CrossingDirection::Positive;
  auto g_at = [&](std::span<const double> x) { return dot(sec.normal, x) - sec.offset; };

  std::vector<double> x(traj.dim());
  double g0 = g_at(traj.state(0));
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    const double g1 = g_at(traj.state(i + 1));
    const bool pos = g0 < 0.0 && g1 >= 0.0;
    const bool neg = g0 > 0.0 && g1 <= 0.0;
    if ((pos && want_pos) || (neg && want_neg)) {
      double lo = traj.time(i), hi = traj.time(i + 1);
      double glo = g0;
      while (hi - lo > 1e-12 * std::max(1.0, std::abs(hi))) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        traj.interpolate(mid, x);
        const double gm = g_at(x);
        if ((gm < 0.0) == (glo < 0.0) && gm != 0.0) {
          lo = mid;
          glo = gm;
        } else {
          hi = mid;
        }
      }
      const double tc = 0.5 * (lo + hi);
      traj.interpolate(tc, x);
      if (sec.half_normal.empty() || dot(sec.half_normal, x) > sec.half_offset) {
        out.push_back({tc, x});
      }
    }
    g0 = g1;
  }
  return out;
}

std::vector<double> crossing_times(const std::vector<Crossing>& crossings) {
  std::vector<double> t;
  t.reserve(crossings.size());
  for (const auto& c : crossings) t.push_back(c.time);
  return t;
}

CoherenceReport coherence(std::span<const double> times) {
  require(times.size() >= 11, ErrorCode::InsufficientData,
          "coherence: fewer than 10 return intervals");
  std::vector<double> dt(times.size() - 1);
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    dt[i] = times[i + 1] - times[i];
    require(dt[i] > 0.0, ErrorCode::InvalidArgument,
            "coherence: crossing times must be strictly increasing");
  }
  CoherenceReport r;
  r.count = dt.size();
  r.c = std::accumulate(dt.begin(), dt.end(), 0.0) / static_cast<double>(r.count);
  double ss = 0;
  for (double d : dt) ss += (d - r.c) * (d - r.c);
  r.spread = std::sqrt(ss / static_cast<double>(r.count));
  r.coherence_index = r.spread / r.c;
  return r;
}

double chaotic_phase(std::span<const double> times, double t) {
  require(times.size() >= 2, ErrorCode::InsufficientData,
          "chaotic_phase: need at least two crossings");
  require(t >= times.front() && t <= times.back(), ErrorCode::Domain,
          "chaotic_phase: query outside the crossing span");
  auto it = std::upper_bound(times.begin(), times.end(), t);
  std::size_t k = static_cast<std::size_t>(it - times.begin());
  k = std::min(k == 0 ? 0 : k - 1, times.size() - 2);
  const double frac = (t - times[k]) / (times[k + 1] - times[k]);
  return kTwoPi * (static_cast<double>(k) + frac);
}

SyncReport chaos_locking(const ode::SystemSpec& sys, double forcing_frequency,
                         const SectionSpec& sec, std::span<const double> x0,
                         const ChaosLockingOptions& opts) {
  require(x0.size() == sys.dim(), ErrorCode::InvalidArgument,
          "chaos_locking: initial state has the wrong dimension");
  require(opts.transient >= 0.0 && opts.horizon > 0.0 && opts.sample_dt > 0.0,
          ErrorCode::InvalidArgument, "chaos_locking: invalid time parameters");
  require(std::isfinite(forcing_frequency), ErrorCode::InvalidArgument,
          "chaos_locking: forcing frequency must be finite");
  sec.validate(sys.dim());

  ode::IntegrateOptions io;
  io.tol = opts.integrator_tol;
  const double t0 = opts.transient, t1 = opts.transient + opts.horizon;
  ode::Vec xs = ode::propagate(sys, x0, 0.0, t0, io);
  const ode::Trajectory traj = ode::integrate(sys, xs, t0, t1, io);
  const std::vector<double> tc = crossing_times(section_crossings(traj, sec));
  require(tc.size() >= 2, ErrorCode::InsufficientData,
          "chaos_locking: fewer than two section crossings");

  std::vector<double> times;
  std::vector<double> phases;
  for (std::size_t i = 0;; ++i) {
    const double t = tc.front() + static_cast<double>(i) * opts.sample_dt;
    if (t > tc.back()) break;
    times.push_back(t);
    phases.push_back(forcing_frequency * t);
    phases.push_back(chaotic_phase(tc, t));
  }
  const PhaseSeries ps(std::move(times), 2, std::move(phases));

  SyncReport rep;
  rep.rotation_numbers.push_back(rotation_number(ps, 1, opts.locking.discard_fraction));
  rep.rotation_numbers.push_back(rotation_number(ps, 0, opts.locking.discard_fraction));
  rep.locking = detect_mn_locking(ps, 0, ps, 1, opts.locking);
  if (opts.lyapunov) {
    rep.lyapunov = ode::lyapunov_exponents(sys, xs, 1, t0, t1, opts.lyapunov_renorm,
                                           opts.integrator_tol);
  }
  return rep;
}

}  // namespace nhsync
