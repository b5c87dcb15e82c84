#include "nhsync/ode.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "nhsync/error.hpp"

namespace nhsync::ode {

SystemSpec::SystemSpec(std::size_t dim, Field field, Jacobian jacobian,
                       std::vector<double> forcing_frequencies)
    : dim_(dim),
      field_(std::move(field)),
      jacobian_(std::move(jacobian)),
      forcing_frequencies_(std::move(forcing_frequencies)) {
  require(dim_ > 0, ErrorCode::InvalidArgument, "SystemSpec: dimension must be positive");
  require(static_cast<bool>(field_), ErrorCode::InvalidArgument, "SystemSpec: empty field");
}

void SystemSpec::eval(double t, std::span<const double> x, std::span<double> dxdt) const {
  field_(t, x, dxdt);
}

Vec SystemSpec::eval(double t, std::span<const double> x) const {
  Vec out(dim_);
  field_(t, x, out);
  return out;
}

void SystemSpec::jacobian(double t, std::span<const double> x, std::span<double> jac) const {
  if (jacobian_) {
    jacobian_(t, x, jac);
  } else {
    fd_jacobian(t, x, jac);
  }
}

Vec SystemSpec::jacobian(double t, std::span<const double> x) const {
  Vec out(dim_ * dim_);
  jacobian(t, x, out);
  return out;
}

void SystemSpec::fd_jacobian(double t, std::span<const double> x, std::span<double> jac,
                             double h_override) const {
  Vec xp(x.begin(), x.end());
  Vec fp(dim_), fm(dim_);
  for (std::size_t j = 0; j < dim_; ++j) {
    const double h = h_override > 0.0 ? h_override : std::max(1e-6, 1e-6 * std::abs(x[j]));
    xp[j] = x[j] + h;
    field_(t, xp, fp);
    xp[j] = x[j] - h;
    field_(t, xp, fm);
    xp[j] = x[j];
    for (std::size_t i = 0; i < dim_; ++i) jac[i * dim_ + j] = (fp[i] - fm[i]) / (2.0 * h);
  }
}

SystemSpec& SystemSpec::set_nonsmooth_flag(Flag flag) {
  nonsmooth_ = std::move(flag);
  return *this;
}

bool SystemSpec::is_nonsmooth(double t, std::span<const double> x) const {
  return nonsmooth_ ? nonsmooth_(t, x) : false;
}

// ---------------------------------------------------------------------------

void Trajectory::push(double t, std::span<const double> x, std::span<const double> dxdt) {
  require(x.size() == dim_ && dxdt.size() == dim_, ErrorCode::InvalidArgument,
          "Trajectory::push: dimension mismatch");
  require(times_.empty() || t > times_.back(), ErrorCode::InvalidArgument,
          "Trajectory::push: times must be strictly increasing");
  times_.push_back(t);
  states_.insert(states_.end(), x.begin(), x.end());
  derivs_.insert(derivs_.end(), dxdt.begin(), dxdt.end());
}

void Trajectory::reserve(std::size_t n) {
  times_.reserve(n);
  states_.reserve(n * dim_);
  derivs_.reserve(n * dim_);
}

std::span<const double> Trajectory::state(std::size_t i) const {
  return {states_.data() + i * dim_, dim_};
}

std::span<const double> Trajectory::derivative(std::size_t i) const {
  return {derivs_.data() + i * dim_, dim_};
}

std::size_t Trajectory::locate(double t) const {
  require(!times_.empty(), ErrorCode::Domain, "Trajectory: empty");
  require(t >= times_.front() && t <= times_.back(), ErrorCode::Domain,
          "Trajectory: time outside recorded span");
  if (times_.size() == 1) return 0;
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  std::size_t i = static_cast<std::size_t>(it - times_.begin());
  if (i == 0) return 0;
  return std::min(i - 1, times_.size() - 2);
}

void Trajectory::interpolate(double t, std::span<double> out) const {
  const std::size_t i = locate(t);
  if (times_.size() == 1 || t == times_[i]) {
    std::copy_n(state(i).begin(), dim_, out.begin());
    return;
  }
  if (t == times_[i + 1]) {
    std::copy_n(state(i + 1).begin(), dim_, out.begin());
    return;
  }
  const double h = times_[i + 1] - times_[i];
  const double s = (t - times_[i]) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  auto x0 = state(i), x1 = state(i + 1), d0 = derivative(i), d1 = derivative(i + 1);
  for (std::size_t j = 0; j < dim_; ++j)
    out[j] = h00 * x0[j] + h10 * h * d0[j] + h01 * x1[j] + h11 * h * d1[j];
}

Vec Trajectory::at(double t) const {
  Vec out(dim_);
  interpolate(t, out);
  return out;
}

void Trajectory::interpolate_derivative(double t, std::span<double> out) const {
  const std::size_t i = locate(t);
  if (times_.size() == 1) {
    std::copy_n(derivative(0).begin(), dim_, out.begin());
    return;
  }
  const double h = times_[i + 1] - times_[i];
  const double s = (t - times_[i]) / h;
  const double s2 = s * s;
  const double g00 = (6 * s2 - 6 * s) / h, g10 = 3 * s2 - 4 * s + 1;
  const double g01 = (-6 * s2 + 6 * s) / h, g11 = 3 * s2 - 2 * s;
  auto x0 = state(i), x1 = state(i + 1), d0 = derivative(i), d1 = derivative(i + 1);
  for (std::size_t j = 0; j < dim_; ++j)
    out[j] = g00 * x0[j] + g10 * d0[j] + g01 * x1[j] + g11 * d1[j];
}

Trajectory Trajectory::from_reversed(std::size_t dim, std::vector<double> times,
                                     std::vector<double> states, std::vector<double> derivs) {
  Trajectory traj(dim);
  const std::size_t n = times.size();
  traj.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = n - 1 - r;
    traj.push(times[i], std::span<const double>(states.data() + i * dim, dim),
              std::span<const double>(derivs.data() + i * dim, dim));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4) tableau.

namespace {

constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

Propagator::Propagator(const SystemSpec& sys, IntegrateOptions opts)
    : sys_(&sys), opts_(opts) {
  require(opts_.tol > 1e-14 && opts_.tol < 1e-2, ErrorCode::InvalidArgument,
          "integrate: tol must lie in (1e-14, 1e-2)");
  const std::size_t n = sys.dim();
  k_.assign(7 * n, 0.0);
  tmp_.assign(n, 0.0);
  xnew_.assign(n, 0.0);
  err_.assign(n, 0.0);
}

void Propagator::check_finite(std::span<const double> v, double t, const char* what) const {
  for (double e : v) {
    if (!std::isfinite(e)) {
      std::ostringstream os;
      os << "non-finite " << what << " at t=" << t;
      throw IntegrationError(ErrorCode::NaNFailure, os.str(), t);
    }
  }
}

double Propagator::initial_step(double t0, std::span<const double> x, std::span<const double> f0,
                                double direction) const {
  const std::size_t n = x.size();
  double d0 = 0, d1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sc = opts_.tol * (1.0 + std::abs(x[i]));
    d0 = std::max(d0, std::abs(x[i]) / sc);
    d1 = std::max(d1, std::abs(f0[i]) / sc);
  }
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, opts_.max_step);
  Vec x1(n), f1(n);
  for (std::size_t i = 0; i < n; ++i) x1[i] = x[i] + direction * h0 * f0[i];
  sys_->eval(t0 + direction * h0, x1, f1);
  double d2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sc = opts_.tol * (1.0 + std::abs(x[i]));
    d2 = std::max(d2, std::abs(f1[i] - f0[i]) / sc);
  }
  d2 /= h0;
  const double dm = std::max(d1, d2);
  const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
  return std::min({100.0 * h0, h1, opts_.max_step});
}

std::size_t Propagator::advance(std::span<double> x, double t0, double t1,
                                const Observer& observer) {
  const std::size_t n = sys_->dim();
  require(x.size() == n, ErrorCode::InvalidArgument, "integrate: state dimension mismatch");
  check_finite(x, t0, "initial state");

  double* k1 = k_.data();
  double* k2 = k1 + n;
  double* k3 = k2 + n;
  double* k4 = k3 + n;
  double* k5 = k4 + n;
  double* k6 = k5 + n;
  double* k7 = k6 + n;

  sys_->eval(t0, x, std::span<double>(k1, n));
  check_finite(std::span<const double>(k1, n), t0, "field value");
  if (observer) observer(t0, x, std::span<const double>(k1, n));
  if (t0 == t1) return 0;

  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span_len = std::abs(t1 - t0);
  double h = opts_.initial_step > 0 ? opts_.initial_step : initial_step(t0, x, {k1, n}, dir);
  h = std::min(h, span_len);
  double t = t0;
  std::size_t steps = 0;
  bool last_rejected = false;

  auto stage = [&](double* out, double tt) {
    sys_->eval(tt, tmp_, std::span<double>(out, n));
  };

  while (dir * (t1 - t) > 0) {
    if (steps >= opts_.max_steps) {
      throw IntegrationError(ErrorCode::IntegrationFailure,
                             "integrate: maximum number of steps exceeded", t);
    }
    const double remaining = std::abs(t1 - t);
    bool final_step = false;
    if (h >= remaining * (1.0 - 1e-12)) {
      h = remaining;
      final_step = true;
    }
    const double min_h = 16.0 * std::numeric_limits<double>::epsilon() *
                         std::max(1.0, std::abs(t));
    if (h < min_h) {
      std::ostringstream os;
      os << "integrate: step size underflow at t=" << t;
      throw IntegrationError(ErrorCode::IntegrationFailure, os.str(), t);
    }
    const double hs = dir * h;

    for (std::size_t i = 0; i < n; ++i) tmp_[i] = x[i] + hs * a21 * k1[i];
    stage(k2, t + c2 * hs);
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = x[i] + hs * (a31 * k1[i] + a32 * k2[i]);
    stage(k3, t + c3 * hs);
    for (std::size_t i = 0; i < n; ++i)
      tmp_[i] = x[i] + hs * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    stage(k4, t + c4 * hs);
    for (std::size_t i = 0; i < n; ++i)
      tmp_[i] = x[i] + hs * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    stage(k5, t + c5 * hs);
    for (std::size_t i = 0; i < n; ++i)
      tmp_[i] = x[i] + hs * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                             a65 * k5[i]);
    stage(k6, t + hs);
    for (std::size_t i = 0; i < n; ++i)
      xnew_[i] = x[i] + hs * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
    const double tnew = final_step ? t1 : t + hs;
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = xnew_[i];
    stage(k7, tnew);

    double err = 0.0;
    bool finite = true;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = hs * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                             e7 * k7[i]);
      const double sc = opts_.tol * (1.0 + std::max(std::abs(x[i]), std::abs(xnew_[i])));
      if (!std::isfinite(e) || !std::isfinite(xnew_[i]) || !std::isfinite(k7[i])) finite = false;
      err = std::max(err, std::abs(e) / sc);
    }
    if (!finite) {
      // A non-finite trial may only mean the step was too large; shrink
      // until the step itself underflows.
      h *= 0.1;
      last_rejected = true;
      if (h < min_h) {
        std::ostringstream os;
        os << "integrate: non-finite field value near t=" << t;
        throw IntegrationError(ErrorCode::NaNFailure, os.str(), t);
      }
      continue;
    }

    if (err <= 1.0) {
      t = tnew;
      std::copy(xnew_.begin(), xnew_.end(), x.begin());
      std::copy_n(k7, n, k1);
      ++steps;
      if (observer) observer(t, x, std::span<const double>(k1, n));
      double fac = err == 0.0 ? 5.0 : 0.9 * std::pow(err, -0.2);
      fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 5.0);
      h = std::min(h * fac, opts_.max_step);
      last_rejected = false;
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
      last_rejected = true;
    }
  }
  return steps;
}

Trajectory integrate(const SystemSpec& sys, std::span<const double> x0, double t0, double t1,
                     double tol) {
  IntegrateOptions opts;
  opts.tol = tol;
  return integrate(sys, x0, t0, t1, opts);
}

Trajectory integrate(const SystemSpec& sys, std::span<const double> x0, double t0, double t1,
                     const IntegrateOptions& opts) {
  const std::size_t n = sys.dim();
  Propagator prop(sys, opts);
  Vec x(x0.begin(), x0.end());
  if (t1 >= t0) {
    Trajectory traj(n);
    prop.advance(x, t0, t1, [&](double t, std::span<const double> s, std::span<const double> d) {
      traj.push(t, s, d);
    });
    return traj;
  }
  std::vector<double> times, states, derivs;
  prop.advance(x, t0, t1, [&](double t, std::span<const double> s, std::span<const double> d) {
    times.push_back(t);
    states.insert(states.end(), s.begin(), s.end());
    derivs.insert(derivs.end(), d.begin(), d.end());
  });
  return Trajectory::from_reversed(n, std::move(times), std::move(states), std::move(derivs));
}

Vec propagate(const SystemSpec& sys, std::span<const double> x0, double t0, double t1,
              const IntegrateOptions& opts) {
  Propagator prop(sys, opts);
  Vec x(x0.begin(), x0.end());
  prop.advance(x, t0, t1);
  return x;
}

// ---------------------------------------------------------------------------

double orthonormalize(std::span<double> vectors, std::size_t dim, std::size_t k,
                      std::span<double> log_diag) {
  auto vec = [&](std::size_t j) { return vectors.subspan(j * dim, dim); };
  auto dot = [&](std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < dim; ++i) s += a[i] * b[i];
    return s;
  };
  for (std::size_t j = 0; j < k; ++j) {
    auto v = vec(j);
    // Two passes of MGS projection; R_jj comes from the norm after both.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < j; ++i) {
        auto q = vec(i);
        const double r = dot(q, v);
        for (std::size_t c = 0; c < dim; ++c) v[c] -= r * q[c];
      }
    }
    const double norm = std::sqrt(dot(v, v));
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw Error(ErrorCode::InternalConsistency, "tangent frame collapsed during QR");
    }
    log_diag[j] = std::log(norm);
    for (std::size_t c = 0; c < dim; ++c) v[c] /= norm;
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a; b < k; ++b) {
      const double g = dot(vec(a), vec(b)) - (a == b ? 1.0 : 0.0);
      worst = std::max(worst, std::abs(g));
    }
  }
  return worst;
}

std::vector<double> TangentResult::exponents() const {
  std::vector<double> out(log_growth.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_growth[i] / duration;
  return out;
}

TangentResult integrate_with_tangents(const SystemSpec& sys, std::span<const double> x0,
                                      std::span<const double> frame0, std::size_t k, double t0,
                                      double t1, double renorm_interval,
                                      const TangentOptions& opts) {
  const std::size_t n = sys.dim();
  require(t1 > t0, ErrorCode::InvalidArgument, "integrate_with_tangents: need t1 > t0");
  require(renorm_interval > 0, ErrorCode::InvalidArgument,
          "integrate_with_tangents: renorm_interval must be positive");
  require(k >= 1 && k <= n && frame0.size() == k * n, ErrorCode::InvalidArgument,
          "integrate_with_tangents: frame must hold k <= dim vectors of length dim");
  require(x0.size() == n, ErrorCode::InvalidArgument, "integrate_with_tangents: bad state");
  {
    double worst = 0;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a; b < k; ++b) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += frame0[a * n + i] * frame0[b * n + i];
        worst = std::max(worst, std::abs(s - (a == b ? 1.0 : 0.0)));
      }
    require(worst <= 1e-8, ErrorCode::InvalidArgument,
            "integrate_with_tangents: initial frame is not orthonormal");
  }

  const std::size_t total = n + n * k;
  auto jac = std::make_shared<Vec>(n * n);
  SystemSpec augmented(
      total, [&sys, n, k, jac](double t, std::span<const double> z, std::span<double> dz) {
        auto x = z.first(n);
        sys.eval(t, x, dz.first(n));
        sys.jacobian(t, x, *jac);
        const Vec& J = *jac;
        for (std::size_t v = 0; v < k; ++v) {
          const double* dv = z.data() + n + v * n;
          double* out = dz.data() + n + v * n;
          for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += J[i * n + j] * dv[j];
            out[i] = s;
          }
        }
      });

  IntegrateOptions iopts;
  iopts.tol = opts.tol;
  Propagator prop(augmented, iopts);

  Vec z(total);
  std::copy(x0.begin(), x0.end(), z.begin());
  std::copy(frame0.begin(), frame0.end(), z.begin() + static_cast<std::ptrdiff_t>(n));

  TangentResult result{Trajectory(n), std::vector<double>(k, 0.0), {}, t1 - t0};
  Vec log_diag(k);
  Vec fx(n);
  Propagator::Observer obs;
  if (opts.record) {
    obs = [&](double t, std::span<const double> s, std::span<const double> d) {
      if (!result.trajectory.empty() && t <= result.trajectory.back_time()) return;
      result.trajectory.push(t, s.first(n), d.first(n));
    };
  }

  double t = t0;
  while (t < t1) {
    const double tn = std::min(t1, t + renorm_interval);
    prop.advance(z, t, tn, obs);
    auto frame = std::span<double>(z).subspan(n);
    const double defect = orthonormalize(frame, n, k, log_diag);
    if (defect > 1e-6) {
      throw Error(ErrorCode::InternalConsistency,
                  "integrate_with_tangents: orthogonality lost after re-QR");
    }
    for (std::size_t v = 0; v < k; ++v) result.log_growth[v] += log_diag[v];
    t = tn;
  }
  result.frame.assign(z.begin() + static_cast<std::ptrdiff_t>(n), z.end());
  return result;
}

std::vector<double> lyapunov_exponents(const SystemSpec& sys, std::span<const double> x0,
                                       std::size_t k, double t0, double t1,
                                       double renorm_interval, double tol,
                                       std::uint64_t seed) {
  const std::size_t n = sys.dim();
  // Seeded generic orthonormal frame.
  Vec frame(k * n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (double& v : frame) v = nd(rng);
  Vec log_diag(k);
  orthonormalize(frame, n, k, log_diag);
  orthonormalize(frame, n, k, log_diag);
  TangentOptions opts;
  opts.tol = tol;
  opts.record = false;
  return integrate_with_tangents(sys, x0, frame, k, t0, t1, renorm_interval, opts).exponents();
}

double jacobian_check(const SystemSpec& sys, std::span<const double> x, double t, double h) {
  require(h > 1e-9 && h < 1e-3, ErrorCode::InvalidArgument,
          "jacobian_check: h must lie in (1e-9, 1e-3)");
  const std::size_t n = sys.dim();
  Vec analytic(n * n), fd(n * n);
  sys.jacobian(t, x, analytic);
  sys.fd_jacobian(t, x, fd, h);
  double worst = 0;
  for (std::size_t i = 0; i < n * n; ++i) worst = std::max(worst, std::abs(analytic[i] - fd[i]));
  return worst;
}

}  // namespace nhsync::ode
