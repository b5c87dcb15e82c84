#pragma once

// Non-autonomous ODE integration in extended state space: Dormand-Prince 5(4)
// with cubic Hermite dense output, variational (tangent) propagation with
// periodic QR re-orthonormalisation, and a finite-difference Jacobian check.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace nhsync::ode {

using Vec = std::vector<double>;

class SystemSpec {
 public:
  using Field = std::function<void(double t, std::span<const double> x, std::span<double> dxdt)>;
  // Row-major dim x dim, jac[i*dim + j] = d f_i / d x_j.
  using Jacobian = std::function<void(double t, std::span<const double> x, std::span<double> jac)>;
  using Flag = std::function<bool(double t, std::span<const double> x)>;

  SystemSpec(std::size_t dim, Field field, Jacobian jacobian = {},
             std::vector<double> forcing_frequencies = {});

  std::size_t dim() const noexcept { return dim_; }
  const std::vector<double>& forcing_frequencies() const noexcept { return forcing_frequencies_; }
  bool has_analytic_jacobian() const noexcept { return static_cast<bool>(jacobian_); }

  void eval(double t, std::span<const double> x, std::span<double> dxdt) const;
  Vec eval(double t, std::span<const double> x) const;

  // Analytic Jacobian when present, otherwise central differences with
  // h_i = max(1e-6, 1e-6 |x_i|).
  void jacobian(double t, std::span<const double> x, std::span<double> jac) const;
  Vec jacobian(double t, std::span<const double> x) const;
  void fd_jacobian(double t, std::span<const double> x, std::span<double> jac,
                   double h_override = 0.0) const;

  // Marks points where the field is continuous but not differentiable.
  SystemSpec& set_nonsmooth_flag(Flag flag);
  bool is_nonsmooth(double t, std::span<const double> x) const;

 private:
  std::size_t dim_;
  Field field_;
  Jacobian jacobian_;
  Flag nonsmooth_;
  std::vector<double> forcing_frequencies_;
};

// Time-ordered record of accepted steps. States and derivatives are stored so
// the interpolant is the cubic Hermite spline through them.
class Trajectory {
 public:
  explicit Trajectory(std::size_t dim = 0) : dim_(dim) {}

  void push(double t, std::span<const double> x, std::span<const double> dxdt);
  void reserve(std::size_t n);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return times_.size(); }
  bool empty() const noexcept { return times_.empty(); }

  const std::vector<double>& times() const noexcept { return times_; }
  double time(std::size_t i) const { return times_[i]; }
  double front_time() const { return times_.front(); }
  double back_time() const { return times_.back(); }
  std::span<const double> state(std::size_t i) const;
  std::span<const double> derivative(std::size_t i) const;
  std::span<const double> front_state() const { return state(0); }
  std::span<const double> back_state() const { return state(size() - 1); }

  // Index of the step interval [t_i, t_{i+1}] containing t.
  std::size_t locate(double t) const;

  void interpolate(double t, std::span<double> out) const;
  Vec at(double t) const;
  void interpolate_derivative(double t, std::span<double> out) const;

  // Builds a trajectory from data recorded in decreasing time order.
  static Trajectory from_reversed(std::size_t dim, std::vector<double> times,
                                  std::vector<double> states, std::vector<double> derivs);

 private:
  std::size_t dim_;
  std::vector<double> times_;
  std::vector<double> states_;
  std::vector<double> derivs_;
};

struct IntegrateOptions {
  double tol = 1e-8;
  double max_step = std::numeric_limits<double>::infinity();
  double initial_step = 0.0;  // 0 selects automatically
  std::size_t max_steps = 50'000'000;
};

// Reusable stepper. Holds a reference to the system, which must outlive it.
class Propagator {
 public:
  using Observer = std::function<void(double t, std::span<const double> x, std::span<const double> dxdt)>;

  Propagator(const SystemSpec& sys, IntegrateOptions opts);

  // Advances x in place from t0 to t1 (either direction). Returns the number
  // of accepted steps. The observer, if set, sees the initial point and every
  // accepted step.
  std::size_t advance(std::span<double> x, double t0, double t1, const Observer& observer = {});

  const IntegrateOptions& options() const noexcept { return opts_; }

 private:
  double initial_step(double t0, std::span<const double> x, std::span<const double> f0,
                      double direction) const;
  void check_finite(std::span<const double> v, double t, const char* what) const;

  const SystemSpec* sys_;
  IntegrateOptions opts_;
  std::vector<double> k_;  // 7 stages
  std::vector<double> tmp_, xnew_, err_;
};

Trajectory integrate(const SystemSpec& sys, std::span<const double> x0, double t0, double t1,
                     double tol);
Trajectory integrate(const SystemSpec& sys, std::span<const double> x0, double t0, double t1,
                     const IntegrateOptions& opts);

// Final state only.
Vec propagate(const SystemSpec& sys, std::span<const double> x0, double t0, double t1,
              const IntegrateOptions& opts);

struct TangentResult {
  Trajectory trajectory;
  std::vector<double> log_growth;  // accumulated log R_ii per vector
  std::vector<double> frame;       // final orthonormal frame, vector-major (k x dim)
  double duration = 0.0;

  std::vector<double> exponents() const;
};

struct TangentOptions {
  double tol = 1e-9;
  bool record = true;  // keep the base trajectory
};

// frame0 holds k orthonormal vectors of length dim, stored one after another.
TangentResult integrate_with_tangents(const SystemSpec& sys, std::span<const double> x0,
                                      std::span<const double> frame0, std::size_t k, double t0,
                                      double t1, double renorm_interval,
                                      const TangentOptions& opts = {});

// Leading k Lyapunov exponents from a seeded random orthonormal frame.
std::vector<double> lyapunov_exponents(const SystemSpec& sys, std::span<const double> x0,
                                       std::size_t k, double t0, double t1,
                                       double renorm_interval, double tol = 1e-9,
                                       std::uint64_t seed = 0x5eed);

// Max elementwise |J_analytic - J_central(h)|.
double jacobian_check(const SystemSpec& sys, std::span<const double> x, double t, double h);

// Modified Gram-Schmidt (applied twice) on k vectors stored vector-major.
// Writes log|R_ii| into log_diag and returns max |Q^T Q - I|.
double orthonormalize(std::span<double> vectors, std::size_t dim, std::size_t k,
                      std::span<double> log_diag);

}  // namespace nhsync::ode
