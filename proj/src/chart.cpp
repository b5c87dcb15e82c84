#include "nhsync/chart.hpp"

#include <algorithm>
#include <cmath>

#include "nhsync/error.hpp"

namespace nhsync {

PhaseNormalSystem::PhaseNormalSystem(std::size_t phase_dim, std::size_t normal_dim,
                                     std::vector<double> forcing_frequencies)
    : k_(phase_dim), p_(normal_dim), omega_f_(std::move(forcing_frequencies)) {
  require(k_ >= 1, ErrorCode::InvalidArgument, "PhaseNormalSystem: need at least one phase");
  require(omega_f_.size() <= kMaxForcingDim, ErrorCode::InvalidArgument,
          "PhaseNormalSystem: too many forcing frequencies");
}

std::vector<double> PhaseNormalSystem::reference_normal() const {
  return std::vector<double>(p_, 0.0);
}

void PhaseNormalSystem::partials(std::span<const double> theta, std::span<const double> r,
                                 std::span<const double> phi, ChartPartials& out) const {
  const std::size_t k = k_, p = p_;
  out.theta_theta.assign(k * k, 0.0);
  out.theta_r.assign(k * p, 0.0);
  out.r_theta.assign(p * k, 0.0);
  out.r_r.assign(p * p, 0.0);
  std::vector<double> th(theta.begin(), theta.end()), rr(r.begin(), r.end());
  std::vector<double> tp(k), tm(k), rp(p), rm(p);
  for (std::size_t j = 0; j < k; ++j) {
    const double h = 1e-6;
    th[j] = theta[j] + h;
    phase_rate(th, rr, phi, tp);
    normal_rate(th, rr, phi, rp);
    th[j] = theta[j] - h;
    phase_rate(th, rr, phi, tm);
    normal_rate(th, rr, phi, rm);
    th[j] = theta[j];
    for (std::size_t i = 0; i < k; ++i) out.theta_theta[i * k + j] = (tp[i] - tm[i]) / (2 * h);
    for (std::size_t i = 0; i < p; ++i) out.r_theta[i * k + j] = (rp[i] - rm[i]) / (2 * h);
  }
  for (std::size_t j = 0; j < p; ++j) {
    const double h = std::max(1e-6, 1e-6 * std::abs(r[j]));
    rr[j] = r[j] + h;
    phase_rate(th, rr, phi, tp);
    normal_rate(th, rr, phi, rp);
    rr[j] = r[j] - h;
    phase_rate(th, rr, phi, tm);
    normal_rate(th, rr, phi, rm);
    rr[j] = r[j];
    for (std::size_t i = 0; i < k; ++i) out.theta_r[i * p + j] = (tp[i] - tm[i]) / (2 * h);
    for (std::size_t i = 0; i < p; ++i) out.r_r[i * p + j] = (rp[i] - rm[i]) / (2 * h);
  }
}

ode::SystemSpec PhaseNormalSystem::extended_system() const {
  auto self = shared_from_this();
  const std::size_t k = k_, p = p_, d = omega_f_.size();
  return ode::SystemSpec(
      k + p + d,
      [self, k, p, d](double, std::span<const double> z, std::span<double> dz) {
        auto theta = z.subspan(0, k);
        auto r = z.subspan(k, p);
        auto phi = z.subspan(k + p, d);
        self->phase_rate(theta, r, phi, dz.subspan(0, k));
        if (p > 0) self->normal_rate(theta, r, phi, dz.subspan(k, p));
        const auto& w = self->forcing_frequencies();
        for (std::size_t i = 0; i < d; ++i) dz[k + p + i] = w[i];
      },
      {}, omega_f_);
}

ode::SystemSpec PhaseNormalSystem::time_system() const {
  auto self = shared_from_this();
  const std::size_t k = k_, p = p_, d = omega_f_.size();
  return ode::SystemSpec(
      k + p,
      [self, k, p, d](double t, std::span<const double> z, std::span<double> dz) {
        double phi[kMaxForcingDim];
        const auto& w = self->forcing_frequencies();
        for (std::size_t i = 0; i < d; ++i) phi[i] = w[i] * t;
        self->phase_rate(z.subspan(0, k), z.subspan(k, p), std::span<const double>(phi, d),
                         dz.subspan(0, k));
        if (p > 0)
          self->normal_rate(z.subspan(0, k), z.subspan(k, p), std::span<const double>(phi, d),
                            dz.subspan(k, p));
      },
      [self, k, p, d](double t, std::span<const double> z, std::span<double> jac) {
        double phi[kMaxForcingDim];
        const auto& w = self->forcing_frequencies();
        for (std::size_t i = 0; i < d; ++i) phi[i] = w[i] * t;
        ChartPartials cp;
        self->partials(z.subspan(0, k), z.subspan(k, p), std::span<const double>(phi, d), cp);
        const std::size_t n = k + p;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) jac[i * n + j] = cp.theta_theta[i * k + j];
          for (std::size_t j = 0; j < p; ++j) jac[i * n + k + j] = cp.theta_r[i * p + j];
        }
        for (std::size_t i = 0; i < p; ++i) {
          for (std::size_t j = 0; j < k; ++j) jac[(k + i) * n + j] = cp.r_theta[i * k + j];
          for (std::size_t j = 0; j < p; ++j) jac[(k + i) * n + k + j] = cp.r_r[i * p + j];
        }
      },
      omega_f_);
}

}  // namespace nhsync
