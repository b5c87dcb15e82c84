#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "nhsync/ode.hpp"

namespace nhsync {

// Partial derivatives of a (phase, normal) vector field, all row-major:
// theta_theta k x k, theta_r k x p, r_theta p x k, r_r p x p.
struct ChartPartials {
  std::vector<double> theta_theta;
  std::vector<double> theta_r;
  std::vector<double> r_theta;
  std::vector<double> r_r;
};

// A vector field written in phase coordinates theta (k angles), normal
// coordinates r (p values) and forcing phases phi (d angles advancing at the
// constant forcing frequencies):
//
//   theta' = Theta(theta, r, phi),   r' = R(theta, r, phi),   phi' = omega_f.
//
// Quasiperiodic time dependence enters only through phi, so invariant graphs
// r = rho(theta, phi) live on the compact torus T^(k+d).
class PhaseNormalSystem : public std::enable_shared_from_this<PhaseNormalSystem> {
 public:
  PhaseNormalSystem(std::size_t phase_dim, std::size_t normal_dim,
                    std::vector<double> forcing_frequencies);
  virtual ~PhaseNormalSystem() = default;

  std::size_t phase_dim() const noexcept { return k_; }
  std::size_t normal_dim() const noexcept { return p_; }
  std::size_t forcing_dim() const noexcept { return omega_f_.size(); }
  const std::vector<double>& forcing_frequencies() const noexcept { return omega_f_; }

  virtual void phase_rate(std::span<const double> theta, std::span<const double> r,
                          std::span<const double> phi, std::span<double> out) const = 0;
  virtual void normal_rate(std::span<const double> theta, std::span<const double> r,
                           std::span<const double> phi, std::span<double> out) const = 0;

  // Central differences unless overridden.
  virtual void partials(std::span<const double> theta, std::span<const double> r,
                        std::span<const double> phi, ChartPartials& out) const;

  virtual bool in_domain(std::span<const double> /*r*/) const { return true; }

  // The unperturbed graph value, used to seed iterations and ensembles.
  virtual std::vector<double> reference_normal() const;

  // Autonomous system on (theta, r, phi) of dimension k + p + d.
  ode::SystemSpec extended_system() const;
  // Non-autonomous system on (theta, r) with phi = omega_f * t.
  ode::SystemSpec time_system() const;

  static constexpr std::size_t kMaxForcingDim = 8;

 private:
  std::size_t k_;
  std::size_t p_;
  std::vector<double> omega_f_;
};

using ChartPtr = std::shared_ptr<const PhaseNormalSystem>;

}  // namespace nhsync
