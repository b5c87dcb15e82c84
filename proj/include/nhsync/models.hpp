#pragma once

// Concrete oscillator models as ready-made systems with analytic Jacobians,
// plus the (phase, normal) charts the invariant-graph solver works in.

#include <functional>
#include <memory>
#include <numbers>
#include <vector>

#include "nhsync/chart.hpp"
#include "nhsync/ode.hpp"

namespace nhsync::models {

enum class Forcing {
  TwoTone,  // f(t) = sin(2 pi t) + sin(4 t)
  SingleTone,  // f(t) = sin(Omega t)
  Zero,
};

// Forced Poincare oscillator:
//   x' = -q x - omega y,   y' = omega x - q y + gamma f(t)
// with q = alpha (r - a), or q = alpha (r^2 - a^2) when smooth_q is set.
struct PoincareParams {
  double alpha = 1.0;
  double a = 1.0;
  double omega = 1.0;
  double gamma = 0.0;
  Forcing forcing = Forcing::TwoTone;
  double forcing_frequency = 2.0 * std::numbers::pi;  // single tone only
  bool smooth_q = false;

  void validate() const;
  std::vector<double> forcing_frequencies() const;
  // f as a function of the forcing phases (phi_i = w_i t).
  double forcing_value(std::span<const double> phases) const;
  double forcing_at(double t) const;
};

ode::SystemSpec poincare_cartesian(const PoincareParams& p);

// Chart (theta, r) with
//   theta' = omega + (gamma / r) f cos(theta)
//   r'     = -q(r) r + gamma f sin(theta)
// and analytic partials; r <= 0 is outside the chart.
class PoincarePolar final : public PhaseNormalSystem {
 public:
  explicit PoincarePolar(const PoincareParams& p);

  const PoincareParams& params() const noexcept { return p_; }

  void phase_rate(std::span<const double> theta, std::span<const double> r,
                  std::span<const double> phi, std::span<double> out) const override;
  void normal_rate(std::span<const double> theta, std::span<const double> r,
                   std::span<const double> phi, std::span<double> out) const override;
  void partials(std::span<const double> theta, std::span<const double> r,
                std::span<const double> phi, ChartPartials& out) const override;
  bool in_domain(std::span<const double> r) const override { return r[0] > 0.0; }
  std::vector<double> reference_normal() const override { return {p_.a}; }

  // Normal contraction rate of the unperturbed cylinder r = a.
  double unperturbed_normal_rate() const;

 private:
  PoincareParams p_;
};

std::shared_ptr<const PoincarePolar> poincare_polar(const PoincareParams& p);

// Class I (SNIC) neuron: theta' = mu + 1 - cos(theta), mu' = drive(t).
struct ClassINeuronParams {
  double mu = 0.5;  // default initial value of the mu state
  std::function<double(double)> drive;  // empty means mu' = 0
};

ode::SystemSpec class1_neuron(const ClassINeuronParams& p = {});
// Closed-form period 2 pi / sqrt(mu^2 + 2 mu) for mu > 0.
double class1_period(double mu);
// Stable rest state theta = -arccos(1 + mu) for -2 < mu < 0.
double class1_rest_state(double mu);

// Circuit with cubic nonlinearity g(z) = g1 z + g3 z^3:
//   x' = a x - b y,  y' = c x - e z,  z' = -f y - g(z).
struct CircuitParams {
  double a = 0.5;
  double b = 1.0, c = 1.0, e = 1.0, f = 1.0;
  double g1 = 1.0, g3 = 1.0;

  void validate() const;
};

ode::SystemSpec circuit(const CircuitParams& p = {});

// Roessler: x' = -y - z + E cos(Omega t), y' = x + a y, z' = b + z (x - c).
struct RosslerParams {
  double a = 0.2, b = 0.2, c = 5.7;
  double forcing_amplitude = 0.0;
  double forcing_frequency = 1.0;
};

ode::SystemSpec rossler(const RosslerParams& p = {});

// Forced phase (Adler) model in the relative phase: theta' = delta - k sin(n theta).
struct AdlerParams {
  double delta = 0.0;
  double k = 0.0;
  int harmonic = 1;
};

class AdlerPhase final : public PhaseNormalSystem {
 public:
  explicit AdlerPhase(const AdlerParams& p);

  void phase_rate(std::span<const double> theta, std::span<const double> r,
                  std::span<const double> phi, std::span<double> out) const override;
  void normal_rate(std::span<const double>, std::span<const double>, std::span<const double>,
                   std::span<double>) const override {}

  const AdlerParams& params() const noexcept { return p_; }

 private:
  AdlerParams p_;
};

std::shared_ptr<const AdlerPhase> adler_phase(const AdlerParams& p);
ode::SystemSpec adler(const AdlerParams& p);

// Linear skew system theta' = omega, r' = -lambda (r - c sin(theta)); its
// invariant graph is known in closed form.
struct LinearGraphParams {
  double omega = 1.0;
  double lambda = 1.0;
  double c = 0.5;
};

class LinearGraph final : public PhaseNormalSystem {
 public:
  explicit LinearGraph(const LinearGraphParams& p);

  void phase_rate(std::span<const double> theta, std::span<const double> r,
                  std::span<const double> phi, std::span<double> out) const override;
  void normal_rate(std::span<const double> theta, std::span<const double> r,
                   std::span<const double> phi, std::span<double> out) const override;
  void partials(std::span<const double> theta, std::span<const double> r,
                std::span<const double> phi, ChartPartials& out) const override;

 private:
  LinearGraphParams p_;
};

std::shared_ptr<const LinearGraph> linear_graph(const LinearGraphParams& p);

// Two systems coupled as x_i' = v_i(x_i, t) + strength * g_i(x_1, x_2, t).
struct CoupledPair {
  using Coupling = std::function<void(double t, std::span<const double> x1,
                                      std::span<const double> x2, std::span<double> out)>;
  ode::SystemSpec first;
  ode::SystemSpec second;
  Coupling g1;  // output has first.dim() entries
  Coupling g2;  // output has second.dim() entries
  double strength = 0.0;
};

// Diffusive coupling g_1 = x_2 - x_1, g_2 = x_1 - x_2 between equal-dimension systems.
CoupledPair diffusive_pair(ode::SystemSpec first, ode::SystemSpec second, double strength);

ode::SystemSpec coupled_pair(const CoupledPair& cp);

}  // namespace nhsync::models
