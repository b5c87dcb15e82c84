#pragma once

// Phases, rotation numbers, m:n locking, phase collapse on an invariant
// cylinder, Arnold-tongue sweeps and uniformly attracting trajectories.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nhsync/chart.hpp"
#include "nhsync/models.hpp"
#include "nhsync/ode.hpp"
#include "nhsync/torus_graph.hpp"

namespace nhsync {

// Unwrapped phases on a time grid, row-major (sample x component).
class PhaseSeries {
 public:
  PhaseSeries() = default;
  PhaseSeries(std::vector<double> times, std::size_t components, std::vector<double> phases);
  // Unwraps each component by nearest-branch continuation.
  static PhaseSeries from_wrapped(std::vector<double> times, std::size_t components,
                                  std::vector<double> wrapped);

  std::size_t size() const noexcept { return times_.size(); }
  std::size_t components() const noexcept { return components_; }
  const std::vector<double>& times() const noexcept { return times_; }
  double time(std::size_t i) const { return times_[i]; }
  double phase(std::size_t i, std::size_t c) const { return phases_[i * components_ + c]; }
  std::vector<double> component(std::size_t c) const;

 private:
  std::vector<double> times_;
  std::size_t components_ = 0;
  std::vector<double> phases_;
};

std::vector<double> unwrap(std::span<const double> wrapped);

using PhaseExtractor = std::function<void(double t, std::span<const double> x, std::span<double> out)>;

// Samples a trajectory every dt from t_begin and unwraps the extracted phases.
PhaseSeries sample_phases(const ode::Trajectory& traj, double t_begin, double dt,
                          std::size_t components, const PhaseExtractor& extract);

struct RotationEstimate {
  double rho = 0.0;    // cycles per unit time
  double error = 0.0;  // split-half discrepancy
};

RotationEstimate rotation_number(const PhaseSeries& ps, std::size_t component,
                                 double discard_fraction = 0.2);

struct Locking {
  int m = 0;
  int n = 0;
  double residual = 0.0;  // sup |m theta2 - n theta1 - const|
};

struct LockingOptions {
  int m_max = 12;
  int n_max = 12;
  double bound = 0.45 * 2.0 * 3.14159265358979323846;
  double discard_fraction = 0.2;
};

// Coprime (m, n) minimising the variation of m theta2 - n theta1 after the
// transient, if that variation is below the bound.
std::optional<Locking> detect_mn_locking(const PhaseSeries& ps1, std::size_t c1,
                                         const PhaseSeries& ps2, std::size_t c2,
                                         const LockingOptions& opts = {});

struct CollapseOptions {
  std::size_t ring = 64;
  double horizon = 200.0;
  double offset = 0.0;  // rotation of the initial ring
  double gap = 3.14159265358979323846 / 4.0;
  double integrator_tol = 1e-9;
};

struct CollapseResult {
  std::size_t cluster_count = 0;        // 0: no collapse
  std::vector<double> cluster_phases;   // circular means in [0, 2 pi)
  std::vector<double> final_phases;     // in ring order, wrapped to [0, 2 pi)
};

// Seeds a ring of phases on the fiber phi = phi0 of the graph (or of a chart
// without normal coordinates, with graph == nullptr), flows them and counts
// clusters separated by gaps wider than opts.gap.
CollapseResult phase_collapse(const PhaseNormalSystem& sys, const TorusGraph* graph,
                              std::span<const double> phi0, const CollapseOptions& opts = {});

struct SyncReport {
  std::vector<RotationEstimate> rotation_numbers;
  std::optional<Locking> locking;
  std::size_t cluster_count = 0;
  std::vector<double> lyapunov;
};

enum class TongueFamily {
  Adler,           // psi' = delta - k sin psi, oscillator phase = Omega t + psi
  ForcedPoincare,  // Cartesian Poincare oscillator, omega = Omega + delta, gamma = k
};

struct TongueScanOptions {
  TongueFamily family = TongueFamily::Adler;
  double delta_min = -1.0, delta_max = 1.0;
  double k_min = 0.0, k_max = 1.0;
  std::size_t n_delta = 64, n_k = 64;
  double forcing_frequency = 1.0;  // Omega
  double horizon = 1000.0;
  double sample_dt = 0.05;
  double discard_fraction = 0.2;
  int m_max = 1, n_max = 1;
  double bound = 0.45 * 2.0 * 3.14159265358979323846;
  double integrator_tol = 1e-8;
  models::PoincareParams poincare;  // base for ForcedPoincare (alpha, a)
  std::size_t threads = 0;
};

struct TonguePoint {
  double delta = 0.0, k = 0.0;
  std::optional<Locking> locking;
  double rotation_osc = 0.0, rotation_forcing = 0.0, rotation_relative = 0.0;
  std::string status = "ok";
};

struct TongueGrid {
  std::size_t n_delta = 0, n_k = 0;
  std::vector<TonguePoint> points;  // row-major: k index outer, delta index inner
  const TonguePoint& at(std::size_t i_delta, std::size_t i_k) const {
    return points[i_k * n_delta + i_delta];
  }
  std::string to_csv() const;
};

TongueGrid arnold_tongue_scan(const TongueScanOptions& opts);
TonguePoint tongue_point(const TongueScanOptions& opts, double delta, double k);

enum class AttractVerdict { Attracting, NotUniformlyAttracting, NoCommonLimit };
const char* attract_verdict_name(AttractVerdict v) noexcept;

struct AttractOptions {
  double window = 5.0;          // sliding-window length
  double margin = 1e-2;         // every window exponent must be <= -margin
  double convergence_tol = 1e-6;
  double integrator_tol = 1e-10;
};

struct AttractResult {
  AttractVerdict verdict = AttractVerdict::NoCommonLimit;
  double exponent = 0.0;  // max over windows and candidates of the finite-time growth rate
  std::vector<double> window_exponents;  // first candidate, per window
  std::optional<ode::Trajectory> trajectory;  // limit representative
};

AttractResult attracting_trajectory(const ode::SystemSpec& sys,
                                    const std::vector<std::vector<double>>& candidates,
                                    double t0, double horizon, const AttractOptions& opts = {});

}  // namespace nhsync
