#pragma once

// Invariant graphs r = rho(theta, phi) of a phase/normal system: the graph
// transform and its fixed-point iteration, a pullback-ensemble estimate, the
// slope equation, and empirical normal/tangential rates.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nhsync/chart.hpp"
#include "nhsync/error.hpp"
#include "nhsync/torus_graph.hpp"

namespace nhsync {

// 128 per dimension for tori of dimension <= 2, 48 for dimension 3.
std::size_t default_grid_resolution(std::size_t torus_dim);

// Empty graph sized for the chart, filled with the chart's reference normal value.
TorusGraph reference_graph(const PhaseNormalSystem& sys, std::size_t resolution);

// Mean of -lambda_max(sym R_r) over the graph nodes.
double normal_rate_estimate(const TorusGraph& rho, const PhaseNormalSystem& sys);
// 20 / normal_rate_estimate, capped at 500.
double default_window(const TorusGraph& rho, const PhaseNormalSystem& sys);

struct TransformOptions {
  double window = 20.0;
  double integrator_tol = 1e-10;
  std::size_t threads = 1;  // 0 = all cores
};

// One application of T: flow the on-graph phase backward over the window,
// then integrate the normal equation forward along that history starting on
// rho, and record r at the node.
TorusGraph graph_transform_step(const TorusGraph& rho, const PhaseNormalSystem& sys,
                                const TransformOptions& opts = {});

struct SolveOptions {
  double window = 0.0;  // <= 0: default_window(rho0)
  std::size_t max_iter = 50;
  double tol = 1e-8;
  double integrator_tol = 0.0;  // <= 0: clamp(tol / 100, 1e-12, 1e-9)
  std::size_t threads = 1;
};

struct SolveDiagnostics {
  std::vector<double> deltas;  // sup |T rho_i - rho_i| per iteration
  double contraction_factor = 0.0;  // exp of the least-squares slope of log(deltas)
  double window = 0.0;
  bool converged = false;
};

struct GraphSolution {
  TorusGraph graph;
  SolveDiagnostics diagnostics;
};

// Thrown by solve_graph when the iteration stalls or runs out of iterations.
class NoGraphError : public Error {
 public:
  NoGraphError(const std::string& what, GraphSolution last)
      : Error(ErrorCode::NoInvariantGraph, what), last_(std::move(last)) {}
  const GraphSolution& last() const noexcept { return last_; }

 private:
  GraphSolution last_;
};

GraphSolution solve_graph(const PhaseNormalSystem& sys, const SolveOptions& opts = {});
GraphSolution solve_graph(const TorusGraph& rho0, const PhaseNormalSystem& sys,
                          const SolveOptions& opts = {});

struct PullbackOptions {
  double window = -1.0;  // < 0: 20 / lambda_N at the seeds
  std::size_t ensemble = 4;  // seeds per theta node
  double integrator_tol = 1e-9;
  std::size_t threads = 1;
};

struct PullbackResult {
  TorusGraph graph;
  double window = 0.0;
  double empty_fraction = 0.0;
  bool converged = false;
};

// Seeds a lattice of phases at the reference normal value window time units
// before each forcing-phase node, flows forward, and fits r over the endpoints
// near each theta node with a local quadratic.
PullbackResult pullback_graph(const PhaseNormalSystem& sys, const std::vector<std::size_t>& grid,
                              const PullbackOptions& opts = {});

struct SlopeOptions {
  double window = 0.0;  // <= 0: default_window(rho)
  double integrator_tol = 1e-10;
  double blowup = 1e6;
  std::size_t threads = 1;
};

// d rho / d theta on the graph's grid, as a graph with p * k components
// (row-major p x k per node).
TorusGraph slope_field(const TorusGraph& rho, const PhaseNormalSystem& sys,
                       const SlopeOptions& opts = {});

// Central differences of the interpolant in the theta directions, same layout
// as slope_field.
TorusGraph finite_difference_slope(const TorusGraph& rho, std::size_t phase_dim);

struct NHRates {
  double lambda_N = 0.0;
  double lambda_T_max = 0.0;
  double ratio = 0.0;
  std::size_t samples = 0;
  // max over the grid of the largest eigenvalue of sym(Theta_theta + Theta_r rho_theta)
  double instantaneous_tangential_max = 0.0;
};

struct NHRateOptions {
  std::size_t sample_count = 8;
  double horizon = 100.0;
  double renorm_interval = 1.0;
  std::uint64_t seed = 0;
  double integrator_tol = 1e-9;
  std::size_t threads = 1;
};

inline constexpr double kNHRatioFloor = 1e-3;

NHRates nh_rates(const TorusGraph& rho, const PhaseNormalSystem& sys,
                 const NHRateOptions& opts = {});

double persistence_threshold(double alpha, double a);

// max |R - rho_theta Theta - rho_phi omega_f| over seeded random points.
double invariance_residual(const TorusGraph& rho, const PhaseNormalSystem& sys,
                           std::size_t sample_count = 256, std::uint64_t seed = 0);

}  // namespace nhsync
