#pragma once

// Networks of coupled, possibly forced oscillators and hierarchical
// aggregation into synchronised clusters of effective oscillators.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nhsync/models.hpp"
#include "nhsync/ode.hpp"
#include "nhsync/sync.hpp"

namespace nhsync {

// amplitude * sin(frequency * t + phase)
struct SineInput {
  double amplitude = 0.0;
  double frequency = 1.0;
  double phase = 0.0;

  double at(double t) const;
};

enum class NodeKind {
  Phase,     // theta' = omega + u(t) (prc0 + prc1 cos theta + prc2 sin theta) + couplings
  Poincare,  // Cartesian Poincare oscillator, input u(t) added to y'
};

struct NodeSpec {
  NodeKind kind = NodeKind::Phase;
  double omega = 1.0;                            // Phase nodes
  std::array<double, 3> prc{1.0, 0.0, 0.0};      // Phase nodes
  models::PoincareParams poincare;               // Poincare nodes; gamma is ignored
  std::vector<SineInput> inputs;                 // summed

  std::size_t dim() const noexcept { return kind == NodeKind::Phase ? 1 : 2; }
  double input_at(double t) const;

  static NodeSpec phase(double omega, std::vector<SineInput> inputs = {});
  static NodeSpec poincare_node(const models::PoincareParams& p, std::vector<SineInput> inputs = {});
};

// Adds strength * c to node `to`. For a Phase target
//   c = sin(from_harmonic theta_from - to_harmonic theta_to);
// for a Poincare target c = p_from - x_to, with p_from the source state
// (Poincare) or a (cos theta_from, sin theta_from) (Phase, a of the target).
struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  double strength = 0.0;
  int from_harmonic = 1;
  int to_harmonic = 1;
};

class NetworkSpec {
 public:
  std::vector<NodeSpec> nodes;
  std::vector<Edge> edges;

  void validate() const;
  std::size_t size() const noexcept { return nodes.size(); }
  std::size_t dim() const;
  std::size_t offset(std::size_t node) const;

  ode::SystemSpec system() const;

  // Wrapped phase of node i from the full state.
  double node_phase(std::size_t i, std::span<const double> x) const;
  // d/dt of the node phase given the full state and its derivative.
  double node_phase_rate(std::size_t i, std::span<const double> x,
                         std::span<const double> dxdt) const;
  // Rotates node i by angle (phase shift in its chart).
  void rotate_node(std::size_t i, std::span<double> x, double angle) const;

  // Uniform random phases; Poincare nodes start on their limit cycle.
  std::vector<double> initial_state(std::uint64_t seed) const;
};

// Two all-to-all Kuramoto blocks of three phase nodes each, natural
// frequencies {0.95, 1, 1.05} and {1.35, 1.4, 1.45}.
NetworkSpec two_block_network(double intra, double inter);

struct SimulateOptions {
  double t0 = 0.0;
  double horizon = 200.0;
  double tol = 1e-8;
  double sample_dt = 0.05;
};

struct NetworkRun {
  ode::Trajectory trajectory;
  PhaseSeries phases;  // one component per node
};

NetworkRun simulate_network(const NetworkSpec& net, std::span<const double> x0,
                            const SimulateOptions& opts = {});

struct SyncMatrix {
  std::size_t n = 0;
  // Entry (i, j): locking with m theta_j - n theta_i bounded. (j, i) holds (n, m).
  std::vector<std::optional<Locking>> entries;

  const std::optional<Locking>& at(std::size_t i, std::size_t j) const { return entries[i * n + j]; }
};

SyncMatrix sync_matrix(const PhaseSeries& phases, const LockingOptions& opts = {},
                       std::size_t threads = 1);

using Partition = std::vector<std::vector<std::size_t>>;

// Connected components of the locked-pair graph, optionally only counting a
// fixed ratio (either orientation). Members sorted, clusters ordered by their
// smallest member.
Partition find_clusters(const SyncMatrix& m,
                        std::optional<std::pair<int, int>> ratio = std::nullopt);

bool is_coarsening(const Partition& coarse, const Partition& fine);

// Collective phase (circular mean) of a cluster and its exact time derivative.
struct CollectiveSeries {
  std::vector<double> times;
  std::vector<double> phase;  // unwrapped
  std::vector<double> rate;
};

CollectiveSeries collective_phase(const NetworkSpec& net, const std::vector<std::size_t>& cluster,
                                  const ode::Trajectory& traj, double t_begin, double dt);

struct EffectiveOptions {
  double discard_fraction = 0.2;
  double sample_dt = 0.05;
  double lock_bound = 0.45 * 2.0 * 3.14159265358979323846;
};

struct EffectiveOscillator {
  std::vector<std::size_t> members;
  double omega_hat = 0.0;  // rad per unit time
  // Response u(t) (prc0 + prc1 cos Theta + prc2 sin Theta) to the mean member input.
  std::array<double, 3> prc{0.0, 0.0, 0.0};
  std::vector<SineInput> inputs;            // aggregate input, mean of the members'
  std::optional<double> validation_r2;      // held-out window; empty without input
};

EffectiveOscillator effective_oscillator(const NetworkSpec& net,
                                         const std::vector<std::size_t>& cluster,
                                         const NetworkRun& run, const EffectiveOptions& opts = {});

struct AggregateOptions {
  std::size_t max_levels = 4;
  double horizon = 400.0;
  double sample_dt = 0.05;
  double tol = 1e-8;
  double tier_ratio = 4.0;
  std::size_t probes = 4;
  double probe_window = 40.0;
  double validation_window = 50.0;
  double validation_threshold = 0.15;
  LockingOptions locking{.m_max = 1, .n_max = 1};
  bool chimera_check = true;
  std::vector<double> collapse_fibers{0.0, 1.5707963267948966, 3.141592653589793,
                                      4.71238898038469};
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ClusterModel {
  std::vector<std::size_t> members;
  double omega_hat = 0.0;
  std::array<double, 3> prc{0.0, 0.0, 0.0};
  std::vector<SineInput> inputs;
  // Locked to its input on every tested fiber of the forcing phases.
  bool input_locked = false;
  std::vector<double> fibers_tested;
};

struct CouplingFit {
  std::size_t from = 0;  // cluster index within the level
  std::size_t to = 0;
  double k_hat = 0.0;
};

struct AggregationLevel {
  Partition partition;
  std::vector<ClusterModel> clusters;
  std::vector<CouplingFit> couplings;
  double fit_rms = 0.0;  // rms residual of the collective-rate fit
  double validation_error = 0.0;
  bool validated = false;

  // The level's reduced network of effective phase oscillators.
  NetworkSpec reduced_network() const;
};

struct AggregationTree {
  std::size_t node_count = 0;
  std::vector<double> tiers;  // weakest strength in each coupling tier, strongest tier first
  std::vector<AggregationLevel> levels;
  bool stable = false;        // stopped because the partition stopped changing
  bool chimera = false;
  std::optional<double> largest_lyapunov;

  std::size_t depth() const noexcept { return levels.size(); }
  std::string to_json() const;
};

// Coupling strengths grouped into tiers, strongest first; a new tier starts
// where consecutive distinct strengths differ by more than ratio.
std::vector<std::vector<double>> coupling_tiers(const NetworkSpec& net, double ratio);

AggregationTree aggregate(const NetworkSpec& net, const AggregateOptions& opts = {});

}  // namespace nhsync
