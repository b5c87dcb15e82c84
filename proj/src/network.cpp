#include "nhsync/network.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "nhsync/chart.hpp"
#include "nhsync/error.hpp"
#include "parallel.hpp"

namespace nhsync {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap(double a) {
  a = std::fmod(a, kTwoPi);
  return a < 0 ? a + kTwoPi : a;
}

double poincare_q(const models::PoincareParams& p, double r) {
  return p.smooth_q ? p.alpha * (r * r - p.a * p.a) : p.alpha * (r - p.a);
}

// theta' = omega + u(phi) (prc0 + prc1 cos theta + prc2 sin theta) on the forcing torus.
class EffectivePhase final : public PhaseNormalSystem {
 public:
  EffectivePhase(double omega, std::array<double, 3> prc, std::vector<SineInput> inputs,
                 std::vector<double> freqs, std::vector<std::size_t> slot)
      : PhaseNormalSystem(1, 0, std::move(freqs)),
        omega_(omega),
        prc_(prc),
        inputs_(std::move(inputs)),
        slot_(std::move(slot)) {}

  void phase_rate(std::span<const double> theta, std::span<const double>,
                  std::span<const double> phi, std::span<double> out) const override {
    double u = 0;
    for (std::size_t i = 0; i < inputs_.size(); ++i)
      u += inputs_[i].amplitude * std::sin(phi[slot_[i]] + inputs_[i].phase);
    out[0] = omega_ + u * (prc_[0] + prc_[1] * std::cos(theta[0]) + prc_[2] * std::sin(theta[0]));
  }
  void normal_rate(std::span<const double>, std::span<const double>, std::span<const double>,
                   std::span<double>) const override {}

 private:
  double omega_;
  std::array<double, 3> prc_;
  std::vector<SineInput> inputs_;
  std::vector<std::size_t> slot_;
};

bool has_input(const std::vector<SineInput>& in) {
  return std::any_of(in.begin(), in.end(), [](const SineInput& s) { return s.amplitude != 0.0; });
}

double inputs_at(const std::vector<SineInput>& in, double t) {
  double u = 0;
  for (const auto& s : in) u += s.at(t);
  return u;
}

std::vector<SineInput> aggregate_inputs(const NetworkSpec& net, const std::vector<std::size_t>& members) {
  std::vector<SineInput> out;
  const double w = 1.0 / static_cast<double>(members.size());
  for (std::size_t m : members)
    for (const auto& s : net.nodes[m].inputs)
      if (s.amplitude != 0.0) out.push_back({s.amplitude * w, s.frequency, s.phase});
  return out;
}

void check_cluster(const NetworkSpec& net, const std::vector<std::size_t>& cluster) {
  require(!cluster.empty(), ErrorCode::InvalidArgument, "cluster must not be empty");
  for (std::size_t i = 0; i < cluster.size(); ++i) {
    require(cluster[i] < net.size(), ErrorCode::InvalidArgument, "cluster member out of range");
    for (std::size_t j = 0; j < i; ++j)
      require(cluster[i] != cluster[j], ErrorCode::InvalidArgument, "cluster has repeated members");
  }
}

// Locked to the input on every fiber: the effective model collapses a ring of phases.
bool input_locked(const ClusterModel& c, const std::vector<double>& fibers) {
  std::vector<double> freqs;
  std::vector<std::size_t> slot;
  for (const auto& s : c.inputs) {
    auto it = std::find(freqs.begin(), freqs.end(), s.frequency);
    slot.push_back(static_cast<std::size_t>(it - freqs.begin()));
    if (it == freqs.end()) freqs.push_back(s.frequency);
  }
  if (freqs.empty() || freqs.size() > PhaseNormalSystem::kMaxForcingDim) return false;
  const auto sys = std::make_shared<EffectivePhase>(c.omega_hat, c.prc, c.inputs, freqs, slot);
  std::vector<double> phi(freqs.size());
  for (double f : fibers) {
    std::fill(phi.begin(), phi.end(), f);
    if (phase_collapse(*sys, nullptr, phi).cluster_count == 0) return false;
  }
  return true;
}

nlohmann::ordered_json num(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json inputs_json(const std::vector<SineInput>& in) {
  auto a = nlohmann::ordered_json::array();
  for (const auto& s : in)
    a.push_back({{"amplitude", num(s.amplitude)}, {"frequency", num(s.frequency)}, {"phase", num(s.phase)}});
  return a;
}

}  // namespace

double SineInput::at(double t) const { return amplitude * std::sin(frequency * t + phase); }

double NodeSpec::input_at(double t) const { return inputs_at(inputs, t); }

NodeSpec NodeSpec::phase(double omega, std::vector<SineInput> inputs) {
  NodeSpec n;
  n.kind = NodeKind::Phase;
  n.omega = omega;
  n.inputs = std::move(inputs);
  return n;
}

NodeSpec NodeSpec::poincare_node(const models::PoincareParams& p, std::vector<SineInput> inputs) {
  NodeSpec n;
  n.kind = NodeKind::Poincare;
  n.poincare = p;
  n.poincare.gamma = 0.0;
  n.inputs = std::move(inputs);
  return n;
}

void NetworkSpec::validate() const {
  require(!nodes.empty(), ErrorCode::InvalidArgument, "network: no nodes");
  for (const auto& n : nodes) {
    require(std::isfinite(n.omega), ErrorCode::InvalidArgument, "network: non-finite node frequency");
    for (double v : n.prc)
      require(std::isfinite(v), ErrorCode::InvalidArgument, "network: non-finite phase response");
    if (n.kind == NodeKind::Poincare) {
      models::PoincareParams p = n.poincare;
      p.gamma = 0.0;
      p.validate();
    }
    for (const auto& s : n.inputs)
      require(std::isfinite(s.amplitude) && std::isfinite(s.frequency) && std::isfinite(s.phase),
              ErrorCode::InvalidArgument, "network: non-finite input");
  }
  for (const auto& e : edges) {
    require(e.from < nodes.size() && e.to < nodes.size(), ErrorCode::InvalidArgument,
            "network: edge endpoint out of range");
    require(e.from != e.to, ErrorCode::InvalidArgument, "network: self-loop");
    require(std::isfinite(e.strength), ErrorCode::InvalidArgument, "network: non-finite strength");
    require(e.from_harmonic >= 1 && e.to_harmonic >= 1, ErrorCode::InvalidArgument,
            "network: harmonics must be positive");
    if (nodes[e.to].kind == NodeKind::Poincare)
      require(e.from_harmonic == 1 && e.to_harmonic == 1, ErrorCode::InvalidArgument,
              "network: harmonic coupling needs a phase target");
  }
}

std::size_t NetworkSpec::dim() const {
  std::size_t d = 0;
  for (const auto& n : nodes) d += n.dim();
  return d;
}

std::size_t NetworkSpec::offset(std::size_t node) const {
  std::size_t d = 0;
  for (std::size_t i = 0; i < node; ++i) d += nodes[i].dim();
  return d;
}

double NetworkSpec::node_phase(std::size_t i, std::span<const double> x) const {
  const std::size_t o = offset(i);
  if (nodes[i].kind == NodeKind::Phase) return wrap(x[o]);
  return wrap(std::atan2(x[o + 1], x[o]));
}

double NetworkSpec::node_phase_rate(std::size_t i, std::span<const double> x,
                                    std::span<const double> dxdt) const {
  const std::size_t o = offset(i);
  if (nodes[i].kind == NodeKind::Phase) return dxdt[o];
  const double r2 = x[o] * x[o] + x[o + 1] * x[o + 1];
  require(r2 > 0.0, ErrorCode::Domain, "network: phase undefined at the origin");
  return (x[o] * dxdt[o + 1] - x[o + 1] * dxdt[o]) / r2;
}

void NetworkSpec::rotate_node(std::size_t i, std::span<double> x, double angle) const {
  const std::size_t o = offset(i);
  if (nodes[i].kind == NodeKind::Phase) {
    x[o] += angle;
    return;
  }
  const double c = std::cos(angle), s = std::sin(angle);
  const double a = x[o], b = x[o + 1];
  x[o] = c * a - s * b;
  x[o + 1] = s * a + c * b;
}

std::vector<double> NetworkSpec::initial_state(std::uint64_t seed) const {
  validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, kTwoPi);
  std::vector<double> x(dim());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double th = u(rng);
    const std::size_t o = offset(i);
    if (nodes[i].kind == NodeKind::Phase) {
      x[o] = th;
    } else {
      x[o] = nodes[i].poincare.a * std::cos(th);
      x[o + 1] = nodes[i].poincare.a * std::sin(th);
    }
  }
  return x;
}

ode::SystemSpec NetworkSpec::system() const {
  validate();
  std::vector<std::size_t> off(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) off[i] = offset(i);
  auto field = [nodes = nodes, edges = edges, off](double t, std::span<const double> x,
                                                   std::span<double> f) {
    auto phase_of = [&](std::size_t i) {
      return nodes[i].kind == NodeKind::Phase ? x[off[i]] : std::atan2(x[off[i] + 1], x[off[i]]);
    };
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      const std::size_t o = off[i];
      const double u = n.input_at(t);
      if (n.kind == NodeKind::Phase) {
        const double th = x[o];
        f[o] = n.omega + u * (n.prc[0] + n.prc[1] * std::cos(th) + n.prc[2] * std::sin(th));
      } else {
        const auto& p = n.poincare;
        const double r = std::hypot(x[o], x[o + 1]);
        const double q = poincare_q(p, r);
        f[o] = -q * x[o] - p.omega * x[o + 1];
        f[o + 1] = p.omega * x[o] - q * x[o + 1] + u;
      }
    }
    for (const auto& e : edges) {
      if (e.strength == 0.0) continue;
      const std::size_t o = off[e.to];
      if (nodes[e.to].kind == NodeKind::Phase) {
        f[o] += e.strength * std::sin(e.from_harmonic * phase_of(e.from) - e.to_harmonic * x[o]);
      } else {
        double px, py;
        if (nodes[e.from].kind == NodeKind::Poincare) {
          px = x[off[e.from]];
          py = x[off[e.from] + 1];
        } else {
          const double a = nodes[e.to].poincare.a;
          px = a * std::cos(x[off[e.from]]);
          py = a * std::sin(x[off[e.from]]);
        }
        f[o] += e.strength * (px - x[o]);
        f[o + 1] += e.strength * (py - x[o + 1]);
      }
    }
  };
  return ode::SystemSpec(dim(), std::move(field));
}

NetworkSpec two_block_network(double intra, double inter) {
  NetworkSpec net;
  for (double w : {0.95, 1.0, 1.05, 1.35, 1.4, 1.45}) net.nodes.push_back(NodeSpec::phase(w));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      if (i == j) continue;
      const bool same = (i < 3) == (j < 3);
      net.edges.push_back({j, i, same ? intra : inter, 1, 1});
    }
  return net;
}

NetworkRun simulate_network(const NetworkSpec& net, std::span<const double> x0,
                            const SimulateOptions& opts) {
  const auto sys = net.system();
  require(x0.size() == sys.dim(), ErrorCode::InvalidArgument,
          "simulate_network: initial state has the wrong dimension");
  require(opts.horizon > 0 && opts.sample_dt > 0 && opts.tol > 0, ErrorCode::InvalidArgument,
          "simulate_network: invalid options");
  ode::IntegrateOptions io;
  io.tol = opts.tol;
  io.max_step = 20.0 * opts.sample_dt;
  NetworkRun run;
  run.trajectory = ode::integrate(sys, x0, opts.t0, opts.t0 + opts.horizon, io);
  const std::size_t n = net.size();
  run.phases = sample_phases(run.trajectory, opts.t0, opts.sample_dt, n,
                             [&](double, std::span<const double> x, std::span<double> out) {
                               for (std::size_t i = 0; i < n; ++i) out[i] = net.node_phase(i, x);
                             });
  return run;
}

SyncMatrix sync_matrix(const PhaseSeries& phases, const LockingOptions& opts, std::size_t threads) {
  SyncMatrix m;
  m.n = phases.components();
  m.entries.assign(m.n * m.n, std::nullopt);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < m.n; ++i) {
    m.entries[i * m.n + i] = Locking{1, 1, 0.0};
    for (std::size_t j = i + 1; j < m.n; ++j) pairs.emplace_back(i, j);
  }
  detail::parallel_for(pairs.size(), threads, [&](std::size_t p, std::size_t) {
    const auto [i, j] = pairs[p];
    auto l = detect_mn_locking(phases, i, phases, j, opts);
    m.entries[i * m.n + j] = l;
    if (l) m.entries[j * m.n + i] = Locking{l->n, l->m, l->residual};
  });
  return m;
}

Partition find_clusters(const SyncMatrix& m, std::optional<std::pair<int, int>> ratio) {
  std::vector<std::size_t> parent(m.n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t j = 0; j < m.n; ++j) {
      if (i == j) continue;
      const auto& l = m.at(i, j);
      if (!l) continue;
      if (ratio && !((l->m == ratio->first && l->n == ratio->second) ||
                     (l->m == ratio->second && l->n == ratio->first)))
        continue;
      const std::size_t a = find(i), b = find(j);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < m.n; ++i) groups[find(i)].push_back(i);
  Partition out;
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

bool is_coarsening(const Partition& coarse, const Partition& fine) {
  std::map<std::size_t, std::size_t> owner;
  for (std::size_t c = 0; c < coarse.size(); ++c)
    for (std::size_t v : coarse[c])
      if (!owner.emplace(v, c).second) return false;
  std::size_t covered = 0;
  for (const auto& f : fine) {
    if (f.empty()) return false;
    auto it = owner.find(f.front());
    if (it == owner.end()) return false;
    for (std::size_t v : f) {
      auto jt = owner.find(v);
      if (jt == owner.end() || jt->second != it->second) return false;
    }
    covered += f.size();
  }
  return covered == owner.size();
}

CollectiveSeries collective_phase(const NetworkSpec& net, const std::vector<std::size_t>& cluster,
                                  const ode::Trajectory& traj, double t_begin, double dt) {
  check_cluster(net, cluster);
  require(dt > 0 && !traj.empty() && t_begin >= traj.front_time() && t_begin <= traj.back_time(),
          ErrorCode::InvalidArgument, "collective_phase: sampling outside the trajectory");
  const auto count =
      static_cast<std::size_t>(std::floor((traj.back_time() - t_begin) / dt * (1 + 1e-12))) + 1;
  CollectiveSeries s;
  s.times.resize(count);
  s.phase.resize(count);
  s.rate.resize(count);
  std::vector<double> x(traj.dim()), dx(traj.dim()), th(cluster.size());
  for (std::size_t k = 0; k < count; ++k) {
    const double t = std::min(t_begin + dt * static_cast<double>(k), traj.back_time());
    traj.interpolate(t, x);
    traj.interpolate_derivative(t, dx);
    double zc = 0, zs = 0;
    for (std::size_t j = 0; j < cluster.size(); ++j) {
      th[j] = net.node_phase(cluster[j], x);
      zc += std::cos(th[j]);
      zs += std::sin(th[j]);
    }
    const double R = std::hypot(zc, zs);
    require(R > 1e-9 * static_cast<double>(cluster.size()), ErrorCode::Domain,
            "collective_phase: order parameter vanishes");
    const double Th = std::atan2(zs, zc);
    double rate = 0;
    for (std::size_t j = 0; j < cluster.size(); ++j)
      rate += net.node_phase_rate(cluster[j], x, dx) * std::cos(th[j] - Th);
    s.times[k] = t;
    s.phase[k] = Th;
    s.rate[k] = rate / R;
  }
  s.phase = unwrap(s.phase);
  return s;
}

EffectiveOscillator effective_oscillator(const NetworkSpec& net,
                                         const std::vector<std::size_t>& cluster,
                                         const NetworkRun& run, const EffectiveOptions& opts) {
  check_cluster(net, cluster);
  require(run.phases.components() == net.size(), ErrorCode::InvalidArgument,
          "effective_oscillator: run does not match the network");
  LockingOptions lo{.m_max = 1, .n_max = 1, .bound = opts.lock_bound,
                    .discard_fraction = opts.discard_fraction};
  for (std::size_t j = 1; j < cluster.size(); ++j)
    require(detect_mn_locking(run.phases, cluster[0], run.phases, cluster[j], lo).has_value(),
            ErrorCode::Precondition, "effective_oscillator: cluster is not 1:1 locked");

  EffectiveOscillator eo;
  eo.members = cluster;
  std::sort(eo.members.begin(), eo.members.end());
  const auto cs = collective_phase(net, eo.members, run.trajectory, run.trajectory.front_time(),
                                   opts.sample_dt);
  const PhaseSeries ps(cs.times, 1, cs.phase);
  eo.omega_hat = kTwoPi * rotation_number(ps, 0, opts.discard_fraction).rho;
  eo.inputs = aggregate_inputs(net, eo.members);
  if (!has_input(eo.inputs)) return eo;

  const std::size_t start =
      static_cast<std::size_t>(std::floor(opts.discard_fraction * static_cast<double>(cs.times.size())));
  const std::size_t n = cs.times.size() - start, half = n / 2;
  require(half >= 16, ErrorCode::InsufficientData, "effective_oscillator: run too short to fit");
  auto features = [&](std::size_t k) {
    const double u = inputs_at(eo.inputs, cs.times[k]);
    return Eigen::Vector3d(u, u * std::cos(cs.phase[k]), u * std::sin(cs.phase[k]));
  };
  Eigen::MatrixXd A(half, 3);
  Eigen::VectorXd b(half);
  for (std::size_t i = 0; i < half; ++i) {
    A.row(static_cast<Eigen::Index>(i)) = features(start + i).transpose();
    b(static_cast<Eigen::Index>(i)) = cs.rate[start + i] - eo.omega_hat;
  }
  const Eigen::Vector3d beta = A.colPivHouseholderQr().solve(b);
  for (int i = 0; i < 3; ++i) eo.prc[static_cast<std::size_t>(i)] = beta(i);

  double mean = 0;
  for (std::size_t k = start + half; k < cs.times.size(); ++k) mean += cs.rate[k];
  mean /= static_cast<double>(cs.times.size() - start - half);
  double ss_res = 0, ss_tot = 0;
  for (std::size_t k = start + half; k < cs.times.size(); ++k) {
    const double pred = eo.omega_hat + features(k).dot(beta);
    ss_res += (cs.rate[k] - pred) * (cs.rate[k] - pred);
    ss_tot += (cs.rate[k] - mean) * (cs.rate[k] - mean);
  }
  eo.validation_r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);
  return eo;
}

NetworkSpec AggregationLevel::reduced_network() const {
  NetworkSpec net;
  for (const auto& c : clusters) {
    NodeSpec n = NodeSpec::phase(c.omega_hat, c.inputs);
    if (has_input(c.inputs)) n.prc = c.prc;
    net.nodes.push_back(std::move(n));
  }
  for (const auto& e : couplings) net.edges.push_back({e.from, e.to, e.k_hat, 1, 1});
  return net;
}

std::vector<std::vector<double>> coupling_tiers(const NetworkSpec& net, double ratio) {
  require(ratio > 1.0, ErrorCode::InvalidArgument, "coupling_tiers: ratio must exceed 1");
  std::vector<double> s;
  for (const auto& e : net.edges)
    if (e.strength != 0.0) s.push_back(std::abs(e.strength));
  std::sort(s.begin(), s.end(), std::greater<>());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<std::vector<double>> tiers;
  for (double v : s) {
    if (tiers.empty() || tiers.back().back() > ratio * v)
      tiers.push_back({v});
    else
      tiers.back().push_back(v);
  }
  return tiers;
}

namespace {

struct LevelContext {
  const NetworkSpec& net;
  const AggregateOptions& opts;
  const NetworkRun& full;
};

AggregationLevel fit_level(const LevelContext& ctx, const Partition& part) {
  const auto& net = ctx.net;
  const auto& opts = ctx.opts;
  const std::size_t C = part.size();
  AggregationLevel lvl;
  lvl.partition = part;
  lvl.clusters.resize(C);
  std::vector<std::size_t> owner(net.size());
  for (std::size_t c = 0; c < C; ++c) {
    lvl.clusters[c].members = part[c];
    lvl.clusters[c].inputs = aggregate_inputs(net, part[c]);
    for (std::size_t v : part[c]) owner[v] = c;
  }
  std::vector<std::vector<bool>> linked(C, std::vector<bool>(C, false));  // [to][from]
  for (const auto& e : net.edges)
    if (e.strength != 0.0 && owner[e.from] != owner[e.to]) linked[owner[e.to]][owner[e.from]] = true;

  // Probe runs from the settled state with clusters rotated against each other.
  const double tb = opts.horizon;
  const std::vector<double> xb = ctx.full.trajectory.at(tb);
  const auto sys = net.system();
  ode::IntegrateOptions io;
  io.tol = opts.tol;
  io.max_step = 20.0 * opts.sample_dt;
  std::vector<std::vector<CollectiveSeries>> probe(opts.probes, std::vector<CollectiveSeries>(C));
  detail::parallel_for(opts.probes, opts.threads, [&](std::size_t p, std::size_t) {
    std::vector<double> x = xb;
    for (std::size_t c = 0; c < C; ++c) {
      const double off = kTwoPi * static_cast<double>(p * (c + 1)) / static_cast<double>(opts.probes);
      for (std::size_t v : part[c]) net.rotate_node(v, x, off);
    }
    const auto traj = ode::integrate(sys, x, tb, tb + opts.probe_window, io);
    for (std::size_t c = 0; c < C; ++c)
      probe[p][c] = collective_phase(net, part[c], traj, tb, opts.sample_dt);
  });

  double ss = 0;
  std::size_t rows_total = 0;
  for (std::size_t c = 0; c < C; ++c) {
    auto& cm = lvl.clusters[c];
    std::vector<std::size_t> from;
    for (std::size_t d = 0; d < C; ++d)
      if (linked[c][d]) from.push_back(d);
    const bool in = has_input(cm.inputs);
    const std::size_t cols = 1 + from.size() + (in ? 3 : 0);
    std::size_t rows = 0;
    for (const auto& pr : probe) rows += pr[c].times.size();
    Eigen::MatrixXd A(rows, cols);
    Eigen::VectorXd b(rows);
    Eigen::Index r = 0;
    for (const auto& pr : probe) {
      for (std::size_t k = 0; k < pr[c].times.size(); ++k, ++r) {
        const double th = pr[c].phase[k];
        Eigen::Index col = 0;
        A(r, col++) = 1.0;
        for (std::size_t d : from) A(r, col++) = std::sin(pr[d].phase[k] - th);
        if (in) {
          const double u = inputs_at(cm.inputs, pr[c].times[k]);
          A(r, col++) = u;
          A(r, col++) = u * std::cos(th);
          A(r, col++) = u * std::sin(th);
        }
        b(r) = pr[c].rate[k];
      }
    }
    const Eigen::VectorXd beta = A.colPivHouseholderQr().solve(b);
    ss += (A * beta - b).squaredNorm();
    rows_total += rows;
    cm.omega_hat = beta(0);
    for (std::size_t i = 0; i < from.size(); ++i)
      lvl.couplings.push_back({from[i], c, beta(static_cast<Eigen::Index>(1 + i))});
    if (in) {
      const auto o = static_cast<Eigen::Index>(1 + from.size());
      cm.prc = {beta(o), beta(o + 1), beta(o + 2)};
      cm.fibers_tested = opts.collapse_fibers;
      cm.input_locked = input_locked(cm, opts.collapse_fibers);
    }
  }
  lvl.fit_rms = rows_total ? std::sqrt(ss / static_cast<double>(rows_total)) : 0.0;

  // Validation: reduced network against the full collective phases.
  const NetworkSpec reduced = lvl.reduced_network();
  std::vector<CollectiveSeries> truth(C);
  std::vector<double> z0(C);
  for (std::size_t c = 0; c < C; ++c) {
    truth[c] = collective_phase(net, part[c], ctx.full.trajectory, tb, opts.sample_dt);
    z0[c] = truth[c].phase.front();
  }
  const auto rrun = simulate_network(reduced, z0,
                                     {.t0 = tb, .horizon = opts.validation_window, .tol = opts.tol,
                                      .sample_dt = opts.sample_dt});
  double err = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const double shift = truth[c].phase.front() - rrun.phases.phase(0, c);
    const std::size_t n = std::min(truth[c].phase.size(), rrun.phases.size());
    for (std::size_t k = 0; k < n; ++k)
      err = std::max(err, std::abs(truth[c].phase[k] - rrun.phases.phase(k, c) - shift));
  }
  lvl.validation_error = err;
  lvl.validated = err <= opts.validation_threshold;
  return lvl;
}

}  // namespace

AggregationTree aggregate(const NetworkSpec& net, const AggregateOptions& opts) {
  net.validate();
  require(opts.max_levels >= 1 && opts.horizon > 0 && opts.probes >= 1 && opts.probe_window > 0 &&
              opts.validation_window > 0 && opts.sample_dt > 0,
          ErrorCode::InvalidArgument, "aggregate: invalid budget");
  AggregationTree tree;
  tree.node_count = net.size();
  const auto tiers = coupling_tiers(net, opts.tier_ratio);
  for (const auto& t : tiers) tree.tiers.push_back(t.back());

  const auto x0 = net.initial_state(opts.seed);
  const NetworkRun full = simulate_network(
      net, x0, {.t0 = 0, .horizon = opts.horizon + opts.validation_window, .tol = opts.tol,
                .sample_dt = opts.sample_dt});
  const LevelContext ctx{net, opts, full};

  // Level 1 clusters under the strongest coupling tier alone.
  NetworkSpec first = net;
  if (tiers.size() > 1) {
    const double floor = tiers.front().back();
    std::erase_if(first.edges, [&](const Edge& e) { return std::abs(e.strength) < floor; });
  }
  const NetworkRun r1 = simulate_network(
      first, x0, {.t0 = 0, .horizon = opts.horizon, .tol = opts.tol, .sample_dt = opts.sample_dt});
  Partition part = find_clusters(sync_matrix(r1.phases, opts.locking, opts.threads), {{1, 1}});
  tree.levels.push_back(fit_level(ctx, part));

  while (true) {
    if (part.size() == 1) {
      tree.stable = true;
      break;
    }
    if (tree.levels.size() >= opts.max_levels) break;
    const auto& lvl = tree.levels.back();
    const NetworkSpec reduced = lvl.reduced_network();
    std::vector<double> z0(part.size());
    for (std::size_t c = 0; c < part.size(); ++c)
      z0[c] = collective_phase(net, part[c], full.trajectory, opts.horizon, opts.sample_dt).phase.front();
    const NetworkRun rr = simulate_network(
        reduced, z0,
        {.t0 = opts.horizon, .horizon = opts.horizon, .tol = opts.tol, .sample_dt = opts.sample_dt});
    const Partition groups =
        find_clusters(sync_matrix(rr.phases, opts.locking, opts.threads), {{1, 1}});
    Partition next;
    for (const auto& g : groups) {
      std::vector<std::size_t> members;
      for (std::size_t c : g) members.insert(members.end(), part[c].begin(), part[c].end());
      std::sort(members.begin(), members.end());
      next.push_back(std::move(members));
    }
    std::sort(next.begin(), next.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    if (next == part) {
      tree.stable = true;
      break;
    }
    require(is_coarsening(next, part), ErrorCode::InternalConsistency,
            "aggregate: level is not a coarsening of the previous one");
    part = std::move(next);
    tree.levels.push_back(fit_level(ctx, part));
  }

  const bool multi = std::any_of(part.begin(), part.end(), [](const auto& c) { return c.size() > 1; });
  const bool single = std::any_of(part.begin(), part.end(), [](const auto& c) { return c.size() == 1; });
  if (opts.chimera_check && multi && single) {
    const auto xs = full.trajectory.at(opts.horizon);
    const double l1 = ode::lyapunov_exponents(net.system(), xs, 1, opts.horizon, 2 * opts.horizon,
                                              1.0, opts.tol, opts.seed + 0x5eed)[0];
    tree.largest_lyapunov = l1;
    tree.chimera = l1 > 0.01;
  }
  return tree;
}

std::string AggregationTree::to_json() const {
  using J = nlohmann::ordered_json;
  J root;
  root["node_count"] = node_count;
  J t = J::array();
  for (double v : tiers) t.push_back(num(v));
  root["tiers"] = t;
  root["stable"] = stable;
  root["chimera"] = chimera;
  root["largest_lyapunov"] = largest_lyapunov ? num(*largest_lyapunov) : J(nullptr);
  J levels_json = J::array();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& lvl = levels[l];
    J lj;
    lj["level"] = l + 1;
    lj["partition"] = lvl.partition;
    J cl = J::array();
    for (const auto& c : lvl.clusters) {
      J fibers = J::array();
      for (double f : c.fibers_tested) fibers.push_back(num(f));
      cl.push_back({{"members", c.members},
                    {"omega_hat", num(c.omega_hat)},
                    {"prc", {num(c.prc[0]), num(c.prc[1]), num(c.prc[2])}},
                    {"inputs", inputs_json(c.inputs)},
                    {"input_locked", c.input_locked},
                    {"fibers_tested", fibers}});
    }
    lj["clusters"] = cl;
    J cp = J::array();
    for (const auto& e : lvl.couplings) cp.push_back({{"from", e.from}, {"to", e.to}, {"k_hat", num(e.k_hat)}});
    lj["couplings"] = cp;
    lj["fit_rms"] = num(lvl.fit_rms);
    lj["validation_error"] = num(lvl.validation_error);
    lj["validated"] = lvl.validated;
    levels_json.push_back(lj);
  }
  root["levels"] = levels_json;
  return root.dump(2);
}

}  // namespace nhsync
