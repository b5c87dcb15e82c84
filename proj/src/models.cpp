#include "nhsync/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nhsync/error.hpp"

namespace nhsync::models {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

void PoincareParams::validate() const {
  require(alpha > 0 && std::isfinite(alpha), ErrorCode::InvalidArgument,
          "PoincareParams: alpha must be positive");
  require(a > 0 && std::isfinite(a), ErrorCode::InvalidArgument,
          "PoincareParams: a must be positive");
  require(gamma >= 0 && std::isfinite(gamma), ErrorCode::InvalidArgument,
          "PoincareParams: gamma must be non-negative");
  require(std::isfinite(omega), ErrorCode::InvalidArgument, "PoincareParams: omega not finite");
  if (forcing == Forcing::SingleTone) {
    require(std::isfinite(forcing_frequency) && forcing_frequency != 0.0,
            ErrorCode::InvalidArgument, "PoincareParams: single-tone frequency must be nonzero");
  }
}

std::vector<double> PoincareParams::forcing_frequencies() const {
  switch (forcing) {
    case Forcing::TwoTone:
      return {kTwoPi, 4.0};
    case Forcing::SingleTone:
      return {forcing_frequency};
    case Forcing::Zero:
      break;
  }
  return {};
}

double PoincareParams::forcing_value(std::span<const double> phases) const {
  double f = 0.0;
  for (double ph : phases) f += std::sin(ph);
  return f;
}

double PoincareParams::forcing_at(double t) const {
  switch (forcing) {
    case Forcing::TwoTone:
      return std::sin(kTwoPi * t) + std::sin(4.0 * t);
    case Forcing::SingleTone:
      return std::sin(forcing_frequency * t);
    case Forcing::Zero:
      break;
  }
  return 0.0;
}

ode::SystemSpec poincare_cartesian(const PoincareParams& p) {
  p.validate();
  auto field = [p](double t, std::span<const double> x, std::span<double> dx) {
    const double r = std::hypot(x[0], x[1]);
    const double q = p.smooth_q ? p.alpha * (r * r - p.a * p.a) : p.alpha * (r - p.a);
    dx[0] = -q * x[0] - p.omega * x[1];
    dx[1] = p.omega * x[0] - q * x[1] + p.gamma * p.forcing_at(t);
  };
  auto jac = [p](double, std::span<const double> x, std::span<double> J) {
    const double r = std::hypot(x[0], x[1]);
    double q, qx, qy;
    if (p.smooth_q) {
      q = p.alpha * (r * r - p.a * p.a);
      qx = 2 * p.alpha * x[0];
      qy = 2 * p.alpha * x[1];
    } else {
      q = p.alpha * (r - p.a);
      // The printed q is not differentiable at the origin; use the zero subgradient there.
      qx = r > 0 ? p.alpha * x[0] / r : 0.0;
      qy = r > 0 ? p.alpha * x[1] / r : 0.0;
    }
    J[0] = -q - x[0] * qx;
    J[1] = -p.omega - x[0] * qy;
    J[2] = p.omega - x[1] * qx;
    J[3] = -q - x[1] * qy;
  };
  ode::SystemSpec sys(2, field, jac, p.forcing_frequencies());
  if (!p.smooth_q) {
    sys.set_nonsmooth_flag(
        [](double, std::span<const double> x) { return x[0] == 0.0 && x[1] == 0.0; });
  }
  return sys;
}

PoincarePolar::PoincarePolar(const PoincareParams& p)
    : PhaseNormalSystem(1, 1, p.forcing_frequencies()), p_(p) {
  p_.validate();
}

namespace {
void check_radius(double r) {
  if (!(r > 0.0)) {
    std::ostringstream os;
    os << "Poincare polar chart: r = " << r << " is outside r > 0";
    throw Error(ErrorCode::Domain, os.str());
  }
}
}  // namespace

void PoincarePolar::phase_rate(std::span<const double> theta, std::span<const double> r,
                               std::span<const double> phi, std::span<double> out) const {
  check_radius(r[0]);
  const double f = p_.forcing_value(phi);
  out[0] = p_.omega + p_.gamma / r[0] * f * std::cos(theta[0]);
}

void PoincarePolar::normal_rate(std::span<const double> theta, std::span<const double> r,
                                std::span<const double> phi, std::span<double> out) const {
  check_radius(r[0]);
  const double f = p_.forcing_value(phi);
  const double rr = r[0];
  const double q = p_.smooth_q ? p_.alpha * (rr * rr - p_.a * p_.a) : p_.alpha * (rr - p_.a);
  out[0] = -q * rr + p_.gamma * f * std::sin(theta[0]);
}

void PoincarePolar::partials(std::span<const double> theta, std::span<const double> r,
                             std::span<const double> phi, ChartPartials& out) const {
  check_radius(r[0]);
  const double f = p_.forcing_value(phi);
  const double rr = r[0];
  const double s = std::sin(theta[0]), c = std::cos(theta[0]);
  out.theta_theta.assign(1, -p_.gamma / rr * f * s);
  out.theta_r.assign(1, -p_.gamma / (rr * rr) * f * c);
  out.r_theta.assign(1, p_.gamma * f * c);
  const double rr_deriv = p_.smooth_q ? -p_.alpha * (3 * rr * rr - p_.a * p_.a)
                                      : -p_.alpha * (2 * rr - p_.a);
  out.r_r.assign(1, rr_deriv);
}

double PoincarePolar::unperturbed_normal_rate() const {
  return p_.smooth_q ? 2 * p_.alpha * p_.a * p_.a : p_.alpha * p_.a;
}

std::shared_ptr<const PoincarePolar> poincare_polar(const PoincareParams& p) {
  return std::make_shared<const PoincarePolar>(p);
}

// ---------------------------------------------------------------------------

ode::SystemSpec class1_neuron(const ClassINeuronParams& p) {
  auto drive = p.drive;
  return ode::SystemSpec(
      2,
      [drive](double t, std::span<const double> x, std::span<double> dx) {
        dx[0] = x[1] + 1.0 - std::cos(x[0]);
        dx[1] = drive ? drive(t) : 0.0;
      },
      [](double, std::span<const double> x, std::span<double> J) {
        J[0] = std::sin(x[0]);
        J[1] = 1.0;
        J[2] = 0.0;
        J[3] = 0.0;
      });
}

double class1_period(double mu) {
  require(mu > 0, ErrorCode::Domain, "class1_period: mu must be positive");
  return kTwoPi / std::sqrt(mu * mu + 2.0 * mu);
}

double class1_rest_state(double mu) {
  require(mu < 0 && mu > -2, ErrorCode::Domain, "class1_rest_state: need -2 < mu < 0");
  return -std::acos(1.0 + mu);
}

// ---------------------------------------------------------------------------

void CircuitParams::validate() const {
  require(b > 0 && c > 0 && e > 0 && f > 0, ErrorCode::InvalidArgument,
          "CircuitParams: b, c, e, f must be positive");
}

ode::SystemSpec circuit(const CircuitParams& p) {
  p.validate();
  return ode::SystemSpec(
      3,
      [p](double, std::span<const double> x, std::span<double> dx) {
        const double z = x[2];
        dx[0] = p.a * x[0] - p.b * x[1];
        dx[1] = p.c * x[0] - p.e * z;
        dx[2] = -p.f * x[1] - (p.g1 * z + p.g3 * z * z * z);
      },
      [p](double, std::span<const double> x, std::span<double> J) {
        const double z = x[2];
        J[0] = p.a, J[1] = -p.b, J[2] = 0;
        J[3] = p.c, J[4] = 0, J[5] = -p.e;
        J[6] = 0, J[7] = -p.f, J[8] = -(p.g1 + 3 * p.g3 * z * z);
      });
}

ode::SystemSpec rossler(const RosslerParams& p) {
  std::vector<double> freqs;
  if (p.forcing_amplitude != 0.0) freqs.push_back(p.forcing_frequency);
  return ode::SystemSpec(
      3,
      [p](double t, std::span<const double> x, std::span<double> dx) {
        dx[0] = -x[1] - x[2] + p.forcing_amplitude * std::cos(p.forcing_frequency * t);
        dx[1] = x[0] + p.a * x[1];
        dx[2] = p.b + x[2] * (x[0] - p.c);
      },
      [p](double, std::span<const double> x, std::span<double> J) {
        J[0] = 0, J[1] = -1, J[2] = -1;
        J[3] = 1, J[4] = p.a, J[5] = 0;
        J[6] = x[2], J[7] = 0, J[8] = x[0] - p.c;
      },
      std::move(freqs));
}

// ---------------------------------------------------------------------------

AdlerPhase::AdlerPhase(const AdlerParams& p) : PhaseNormalSystem(1, 0, {}), p_(p) {
  require(p.harmonic >= 1, ErrorCode::InvalidArgument, "AdlerParams: harmonic must be >= 1");
}

void AdlerPhase::phase_rate(std::span<const double> theta, std::span<const double>,
                            std::span<const double>, std::span<double> out) const {
  out[0] = p_.delta - p_.k * std::sin(p_.harmonic * theta[0]);
}

std::shared_ptr<const AdlerPhase> adler_phase(const AdlerParams& p) {
  return std::make_shared<const AdlerPhase>(p);
}

ode::SystemSpec adler(const AdlerParams& p) {
  require(p.harmonic >= 1, ErrorCode::InvalidArgument, "AdlerParams: harmonic must be >= 1");
  return ode::SystemSpec(
      1,
      [p](double, std::span<const double> x, std::span<double> dx) {
        dx[0] = p.delta - p.k * std::sin(p.harmonic * x[0]);
      },
      [p](double, std::span<const double> x, std::span<double> J) {
        J[0] = -p.k * p.harmonic * std::cos(p.harmonic * x[0]);
      });
}

// ---------------------------------------------------------------------------

LinearGraph::LinearGraph(const LinearGraphParams& p) : PhaseNormalSystem(1, 1, {}), p_(p) {
  require(p.lambda > 0, ErrorCode::InvalidArgument, "LinearGraphParams: lambda must be positive");
}

void LinearGraph::phase_rate(std::span<const double>, std::span<const double>,
                             std::span<const double>, std::span<double> out) const {
  out[0] = p_.omega;
}

void LinearGraph::normal_rate(std::span<const double> theta, std::span<const double> r,
                              std::span<const double>, std::span<double> out) const {
  out[0] = -p_.lambda * (r[0] - p_.c * std::sin(theta[0]));
}

void LinearGraph::partials(std::span<const double> theta, std::span<const double>,
                           std::span<const double>, ChartPartials& out) const {
  out.theta_theta.assign(1, 0.0);
  out.theta_r.assign(1, 0.0);
  out.r_theta.assign(1, p_.lambda * p_.c * std::cos(theta[0]));
  out.r_r.assign(1, -p_.lambda);
}

std::shared_ptr<const LinearGraph> linear_graph(const LinearGraphParams& p) {
  return std::make_shared<const LinearGraph>(p);
}

// ---------------------------------------------------------------------------

CoupledPair diffusive_pair(ode::SystemSpec first, ode::SystemSpec second, double strength) {
  require(first.dim() == second.dim(), ErrorCode::InvalidArgument,
          "diffusive_pair: systems must have equal dimension");
  auto g1 = [](double, std::span<const double> x1, std::span<const double> x2,
               std::span<double> out) {
    for (std::size_t i = 0; i < x1.size(); ++i) out[i] = x2[i] - x1[i];
  };
  auto g2 = [](double, std::span<const double> x1, std::span<const double> x2,
               std::span<double> out) {
    for (std::size_t i = 0; i < x2.size(); ++i) out[i] = x1[i] - x2[i];
  };
  return CoupledPair{std::move(first), std::move(second), g1, g2, strength};
}

ode::SystemSpec coupled_pair(const CoupledPair& cp) {
  const std::size_t n1 = cp.first.dim(), n2 = cp.second.dim(), n = n1 + n2;
  require(static_cast<bool>(cp.g1) && static_cast<bool>(cp.g2), ErrorCode::InvalidArgument,
          "coupled_pair: coupling terms required");
  auto field = [cp, n1, n2](double t, std::span<const double> x, std::span<double> dx) {
    auto x1 = x.first(n1);
    auto x2 = x.subspan(n1, n2);
    cp.first.eval(t, x1, dx.first(n1));
    cp.second.eval(t, x2, dx.subspan(n1, n2));
    if (cp.strength == 0.0) return;
    double g[64];
    std::vector<double> heap;
    double* buf = g;
    if (n1 + n2 > 64) {
      heap.resize(n1 + n2);
      buf = heap.data();
    }
    cp.g1(t, x1, x2, std::span<double>(buf, n1));
    cp.g2(t, x1, x2, std::span<double>(buf + n1, n2));
    for (std::size_t i = 0; i < n1 + n2; ++i) dx[i] += cp.strength * buf[i];
  };
  // Block-diagonal factor Jacobians plus a central-difference coupling block.
  auto jac = [cp, n1, n2, n](double t, std::span<const double> x, std::span<double> J) {
    std::fill(J.begin(), J.end(), 0.0);
    std::vector<double> J1(n1 * n1), J2(n2 * n2);
    cp.first.jacobian(t, x.first(n1), J1);
    cp.second.jacobian(t, x.subspan(n1, n2), J2);
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t j = 0; j < n1; ++j) J[i * n + j] = J1[i * n1 + j];
    for (std::size_t i = 0; i < n2; ++i)
      for (std::size_t j = 0; j < n2; ++j) J[(n1 + i) * n + n1 + j] = J2[i * n2 + j];
    if (cp.strength == 0.0) return;
    std::vector<double> xp(x.begin(), x.end()), gp(n), gm(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = std::max(1e-6, 1e-6 * std::abs(x[j]));
      xp[j] = x[j] + h;
      cp.g1(t, std::span<const double>(xp).first(n1), std::span<const double>(xp).subspan(n1),
            std::span<double>(gp).first(n1));
      cp.g2(t, std::span<const double>(xp).first(n1), std::span<const double>(xp).subspan(n1),
            std::span<double>(gp).subspan(n1));
      xp[j] = x[j] - h;
      cp.g1(t, std::span<const double>(xp).first(n1), std::span<const double>(xp).subspan(n1),
            std::span<double>(gm).first(n1));
      cp.g2(t, std::span<const double>(xp).first(n1), std::span<const double>(xp).subspan(n1),
            std::span<double>(gm).subspan(n1));
      xp[j] = x[j];
      for (std::size_t i = 0; i < n; ++i) J[i * n + j] += cp.strength * (gp[i] - gm[i]) / (2 * h);
    }
  };
  std::vector<double> freqs = cp.first.forcing_frequencies();
  for (double w : cp.second.forcing_frequencies()) freqs.push_back(w);
  return ode::SystemSpec(n, field, jac, std::move(freqs));
}

}  // namespace nhsync::models
