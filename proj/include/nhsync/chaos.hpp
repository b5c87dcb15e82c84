#pragma once

// Poincare sections, return-time coherence and phase locking of chaotic
// oscillators.

#include <cstddef>
#include <span>
#include <vector>

#include "nhsync/ode.hpp"
#include "nhsync/sync.hpp"

namespace nhsync {

enum class CrossingDirection { Positive, Negative, Both };

// Hyperplane normal . x = offset. When half_normal is non-empty only points
// with half_normal . x > half_offset count.
struct SectionSpec {
  std::vector<double> normal;
  double offset = 0.0;
  CrossingDirection direction = CrossingDirection::Positive;
  std::vector<double> half_normal;
  double half_offset = 0.0;

  void validate(std::size_t dim) const;
};

// y = 0 on the x > 0 branch, y increasing.
SectionSpec rossler_section();

struct Crossing {
  double time = 0.0;
  std::vector<double> state;
};

std::vector<Crossing> section_crossings(const ode::Trajectory& traj, const SectionSpec& sec);
std::vector<double> crossing_times(const std::vector<Crossing>& crossings);

struct CoherenceReport {
  double c = 0.0;       // mean return time
  double spread = 0.0;  // standard deviation of return times
  double coherence_index = 0.0;
  std::size_t count = 0;  // number of return intervals
};

CoherenceReport coherence(std::span<const double> crossing_times);

// 2 pi (k + (t - t_k) / (t_{k+1} - t_k)), counted from the first crossing.
double chaotic_phase(std::span<const double> crossing_times, double t);

struct ChaosLockingOptions {
  double transient = 200.0;
  double horizon = 1000.0;
  double sample_dt = 0.05;
  double integrator_tol = 1e-9;
  LockingOptions locking{.m_max = 1, .n_max = 1};
  bool lyapunov = true;
  double lyapunov_renorm = 1.0;
};

// Compares the section phase of the oscillator with the forcing phase
// Omega t. rotation_numbers holds {oscillator, forcing}; lyapunov holds the
// largest exponent when requested.
SyncReport chaos_locking(const ode::SystemSpec& sys, double forcing_frequency,
                         const SectionSpec& sec, std::span<const double> x0,
                         const ChaosLockingOptions& opts = {});

}  // namespace nhsync
