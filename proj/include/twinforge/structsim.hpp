#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "twinforge/signal_io.hpp"

namespace twinforge::sim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Lumped-mass shear chain: ground -- k0 -- m0 -- k1 -- ... -- m(n-1) -- kn.
// The top spring kn may be zero (free end); interior springs must be positive.
struct OscillatorModel {
  int dof = 0;
  VectorXd masses;       // n entries, kg
  VectorXd stiffnesses;  // n+1 chain values, N/m
  double damping_ratio = 0.02;
  double fs = 100.0;

  void validate() const;
};

struct DamageScenario {
  int element_index = 0;            // 0..n (spring index)
  double stiffness_reduction = 0.0; // fraction in [0, 1)
};

// Stationary excitation shaping shared by one measurement session.  The
// default is plain white noise; a nonzero ar1 coefficient tilts the force
// spectrum and hum_amplitude injects a narrowband sensor interference line
// into the measured accelerations (a configuration change, not damage).
struct Excitation {
  double ar1 = 0.0;
  double hum_frequency_hz = 0.0;
  double hum_amplitude = 0.0;  // relative to per-channel acceleration std
};

struct ModalResult {
  VectorXd frequencies_hz;  // ascending
  MatrixXd mode_shapes;     // columns
};

MatrixXd stiffness_matrix(const OscillatorModel& model);
OscillatorModel apply_damage(const OscillatorModel& model, const DamageScenario& scenario);

// Global stiffness degradation: every chain element reduced by the same
// fraction, which scales all frequencies by sqrt(1 - r) and preserves the
// mode shapes exactly.
OscillatorModel uniform_damage(const OscillatorModel& model, double reduction);

ModalResult modal(const OscillatorModel& model);

// White-noise forces at every mass, exact zero-order-hold discretization,
// per-DOF acceleration output channels.
RawRecord simulate(const OscillatorModel& model, const std::optional<DamageScenario>& scenario,
                   double duration_s, std::uint64_t seed, const Excitation& excitation = {});

// The canonical four-record fixture: healthy_a, healthy_b (different
// excitation session), mild (10% uniform stiffness cut), severe (40% cut).
// 2^16 samples at 100 Hz, 5 channels each.
std::map<std::string, RawRecord> make_benchmark(std::uint64_t seed);

// The model and scenarios behind make_benchmark, exposed for oracle tests.
OscillatorModel benchmark_model();
inline constexpr double kBenchmarkMildReduction = 0.10;
inline constexpr double kBenchmarkSevereReduction = 0.40;
Excitation benchmark_session_b();

}  // namespace twinforge::sim
