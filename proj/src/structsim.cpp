#include "twinforge/structsim.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace twinforge::sim {

void OscillatorModel::validate() const {
  if (dof < 1) throw std::runtime_error("model needs at least one degree of freedom");
  if (masses.size() != dof) throw std::runtime_error("masses must have dof entries");
  if (stiffnesses.size() != dof + 1) throw std::runtime_error("stiffnesses must have dof+1 chain entries");
  for (int i = 0; i < dof; ++i) {
    if (!(masses[i] > 0.0)) throw std::runtime_error("masses must be positive");
    if (!(stiffnesses[i] > 0.0)) throw std::runtime_error("interior stiffnesses must be positive");
  }
  if (stiffnesses[dof] < 0.0) throw std::runtime_error("top stiffness must be non-negative");
  if (!(damping_ratio > 0.0 && damping_ratio < 1.0))
    throw std::runtime_error("damping ratio must be in (0, 1)");
  if (!(fs > 0.0)) throw std::runtime_error("sample rate must be positive");
}

MatrixXd stiffness_matrix(const OscillatorModel& m) {
  MatrixXd K = MatrixXd::Zero(m.dof, m.dof);
  for (int i = 0; i < m.dof; ++i) {
    K(i, i) = m.stiffnesses[i] + m.stiffnesses[i + 1];
    if (i + 1 < m.dof) {
      K(i, i + 1) = -m.stiffnesses[i + 1];
      K(i + 1, i) = -m.stiffnesses[i + 1];
    }
  }
  return K;
}

OscillatorModel apply_damage(const OscillatorModel& model, const DamageScenario& s) {
  if (s.element_index < 0 || s.element_index > model.dof)
    throw std::runtime_error("damage element index out of range");
  if (s.stiffness_reduction < 0.0 || s.stiffness_reduction >= 1.0)
    throw std::runtime_error("stiffness reduction must be in [0, 1)");
  OscillatorModel out = model;
  out.stiffnesses[s.element_index] *= (1.0 - s.stiffness_reduction);
  return out;
}

OscillatorModel uniform_damage(const OscillatorModel& model, double reduction) {
  if (reduction < 0.0 || reduction >= 1.0)
    throw std::runtime_error("stiffness reduction must be in [0, 1)");
  OscillatorModel out = model;
  out.stiffnesses *= (1.0 - reduction);
  return out;
}

ModalResult modal(const OscillatorModel& model) {
  model.validate();
  const MatrixXd K = stiffness_matrix(model);
  const MatrixXd M = model.masses.asDiagonal();
  Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> solver(K, M);
  if (solver.info() != Eigen::Success) throw std::runtime_error("modal eigensolver failed");
  ModalResult r;
  r.frequencies_hz = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt() / (2.0 * std::numbers::pi);
  r.mode_shapes = solver.eigenvectors();
  return r;
}

RawRecord simulate(const OscillatorModel& base, const std::optional<DamageScenario>& scenario,
                   double duration_s, std::uint64_t seed, const Excitation& exc) {
  OscillatorModel model = scenario ? apply_damage(base, *scenario) : base;
  model.validate();
  const int n = model.dof;
  const auto samples = static_cast<std::int64_t>(std::floor(duration_s * model.fs));
  if (samples < 2) throw std::runtime_error("simulation duration too short");

  const MatrixXd K = stiffness_matrix(model);
  const VectorXd inv_m = model.masses.cwiseInverse();
  const MatrixXd MinvK = inv_m.asDiagonal() * K;

  // Rayleigh damping fitted to the modal ratio at the first and last modes.
  const ModalResult mo = modal(model);
  const double w1 = 2.0 * std::numbers::pi * mo.frequencies_hz[0];
  const double wn = 2.0 * std::numbers::pi * mo.frequencies_hz[n - 1];
  const double alpha = 2.0 * model.damping_ratio * w1 * wn / (w1 + wn);
  const double beta = 2.0 * model.damping_ratio / (w1 + wn);
  const MatrixXd C = alpha * MatrixXd(model.masses.asDiagonal()) + beta * K;
  const MatrixXd MinvC = inv_m.asDiagonal() * C;

  MatrixXd A = MatrixXd::Zero(2 * n, 2 * n);
  A.topRightCorner(n, n) = MatrixXd::Identity(n, n);
  A.bottomLeftCorner(n, n) = -MinvK;
  A.bottomRightCorner(n, n) = -MinvC;
  MatrixXd B = MatrixXd::Zero(2 * n, n);
  B.bottomRows(n) = MatrixXd(inv_m.asDiagonal());

  const double dt = 1.0 / model.fs;
  const MatrixXd Ad = (A * dt).exp();
  const MatrixXd Bd = A.partialPivLu().solve((Ad - MatrixXd::Identity(2 * n, 2 * n)) * B);

  {
    const Eigen::VectorXcd ev = Eigen::EigenSolver<MatrixXd>(Ad, false).eigenvalues();
    if (ev.cwiseAbs().maxCoeff() >= 1.0)
      throw std::runtime_error("unstable discretization (spectral radius >= 1)");
  }

  Rng rng(derive_seed(seed, {0x51u}));
  const std::int64_t burn_in = static_cast<std::int64_t>(8.0 * model.fs);
  VectorXd x = VectorXd::Zero(2 * n);
  VectorXd w(n), w_prev = VectorXd::Zero(n);
  const double ar_norm = std::sqrt(1.0 + exc.ar1 * exc.ar1);

  MatrixXd acc(n, samples);
  for (std::int64_t k = -burn_in; k < samples; ++k) {
    for (int i = 0; i < n; ++i) w[i] = rng.normal();
    if (exc.ar1 != 0.0) {
      w = (w + exc.ar1 * w_prev) / ar_norm;
      w_prev = w;
    }
    // acceleration of the state entering this step under the held force
    if (k >= 0) acc.col(k) = -MinvK * x.head(n) - MinvC * x.tail(n) + inv_m.cwiseProduct(w);
    x = Ad * x + Bd * w;
  }

  if (exc.hum_amplitude > 0.0) {
    VectorXd ch_std(n);
    for (int c = 0; c < n; ++c) {
      const double mean = acc.row(c).mean();
      ch_std[c] = std::sqrt((acc.row(c).array() - mean).square().sum() / double(samples));
    }
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::int64_t k = 0; k < samples; ++k) {
      const double s = std::sin(2.0 * std::numbers::pi * exc.hum_frequency_hz * double(k) / model.fs + phase);
      for (int c = 0; c < n; ++c) acc(c, k) += exc.hum_amplitude * ch_std[c] * s;
    }
  }

  RawRecord rec;
  rec.channels = n;
  rec.samples_per_channel = samples;
  rec.sample_rate_hz = model.fs;
  rec.data = std::move(acc);
  rec.source_tag = scenario ? ("damaged_e" + std::to_string(scenario->element_index) + "_r" +
                               std::to_string(scenario->stiffness_reduction))
                            : "undamaged";
  rec.validate();
  return rec;
}

OscillatorModel benchmark_model() {
  OscillatorModel m;
  m.dof = 5;
  m.masses = VectorXd::Constant(5, 1.0);
  // Uniform fixed-fixed chain tuned so the first mode sits near 4 Hz.
  m.stiffnesses = VectorXd::Constant(6, 2358.0);
  m.damping_ratio = 0.02;
  m.fs = 100.0;
  return m;
}

Excitation benchmark_session_b() {
  Excitation e;
  e.ar1 = 0.30;
  e.hum_frequency_hz = 23.7;
  e.hum_amplitude = 0.25;
  return e;
}

std::map<std::string, RawRecord> make_benchmark(std::uint64_t seed) {
  const OscillatorModel model = benchmark_model();
  const double duration = 65536.0 / model.fs;
  std::map<std::string, RawRecord> out;
  out["healthy_a"] = simulate(model, std::nullopt, duration, derive_seed(seed, {11}));
  out["healthy_b"] =
      simulate(model, std::nullopt, duration, derive_seed(seed, {12}), benchmark_session_b());
  out["mild"] = simulate(uniform_damage(model, kBenchmarkMildReduction), std::nullopt, duration,
                         derive_seed(seed, {13}));
  out["severe"] = simulate(uniform_damage(model, kBenchmarkSevereReduction), std::nullopt,
                           duration, derive_seed(seed, {14}));
  out["healthy_a"].source_tag = "healthy_a";
  out["healthy_b"].source_tag = "healthy_b";
  out["mild"].source_tag = "mild";
  out["severe"].source_tag = "severe";
  return out;
}

}  // namespace twinforge::sim
