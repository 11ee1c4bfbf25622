#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "twinforge/cgan.hpp"

namespace twinforge::convergence {

using Eigen::VectorXd;

enum class Source { score_d, score_g, loss_d };

std::string source_name(Source s);
Source source_from_name(const std::string& name);

struct ConvergenceConfig {
  int smoothing_window = 100;  // iterations
  double threshold = 0.05;     // deviation from equilibrium
  Source source = Source::score_d;

  void validate() const;
  std::uint64_t hash() const;
};

struct ConvergenceMetric {
  long duration_iters = 0;       // iterations with smoothed deviation > threshold
  double area = 0.0;             // sum of max(0, deviation - threshold)
  long stabilization_iter = 0;   // last iteration whose deviation exceeds threshold
  long trace_length = 0;
  std::uint64_t gan_config_hash = 0;
  std::uint64_t convergence_config_hash = 0;
  std::uint64_t trace_hash = 0;

  std::string to_json_string(const ConvergenceConfig& cfg) const;
};

enum class Verdict { same_state, different_state };

struct DetectionVerdict {
  ConvergenceMetric baseline_metric;
  ConvergenceMetric probe_metric;
  double ratio = 0.0;
  double ratio_threshold = 1.5;
  Verdict verdict = Verdict::same_state;

  std::string to_json_string(const ConvergenceConfig& cfg) const;
};

// Centered moving average; windows shrink symmetrically at the edges and
// W = 1 is the identity.
VectorXd smooth(const VectorXd& series, int window);

ConvergenceMetric measure(const gan::TrainTrace& trace, const ConvergenceConfig& cfg);

DetectionVerdict compare(const ConvergenceMetric& baseline, const ConvergenceMetric& probe,
                         double ratio_threshold);

}  // namespace twinforge::convergence
