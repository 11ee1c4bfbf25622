#include "twinforge/convergence.hpp"

#include <json.hpp>

#include <cmath>

namespace twinforge::convergence {

using nlohmann::json;

std::string source_name(Source s) {
  switch (s) {
    case Source::score_d: return "score_d";
    case Source::score_g: return "score_g";
    case Source::loss_d: return "loss_d";
  }
  throw std::runtime_error("unknown source");
}

Source source_from_name(const std::string& name) {
  if (name == "score_d") return Source::score_d;
  if (name == "score_g") return Source::score_g;
  if (name == "loss_d") return Source::loss_d;
  throw std::runtime_error("unknown convergence source: " + name);
}

void ConvergenceConfig::validate() const {
  if (smoothing_window < 1) throw std::runtime_error("smoothing window must be >= 1");
  if (!(threshold > 0.0)) throw std::runtime_error("threshold must be positive");
}

std::uint64_t ConvergenceConfig::hash() const {
  const std::string s = std::to_string(smoothing_window) + "|" + format_double(threshold) + "|" +
                        source_name(source);
  return fnv1a64(s);
}

VectorXd smooth(const VectorXd& series, int window) {
  if (series.size() == 0) throw std::runtime_error("smooth: empty series");
  if (window < 1) throw std::runtime_error("smooth: window must be >= 1");
  if (window == 1) return series;
  const int n = static_cast<int>(series.size());
  const int r = window / 2;  // half-width; W = 3 averages [i-1, i+1]
  VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - r);
    const int hi = std::min(n - 1, i + r);
    out[i] = series.segment(lo, hi - lo + 1).mean();
  }
  return out;
}

ConvergenceMetric measure(const gan::TrainTrace& trace, const ConvergenceConfig& cfg) {
  cfg.validate();
  if (trace.rows.empty()) throw std::runtime_error("measure: empty trace");
  const int n = static_cast<int>(trace.rows.size());
  VectorXd series(n);
  for (int i = 0; i < n; ++i) {
    const auto& r = trace.rows[static_cast<std::size_t>(i)];
    switch (cfg.source) {
      case Source::score_d: series[i] = r.score_d; break;
      case Source::score_g: series[i] = r.score_g; break;
      case Source::loss_d: series[i] = r.loss_d; break;
    }
  }
  const VectorXd sm = smooth(series, cfg.smoothing_window);

  double center;
  if (cfg.source == Source::loss_d) {
    // Loss has no universal equilibrium value; deviations are taken from the
    // terminal mean over the final tenth of the trace.
    const int tail = std::max(1, n / 10);
    center = sm.tail(tail).mean();
  } else {
    center = 0.5;
  }

  ConvergenceMetric m;
  m.trace_length = n;
  m.gan_config_hash = trace.config_hash;
  m.convergence_config_hash = cfg.hash();
  {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& r : trace.rows) {
      h = fnv1a64(&r.score_g, sizeof(double), h);
      h = fnv1a64(&r.score_d, sizeof(double), h);
    }
    m.trace_hash = h;
  }
  for (int i = 0; i < n; ++i) {
    const double dev = std::abs(sm[i] - center);
    if (dev > cfg.threshold) {
      ++m.duration_iters;
      m.area += dev - cfg.threshold;
      m.stabilization_iter = i + 1;  // 1-based iteration index
    }
  }
  return m;
}

DetectionVerdict compare(const ConvergenceMetric& baseline, const ConvergenceMetric& probe,
                         double ratio_threshold) {
  if (baseline.trace_length != probe.trace_length)
    throw std::runtime_error("compare: traces have different lengths; runs are not comparable");
  if (baseline.gan_config_hash != probe.gan_config_hash)
    throw std::runtime_error("compare: runs used different training configurations");
  if (baseline.convergence_config_hash != probe.convergence_config_hash)
    throw std::runtime_error("compare: metrics measured with different convergence configs");
  DetectionVerdict v;
  v.baseline_metric = baseline;
  v.probe_metric = probe;
  v.ratio_threshold = ratio_threshold;
  v.ratio = static_cast<double>(probe.duration_iters) /
            static_cast<double>(std::max<long>(1, baseline.duration_iters));
  v.verdict = v.ratio > ratio_threshold ? Verdict::different_state : Verdict::same_state;
  return v;
}

namespace {
json metric_json(const ConvergenceMetric& m, const ConvergenceConfig& cfg) {
  return json{{"duration_iters", m.duration_iters},
              {"area", m.area},
              {"stabilization_iter", m.stabilization_iter},
              {"trace_length", m.trace_length},
              {"trace_hash", hex64(m.trace_hash)},
              {"config",
               {{"smoothing_window", cfg.smoothing_window},
                {"threshold", cfg.threshold},
                {"source", source_name(cfg.source)}}}};
}
}  // namespace

std::string ConvergenceMetric::to_json_string(const ConvergenceConfig& cfg) const {
  return metric_json(*this, cfg).dump(2);
}

std::string DetectionVerdict::to_json_string(const ConvergenceConfig& cfg) const {
  json j{{"baseline", metric_json(baseline_metric, cfg)},
         {"probe", metric_json(probe_metric, cfg)},
         {"ratio", ratio},
         {"ratio_threshold", ratio_threshold},
         {"verdict", verdict == Verdict::different_state ? "different_state" : "same_state"}};
  return j.dump(2);
}

}  // namespace twinforge::convergence
