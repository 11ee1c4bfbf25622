#include "twinforge/features.hpp"

#include <cmath>
#include <stdexcept>

namespace twinforge::feat {

const std::array<std::string, kFeatureDim>& feature_names() {
  static const std::array<std::string, kFeatureDim> names = {
      "mean",        "variance",    "skewness",       "kurtosis",       "rms",
      "dom_freq_1",  "dom_freq_2",  "dom_freq_3",     "spectral_centroid",
      "autocorr_lag_1", "autocorr_lag_2", "autocorr_lag_3", "autocorr_lag_4",
      "autocorr_lag_5", "autocorr_lag_6", "autocorr_lag_7", "autocorr_lag_8",
      "autocorr_lag_9", "autocorr_lag_10"};
  return names;
}

FeatureVector extract_features(const Segment& segment, double fs) {
  const VectorXd& x = segment.values;
  const auto n = x.size();
  if (n < 32) throw std::runtime_error("extract_features: segment too short (< 32)");

  FeatureVector f;
  f.values.setZero(kFeatureDim);

  const double mean = x.mean();
  const VectorXd d = x.array() - mean;
  const double var = d.squaredNorm() / static_cast<double>(n);
  const double sd = std::sqrt(var);
  if (sd <= 1e-12)
    throw std::runtime_error("extract_features: constant segment has no frequency content");
  const double m3 = d.array().cube().sum() / static_cast<double>(n);
  const double m4 = d.array().square().square().sum() / static_cast<double>(n);

  f.values[0] = mean;
  f.values[1] = var;
  f.values[2] = m3 / (sd * sd * sd);
  f.values[3] = m4 / (var * var);
  f.values[4] = std::sqrt(x.squaredNorm() / static_cast<double>(n));

  const Psd psd = welch_psd(x, fs);
  const auto peaks = psd_peak_indices(psd.power, 2);
  for (int i = 0; i < kDominantFreqs; ++i) {
    f.values[5 + i] = i < static_cast<int>(peaks.size())
                          ? psd.freq_hz[peaks[static_cast<std::size_t>(i)]]
                          : 0.0;
  }
  const double total_power = psd.power.sum();
  f.values[8] = total_power > 0.0 ? psd.freq_hz.dot(psd.power) / total_power : 0.0;

  // Biased autocorrelation normalized by lag zero.
  const double r0 = d.squaredNorm();
  for (int k = 1; k <= kAutocorrLags; ++k) {
    const double rk = d.head(n - k).dot(d.tail(n - k));
    f.values[8 + k] = rk / r0;
  }
  return f;
}

MatrixXd feature_matrix(const std::vector<FeatureVector>& features) {
  if (features.empty()) throw std::runtime_error("empty feature list");
  MatrixXd m(static_cast<Eigen::Index>(features.size()), kFeatureDim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].values.size() != kFeatureDim)
      throw std::runtime_error("feature layout mismatch");
    m.row(static_cast<Eigen::Index>(i)) = features[i].values.transpose();
  }
  return m;
}

PcaModel pca_fit(const std::vector<FeatureVector>& features, int k) {
  const auto n = static_cast<Eigen::Index>(features.size());
  if (k < 1 || k > kFeatureDim) throw std::runtime_error("pca_fit: K out of range");
  if (n < 2 || n < k) throw std::runtime_error("pca_fit: need at least max(2, K) samples");

  const MatrixXd X = feature_matrix(features);
  PcaModel model;
  model.mean = X.colwise().mean();
  MatrixXd centered = X.rowwise() - model.mean.transpose();
  model.scale.resize(kFeatureDim);
  for (int j = 0; j < kFeatureDim; ++j) {
    const double sd = std::sqrt(centered.col(j).squaredNorm() / static_cast<double>(n));
    // Near-constant features (e.g. the mean of standardized segments) get a
    // floored scale so numeric noise cannot dominate the covariance.
    model.scale[j] = 1.0 / std::max(sd, 1e-8);
  }
  const MatrixXd Z = centered * model.scale.asDiagonal();
  const MatrixXd cov = Z.transpose() * Z / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca_fit: eigensolver failed");

  model.components.resize(k, kFeatureDim);
  model.explained_variance.resize(k);
  for (int i = 0; i < k; ++i) {
    const int src = kFeatureDim - 1 - i;  // Eigen sorts ascending
    VectorXd comp = solver.eigenvectors().col(src);
    int arg = 0;
    comp.cwiseAbs().maxCoeff(&arg);
    if (comp[arg] < 0.0) comp = -comp;
    model.components.row(i) = comp.transpose();
    model.explained_variance[i] = std::max(0.0, solver.eigenvalues()[src]);
  }
  return model;
}

VectorXd pca_project(const PcaModel& model, const FeatureVector& feature) {
  if (feature.values.size() != kFeatureDim || model.mean.size() != kFeatureDim)
    throw std::runtime_error("pca_project: feature layout mismatch");
  const VectorXd z = (feature.values - model.mean).cwiseProduct(model.scale);
  return model.components * z;
}

}  // namespace twinforge::feat
