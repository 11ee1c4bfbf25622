#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "twinforge/psd.hpp"
#include "twinforge/signal_io.hpp"

namespace twinforge::feat {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Fixed feature layout: moments, top spectral peaks, centroid, short-lag
// autocorrelation.  PCA models and SVM scalers are only portable against
// this exact ordering.
inline constexpr int kAutocorrLags = 10;
inline constexpr int kDominantFreqs = 3;
inline constexpr int kFeatureDim = 5 + kDominantFreqs + 1 + kAutocorrLags;  // 19

const std::array<std::string, kFeatureDim>& feature_names();

struct FeatureVector {
  VectorXd values;  // kFeatureDim entries
};

// Welch parameters are part of the feature definition: peak picking depends
// on them (segment 256, 50% overlap, Hann).
FeatureVector extract_features(const Segment& segment, double fs);

MatrixXd feature_matrix(const std::vector<FeatureVector>& features);

struct PcaModel {
  VectorXd mean;                // per-feature mean of the fitting set
  VectorXd scale;               // 1 / per-feature std (floored)
  MatrixXd components;          // K x F, orthonormal rows
  VectorXd explained_variance;  // descending
};

// PCA of the per-feature standardized covariance; deterministic sign
// convention (largest-magnitude entry of each component positive).
PcaModel pca_fit(const std::vector<FeatureVector>& features, int k);

VectorXd pca_project(const PcaModel& model, const FeatureVector& feature);

}  // namespace twinforge::feat
