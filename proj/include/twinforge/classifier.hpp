#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "twinforge/features.hpp"

namespace twinforge::svm {

using Eigen::VectorXd;
using feat::FeatureVector;

struct LabeledFeature {
  FeatureVector feature;
  int label = 0;  // 0 healthy, 1 damaged
};

struct SvmModel {
  VectorXd weights;
  double bias = 0.0;
  double c = 1.0;
  VectorXd scaler_mean;
  VectorXd scaler_std;  // floored positive

  int predict(const FeatureVector& f) const;
  double decision(const FeatureVector& f) const;
};

// Deterministic Pegasos-style subgradient descent on the soft-margin hinge
// objective lambda/2 |w|^2 + mean hinge, lambda = 1/(C*n); the returned model
// uses the averaged iterate.
SvmModel train_svm(const std::vector<LabeledFeature>& data, double c, int epochs,
                   std::uint64_t seed);

// Regularized hinge objective of a raw (w, b) in scaled feature space.
double svm_objective(const VectorXd& w, double bias, double lambda,
                     const std::vector<VectorXd>& x, const std::vector<int>& y);

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> test;
};

// Stratified holdout: per stratum, round(fraction * n) items go to the test
// side; deterministic under the seed.
SplitIndices holdout_split(const std::vector<std::pair<int, int>>& strata, double fraction,
                           std::uint64_t seed);

struct EvalReport {
  // rows: true {damaged(1), healthy(0)}; cols: predicted {damaged, healthy}
  std::array<std::array<long, 2>, 2> confusion{{{0, 0}, {0, 0}}};
  double accuracy = 0.0;
  double split_fraction = 0.0;
  long n_test = 0;
  bool fake_dynamics_flag = false;
  std::uint64_t seed = 0;

  std::string to_json_string() const;
  std::string confusion_csv() const;
};

EvalReport evaluate(const SvmModel& model, const std::vector<LabeledFeature>& real_features);

// The no-generation comparison pipeline: split real features, train and test
// on real data only, same report format.
EvalReport classical_baseline(const std::vector<LabeledFeature>& real_features, double fraction,
                              std::uint64_t seed, double c = 1.0, int epochs = 200);

inline constexpr double kFakeDynamicsAccuracy = 0.99;

}  // namespace twinforge::svm
