#include "twinforge/classifier.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "twinforge/common.hpp"

namespace twinforge::svm {

double SvmModel::decision(const FeatureVector& f) const {
  const VectorXd z = (f.values - scaler_mean).cwiseQuotient(scaler_std);
  return weights.dot(z) + bias;
}

int SvmModel::predict(const FeatureVector& f) const { return decision(f) >= 0.0 ? 1 : 0; }

double svm_objective(const VectorXd& w, double bias, double lambda,
                     const std::vector<VectorXd>& x, const std::vector<int>& y) {
  double hinge = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double yi = y[i] == 1 ? 1.0 : -1.0;
    hinge += std::max(0.0, 1.0 - yi * (w.dot(x[i]) + bias));
  }
  return 0.5 * lambda * w.squaredNorm() + hinge / static_cast<double>(x.size());
}

SvmModel train_svm(const std::vector<LabeledFeature>& data, double c, int epochs,
                   std::uint64_t seed) {
  if (!(c > 0.0)) throw std::runtime_error("train_svm: C must be positive");
  if (epochs < 1) throw std::runtime_error("train_svm: epochs must be >= 1");
  const auto n = data.size();
  bool has0 = false, has1 = false;
  for (const auto& d : data) (d.label == 1 ? has1 : has0) = true;
  if (!has0 || !has1) throw std::runtime_error("train_svm: single-class input");

  const int dim = static_cast<int>(data.front().feature.values.size());
  SvmModel model;
  model.c = c;
  model.scaler_mean.setZero(dim);
  for (const auto& d : data) model.scaler_mean += d.feature.values;
  model.scaler_mean /= static_cast<double>(n);
  VectorXd var = VectorXd::Zero(dim);
  for (const auto& d : data) var += (d.feature.values - model.scaler_mean).array().square().matrix();
  var /= static_cast<double>(n);
  model.scaler_std = var.cwiseSqrt().cwiseMax(1e-8);

  std::vector<VectorXd> x(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = (data[i].feature.values - model.scaler_mean).cwiseQuotient(model.scaler_std);
    y[i] = data[i].label;
  }

  const double lambda = 1.0 / (c * static_cast<double>(n));
  VectorXd w = VectorXd::Zero(dim);
  double bias = 0.0;
  VectorXd w_avg = VectorXd::Zero(dim);
  double bias_avg = 0.0;

  Rng rng(derive_seed(seed, {0x5f3759dfULL}));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::int64_t t = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t idx : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const double yi = y[idx] == 1 ? 1.0 : -1.0;
      const double margin = yi * (w.dot(x[idx]) + bias);
      w *= (1.0 - eta * lambda);
      if (margin < 1.0) {
        w += eta * yi * x[idx];
        bias += eta * yi;  // bias stays unregularized
      }
      w_avg += (w - w_avg) / static_cast<double>(t);
      bias_avg += (bias - bias_avg) / static_cast<double>(t);
    }
  }
  model.weights = w_avg;
  model.bias = bias_avg;
  return model;
}

SplitIndices holdout_split(const std::vector<std::pair<int, int>>& strata, double fraction,
                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::runtime_error("holdout_split: fraction must be in (0, 1)");
  std::map<std::pair<int, int>, std::vector<int>> groups;
  for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(static_cast<int>(i));

  SplitIndices out;
  for (auto& [key, idx] : groups) {
    const auto n = static_cast<std::int64_t>(idx.size());
    const auto n_test = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(n)));
    if (n_test < 1 || n_test >= n) {
      throw std::runtime_error("holdout_split: stratum (" + std::to_string(key.first) + "," +
                               std::to_string(key.second) + ") too small for fraction");
    }
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(key.first) + 101,
                               static_cast<std::uint64_t>(key.second) + 202}));
    rng.shuffle(idx);
    for (std::int64_t i = 0; i < n; ++i) {
      (i < n_test ? out.test : out.train).push_back(idx[static_cast<std::size_t>(i)]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

EvalReport evaluate(const SvmModel& model, const std::vector<LabeledFeature>& real_features) {
  if (real_features.empty()) throw std::runtime_error("evaluate: empty test set");
  EvalReport rep;
  rep.n_test = static_cast<long>(real_features.size());
  for (const auto& d : real_features) {
    const int pred = model.predict(d.feature);
    // row/col 0 = damaged(label 1), row/col 1 = healthy(label 0)
    const int row = d.label == 1 ? 0 : 1;
    const int col = pred == 1 ? 0 : 1;
    ++rep.confusion[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
  }
  rep.accuracy = static_cast<double>(rep.confusion[0][0] + rep.confusion[1][1]) /
                 static_cast<double>(rep.n_test);
  rep.fake_dynamics_flag = rep.accuracy >= kFakeDynamicsAccuracy;
  return rep;
}

EvalReport classical_baseline(const std::vector<LabeledFeature>& real_features, double fraction,
                              std::uint64_t seed, double c, int epochs) {
  std::vector<std::pair<int, int>> strata(real_features.size());
  for (std::size_t i = 0; i < real_features.size(); ++i) {
    strata[i] = {0, real_features[i].label};  // single source: real
  }
  const SplitIndices split = holdout_split(strata, fraction, seed);
  std::vector<LabeledFeature> train_set, test_set;
  for (int i : split.train) train_set.push_back(real_features[static_cast<std::size_t>(i)]);
  for (int i : split.test) test_set.push_back(real_features[static_cast<std::size_t>(i)]);
  const SvmModel model = train_svm(train_set, c, epochs, derive_seed(seed, {7}));
  EvalReport rep = evaluate(model, test_set);
  rep.split_fraction = fraction;
  rep.seed = seed;
  return rep;
}

std::string EvalReport::to_json_string() const {
  nlohmann::json j{{"confusion",
                    {{"damaged_as_damaged", confusion[0][0]},
                     {"damaged_as_healthy", confusion[0][1]},
                     {"healthy_as_damaged", confusion[1][0]},
                     {"healthy_as_healthy", confusion[1][1]}}},
                   {"accuracy", accuracy},
                   {"n_test", n_test},
                   {"split_fraction", split_fraction},
                   {"fake_dynamics_flag", fake_dynamics_flag},
                   {"seed", seed}};
  return j.dump(2);
}

std::string EvalReport::confusion_csv() const {
  std::ostringstream out;
  out << "true,predicted_damaged,predicted_healthy\n";
  out << "damaged," << confusion[0][0] << ',' << confusion[0][1] << '\n';
  out << "healthy," << confusion[1][0] << ',' << confusion[1][1] << '\n';
  return out.str();
}

}  // namespace twinforge::svm
