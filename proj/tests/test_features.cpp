#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numbers>

#include "support/oracles.hpp"
#include "twinforge/features.hpp"

using namespace twinforge;
using namespace twinforge::feat;

namespace {

Segment sine_segment(double freq, double fs, int n, double phase = 0.0) {
  Segment s;
  s.values.resize(n);
  for (int t = 0; t < n; ++t) s.values[t] = std::sin(2.0 * std::numbers::pi * freq * t / fs + phase);
  return s;
}

Segment noise_segment(int n, Rng& rng) {
  Segment s;
  s.values.resize(n);
  for (int t = 0; t < n; ++t) s.values[t] = rng.normal();
  return s;
}

std::vector<FeatureVector> random_features(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FeatureVector> out(static_cast<std::size_t>(n));
  for (auto& f : out) {
    f.values.resize(kFeatureDim);
    for (int j = 0; j < kFeatureDim; ++j) f.values[j] = rng.normal(double(j % 3), 1.0 + 0.1 * j);
  }
  return out;
}

}  // namespace

TEST_CASE("feature layout is fixed and fully named") {
  CHECK(kFeatureDim == 19);
  CHECK(feature_names().front() == "mean");
  CHECK(feature_names()[5] == "dom_freq_1");
  CHECK(feature_names()[8] == "spectral_centroid");
  CHECK(feature_names().back() == "autocorr_lag_10");
}

TEST_CASE("moments of a standardized segment are as preprocessed") {
  Rng rng(3);
  Segment s = noise_segment(1201, rng);
  s.values = standardize(s.values);
  const FeatureVector f = extract_features(s, 100.0);
  CHECK(std::abs(f.values[0]) < 1e-6);          // mean
  CHECK(std::abs(f.values[1] - 1.0) < 1e-6);    // variance
  CHECK(std::abs(f.values[4] - 1.0) < 1e-6);    // rms of zero-mean unit-std
}

TEST_CASE("pure sine: dominant frequency within one bin and cosine autocorrelation") {
  const Segment s = sine_segment(4.0, 100.0, 1201);
  const FeatureVector f = extract_features(s, 100.0);
  const double bin = 100.0 / 256.0;
  CHECK(std::abs(f.values[5] - 4.0) <= bin + 1e-12);
  for (int k = 1; k <= 10; ++k) {
    const double expect = std::cos(2.0 * std::numbers::pi * 4.0 * k / 100.0);
    CHECK(std::abs(f.values[8 + k] - expect) < 0.02);
  }
}

TEST_CASE("white noise autocorrelation stays within the sampling band") {
  std::vector<double> worst;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const Segment s = noise_segment(1201, rng);
    const FeatureVector f = extract_features(s, 100.0);
    double w = 0.0;
    for (int k = 1; k <= 10; ++k) w = std::max(w, std::abs(f.values[8 + k]));
    worst.push_back(w);
  }
  std::sort(worst.begin(), worst.end());
  CHECK(worst[10] < 3.0 / std::sqrt(1201.0));  // median over seeds
}

TEST_CASE("constant segments are rejected for frequency features") {
  Segment s;
  s.values = Eigen::VectorXd::Constant(256, 2.0);
  CHECK_THROWS(extract_features(s, 100.0));
  Segment tiny;
  tiny.values = Eigen::VectorXd::Ones(8);
  CHECK_THROWS(extract_features(tiny, 100.0));
}

TEST_CASE("feature extraction is translation/scale covariant before standardization") {
  Rng rng(5);
  Segment s = noise_segment(512, rng);
  const FeatureVector f = extract_features(s, 100.0);
  Segment t;
  t.values = 3.0 * s.values.array() + 7.0;
  const FeatureVector g = extract_features(t, 100.0);
  CHECK(g.values[0] == doctest::Approx(3.0 * f.values[0] + 7.0).epsilon(1e-9));
  CHECK(g.values[1] == doctest::Approx(9.0 * f.values[1]).epsilon(1e-9));
}

TEST_CASE("pca of points on a line recovers the diagonal direction") {
  std::vector<FeatureVector> data;
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    FeatureVector f;
    f.values = Eigen::VectorXd::Zero(kFeatureDim);
    const double t = rng.normal();
    f.values[0] = t;
    f.values[1] = t;  // y = x in the first two coordinates
    data.push_back(f);
  }
  const PcaModel m = pca_fit(data, 2);
  CHECK(std::abs(m.components(0, 0) - 1.0 / std::sqrt(2.0)) < 1e-6);
  CHECK(std::abs(m.components(0, 1) - 1.0 / std::sqrt(2.0)) < 1e-6);
  CHECK(m.explained_variance[1] < 1e-8);
}

TEST_CASE("pca eigenvalues match the Jacobi oracle on random data") {
  const auto data = random_features(60, 11);
  const PcaModel m = pca_fit(data, 3);

  // independent oracle: standardized covariance + Jacobi rotations
  Eigen::MatrixXd X = feature_matrix(data);
  Eigen::VectorXd mean = X.colwise().mean();
  Eigen::MatrixXd c = X.rowwise() - mean.transpose();
  for (int j = 0; j < kFeatureDim; ++j) {
    const double sd = std::sqrt(c.col(j).squaredNorm() / double(X.rows()));
    c.col(j) /= std::max(sd, 1e-8);
  }
  Eigen::MatrixXd cov = c.transpose() * c / double(X.rows());
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  oracles::jacobi_eigen(cov, values, vectors);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(m.explained_variance[i] - values[i]) < 1e-8);
    // direction agreement up to sign
    const double dot = std::abs(m.components.row(i).dot(vectors.col(i).transpose()));
    CHECK(dot == doctest::Approx(1.0).epsilon(1e-6));
  }
  // orthonormal rows
  Eigen::MatrixXd gram = m.components * m.components.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
  // descending variances
  CHECK(m.explained_variance[0] >= m.explained_variance[1]);
  CHECK(m.explained_variance[1] >= m.explained_variance[2]);
}

TEST_CASE("projection geometry: mean to origin, mean+component to a basis vector") {
  const auto data = random_features(40, 13);
  const PcaModel m = pca_fit(data, 3);

  FeatureVector mean_f;
  mean_f.values = m.mean;
  CHECK(pca_project(m, mean_f).cwiseAbs().maxCoeff() < 1e-9);

  FeatureVector shifted;
  shifted.values = m.mean + m.components.row(0).transpose().cwiseQuotient(m.scale);
  const Eigen::VectorXd p = pca_project(m, shifted);
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(p[1]) < 1e-9);
  CHECK(std::abs(p[2]) < 1e-9);
}

TEST_CASE("projection preserves inner products within the component span") {
  const auto data = random_features(50, 17);
  const PcaModel m = pca_fit(data, kFeatureDim);  // full basis
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    FeatureVector a, b;
    a.values.resize(kFeatureDim);
    b.values.resize(kFeatureDim);
    for (int j = 0; j < kFeatureDim; ++j) {
      a.values[j] = rng.normal();
      b.values[j] = rng.normal();
    }
    const Eigen::VectorXd za = (a.values - m.mean).cwiseProduct(m.scale);
    const Eigen::VectorXd zb = (b.values - m.mean).cwiseProduct(m.scale);
    const double direct = za.dot(zb);
    const double projected = pca_project(m, a).dot(pca_project(m, b));
    CHECK(projected == doctest::Approx(direct).epsilon(1e-8));
  }
}

TEST_CASE("explained variance sums to at most the standardized total") {
  const auto data = random_features(45, 23);
  const PcaModel m3 = pca_fit(data, 3);
  CHECK(m3.explained_variance.sum() <= kFeatureDim + 1e-9);
  const PcaModel mf = pca_fit(data, kFeatureDim);
  // all features here are non-degenerate, so the standardized total is F
  CHECK(mf.explained_variance.sum() == doctest::Approx(double(kFeatureDim)).epsilon(1e-8));
}

TEST_CASE("pca_fit validates sizes") {
  const auto data = random_features(10, 29);
  CHECK_THROWS(pca_fit(data, 0));
  CHECK_THROWS(pca_fit(data, kFeatureDim + 1));
  CHECK_THROWS(pca_fit({data[0]}, 1));
}
