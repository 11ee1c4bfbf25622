#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "twinforge/tensor.hpp"

using namespace twinforge;
using nn::Layer;
using nn::LayerKind;
using nn::LayerSpec;
using nn::Mode;
using nn::Tensor;

namespace {

Tensor<double> random_tensor(int s, int c, int b, Rng& rng, double scale = 1.0) {
  Tensor<double> t(s, c, b);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = rng.normal(0.0, scale);
  return t;
}

Tensor<double> random_labels(int b, int num_classes, Rng& rng) {
  Tensor<double> t(1, 1, b);
  for (int i = 0; i < b; ++i) t.data(0, i) = double(rng.index(num_classes));
  return t;
}

}  // namespace

TEST_CASE("conv1d gradients match central finite differences") {
  Rng rng(42);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    LayerSpec spec;
    spec.kind = LayerKind::conv1d;
    spec.in_channels = 1 + int(rng.index(4));
    spec.out_channels = 1 + int(rng.index(4));
    spec.stride = 1 + int(rng.index(3));
    spec.pad = int(rng.index(3));
    const int s = 2 + int(rng.index(7));
    spec.filter = 1 + int(rng.index(std::min(5, s + 2 * spec.pad)));
    const int b = 1 + int(rng.index(4));
    Layer<double> layer(spec);
    layer.init_params(rng);
    auto res = gradcheck::check_layer(layer, random_tensor(s, spec.in_channels, b, rng), rng);
    worst = std::max(worst, res.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("tconv1d gradients match central finite differences") {
  Rng rng(43);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    LayerSpec spec;
    spec.kind = LayerKind::tconv1d;
    spec.in_channels = 1 + int(rng.index(4));
    spec.out_channels = 1 + int(rng.index(4));
    spec.stride = 1 + int(rng.index(3));
    spec.filter = 1 + int(rng.index(5));
    const int s = 1 + int(rng.index(8));
    const int full = (s - 1) * spec.stride + spec.filter;
    const int crop_total = int(rng.index(std::min(spec.filter, full)));
    spec.crop_lead = int(rng.index(crop_total + 1));
    spec.crop_trail = crop_total - spec.crop_lead;
    const int b = 1 + int(rng.index(4));
    Layer<double> layer(spec);
    layer.init_params(rng);
    auto res = gradcheck::check_layer(layer, random_tensor(s, spec.in_channels, b, rng), rng);
    worst = std::max(worst, res.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("batchnorm gradients match central finite differences") {
  Rng rng(44);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    LayerSpec spec;
    spec.kind = LayerKind::batchnorm;
    spec.in_channels = 1 + int(rng.index(4));
    spec.out_channels = spec.in_channels;
    const int s = 1 + int(rng.index(8));
    const int b = 2 + int(rng.index(3));
    Layer<double> layer(spec);
    layer.init_params(rng);
    // non-trivial scale/offset so their gradients are exercised off the
    // initialization point
    for (int c = 0; c < spec.in_channels; ++c) {
      layer.bn_scale()[c] = rng.uniform(0.5, 1.5);
      layer.bn_offset()[c] = rng.uniform(-0.5, 0.5);
    }
    auto res = gradcheck::check_layer(layer, random_tensor(s, spec.in_channels, b, rng), rng);
    worst = std::max(worst, res.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("batchnorm train-mode output is normalized per channel") {
  Rng rng(45);
  LayerSpec spec;
  spec.kind = LayerKind::batchnorm;
  spec.in_channels = 3;
  spec.out_channels = 3;
  Layer<double> layer(spec);
  layer.init_params(rng);
  Tensor<double> x = random_tensor(7, 3, 4, rng, 2.5);
  x.data.array() += 1.3;
  Tensor<double> y = layer.forward(x, Mode::train, false);
  for (int c = 0; c < 3; ++c) {
    const double mean = y.data.row(c).mean();
    const double var = (y.data.row(c).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-7);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("pointwise activation gradients") {
  Rng rng(46);
  for (LayerKind kind : {LayerKind::relu, LayerKind::leaky_relu, LayerKind::sigmoid}) {
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
      LayerSpec spec;
      spec.kind = kind;
      spec.leaky_slope = 0.2;
      const int s = 1 + int(rng.index(8));
      const int c = 1 + int(rng.index(4));
      const int b = 1 + int(rng.index(4));
      Layer<double> layer(spec);
      auto res = gradcheck::check_layer(layer, random_tensor(s, c, b, rng), rng);
      worst = std::max(worst, res.max_rel_err);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("leaky_relu negative-side derivative is the slope") {
  LayerSpec spec;
  spec.kind = LayerKind::leaky_relu;
  spec.leaky_slope = 0.2;
  Layer<double> layer(spec);
  Tensor<double> x(1, 1, 1);
  x.data(0, 0) = -1.0;
  layer.forward(x, Mode::train, true);
  Tensor<double> g(1, 1, 1);
  g.data(0, 0) = 1.0;
  Tensor<double> dx = layer.backward(g);
  CHECK(dx.data(0, 0) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("project_reshape gradients match central finite differences") {
  Rng rng(47);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    LayerSpec spec;
    spec.kind = LayerKind::project_reshape;
    spec.latent_dim = 1 + int(rng.index(4));
    spec.out_spatial = 1 + int(rng.index(4));
    spec.out_channels = 1 + int(rng.index(4));
    const int b = 1 + int(rng.index(4));
    Layer<double> layer(spec);
    layer.init_params(rng);
    auto res = gradcheck::check_layer(layer, random_tensor(1, spec.latent_dim, b, rng), rng);
    worst = std::max(worst, res.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("embed_reshape parameter gradients match central finite differences") {
  Rng rng(48);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    LayerSpec spec;
    spec.kind = LayerKind::embed_reshape;
    spec.num_classes = 2;
    spec.embed_dim = 1 + int(rng.index(4));
    spec.out_spatial = 1 + int(rng.index(8));
    const int b = 1 + int(rng.index(4));
    Layer<double> layer(spec);
    layer.init_params(rng);
    auto res = gradcheck::check_layer(layer, random_labels(b, 2, rng), rng,
                                      /*check_input_grad=*/false);
    worst = std::max(worst, res.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("concat forward stacks channels and backward splits gradients") {
  Rng rng(49);
  for (int trial = 0; trial < 20; ++trial) {
    const int s = 1 + int(rng.index(6));
    const int b = 1 + int(rng.index(3));
    const int ca = 1 + int(rng.index(3));
    const int cb = 1 + int(rng.index(3));
    Tensor<double> a = random_tensor(s, ca, b, rng);
    Tensor<double> bb = random_tensor(s, cb, b, rng);
    Tensor<double> cat = nn::concat_channels(a, bb);
    CHECK(cat.channels == ca + cb);
    CHECK(cat.data.topRows(ca) == a.data);
    CHECK(cat.data.bottomRows(cb) == bb.data);
    Tensor<double> g = random_tensor(s, ca + cb, b, rng);
    auto [ga, gb] = nn::split_channels(g, ca);
    CHECK(ga.data == g.data.topRows(ca));
    CHECK(gb.data == g.data.bottomRows(cb));
  }
}

TEST_CASE("conv shape algebra follows the strided formula") {
  LayerSpec spec;
  spec.kind = LayerKind::conv1d;
  spec.filter = 17;
  spec.stride = 2;
  spec.pad = 1;
  spec.in_channels = 2;
  spec.out_channels = 512;
  CHECK(spec.spatial_out(1201) == 594);

  LayerSpec t;
  t.kind = LayerKind::tconv1d;
  t.filter = 7;
  t.stride = 2;
  t.crop_lead = 1;
  t.crop_trail = 1;
  CHECK(t.spatial_out(599) == 1201);
}

TEST_CASE("param_count reproduces the published learnable counts") {
  LayerSpec proj;
  proj.kind = LayerKind::project_reshape;
  proj.latent_dim = 100;
  proj.out_spatial = 4;
  proj.out_channels = 1024;
  CHECK(nn::param_count(proj) == 413696);

  LayerSpec emb_g;
  emb_g.kind = LayerKind::embed_reshape;
  emb_g.num_classes = 2;
  emb_g.embed_dim = 100;
  emb_g.out_spatial = 4;
  CHECK(nn::param_count(emb_g) == 604);

  LayerSpec emb_d = emb_g;
  emb_d.out_spatial = 1201;
  CHECK(nn::param_count(emb_d) == 121501);

  LayerSpec proj1 = proj;
  proj1.latent_dim = 1;
  CHECK(nn::param_count(proj1) == 1 * 4096 + 4096);
}

TEST_CASE("adam first step moves each parameter by exactly lr") {
  nn::AdamState<double> st;
  st.lr = 0.25;
  st.epsilon = 0.0;
  Eigen::VectorXd p(3), g(3);
  p << 1.0, -2.0, 0.5;
  g << 0.3, -4.0, 1e-3;
  Eigen::VectorXd p0 = p;
  std::vector<nn::ParamView<double>> views{{p.data(), g.data(), 3}};
  nn::adam_step(st, views);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(std::abs(p[i] - p0[i]) - st.lr) < 1e-12);
    CHECK((p[i] - p0[i]) * g[i] < 0.0);  // descent direction
  }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  nn::AdamState<double> st;
  Eigen::VectorXd p(2), g = Eigen::VectorXd::Zero(2);
  p << 3.0, -1.0;
  Eigen::VectorXd p0 = p;
  std::vector<nn::ParamView<double>> views{{p.data(), g.data(), 2}};
  nn::adam_step(st, views);
  nn::adam_step(st, views);
  CHECK(p == p0);
}

TEST_CASE("adam two-step recurrence matches a hand-rolled oracle") {
  nn::AdamState<double> st;
  st.lr = 0.0005;
  st.beta1 = 0.5;
  st.beta2 = 0.999;
  st.epsilon = 1e-8;
  double p = 1.0, g = 1.0;
  std::vector<nn::ParamView<double>> views{{&p, &g, 1}};
  nn::adam_step(st, views);
  nn::adam_step(st, views);

  // independent recurrence evaluation
  double theta = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = 0.5 * m + 0.5 * 1.0;
    v = 0.999 * v + 0.001 * 1.0;
    const double mh = m / (1.0 - std::pow(0.5, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    theta -= 0.0005 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(p == doctest::Approx(theta).epsilon(1e-14));
}

TEST_CASE("adam rejects non-finite gradients") {
  nn::AdamState<double> st;
  double p = 1.0, g = std::numeric_limits<double>::quiet_NaN();
  std::vector<nn::ParamView<double>> views{{&p, &g, 1}};
  CHECK_THROWS(nn::adam_step(st, views));
}

TEST_CASE("backward before forward is rejected") {
  LayerSpec spec;
  spec.kind = LayerKind::relu;
  Layer<double> layer(spec);
  Tensor<double> g(2, 1, 1);
  CHECK_THROWS_WITH(layer.backward(g), doctest::Contains("backward before forward"));
}

TEST_CASE("tconv rejects cropping that consumes the whole output") {
  LayerSpec spec;
  spec.kind = LayerKind::tconv1d;
  spec.filter = 3;
  spec.stride = 1;
  spec.in_channels = 1;
  spec.out_channels = 1;
  spec.crop_lead = 3;
  spec.crop_trail = 2;
  Layer<double> layer(spec);
  Rng rng(1);
  layer.init_params(rng);
  Tensor<double> x(3, 1, 1);  // full = 5, crop total 5
  CHECK_THROWS(layer.forward(x, Mode::train, false));
}

TEST_CASE("forward results are deterministic for fixed seed and input") {
  Rng rng_a(7), rng_b(7);
  LayerSpec spec;
  spec.kind = LayerKind::conv1d;
  spec.filter = 3;
  spec.stride = 2;
  spec.pad = 1;
  spec.in_channels = 2;
  spec.out_channels = 3;
  Layer<double> la(spec), lb(spec);
  la.init_params(rng_a);
  lb.init_params(rng_b);
  Rng rx(9);
  Tensor<double> x = random_tensor(6, 2, 2, rx);
  Tensor<double> ya = la.forward(x, Mode::train, false);
  Tensor<double> yb = lb.forward(x, Mode::train, false);
  CHECK(ya.data == yb.data);
}
