#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "support/oracles.hpp"
#include "twinforge/cgan.hpp"

using namespace twinforge;
using namespace twinforge::gan;

namespace {

GanConfig paper_config() {
  GanConfig cfg;
  cfg.apply_preset(ScalePreset::paper);
  return cfg;
}

GanConfig desk_config() {
  GanConfig cfg;
  cfg.apply_preset(ScalePreset::desk);
  return cfg;
}

// Synthetic two-class segment set: label-dependent sine frequency plus noise,
// standardized like real preprocessing output.
SegmentSet toy_segments(int per_label, int length, std::uint64_t seed) {
  SegmentSet set;
  set.sample_rate_hz = 100.0;
  Rng rng(seed);
  for (int label = 0; label < 2; ++label) {
    const double freq = label == 0 ? 4.0 : 9.0;
    for (int i = 0; i < per_label; ++i) {
      Segment s;
      s.values.resize(length);
      const double phase = rng.uniform(0.0, 6.28318530717958648);
      for (int t = 0; t < length; ++t) {
        s.values[t] = std::sin(2.0 * 3.14159265358979324 * freq * t / 100.0 + phase) +
                      0.3 * rng.normal();
      }
      s.values = standardize(s.values);
      s.channel_index = 0;
      s.window_index = i;
      s.condition_label = label;
      s.source_tag = "toy";
      set.segments.push_back(std::move(s));
    }
  }
  set.recount();
  return set;
}

}  // namespace

TEST_CASE("paper generator reproduces the published shape ladder and learnable counts") {
  const NetSpec g = build_generator(paper_config());
  REQUIRE(g.pre.has_value());
  CHECK(nn::param_count(*g.pre) == 413696);
  CHECK(nn::param_count(g.label_embed) == 604);

  // per-layer learnables down the stack
  std::vector<std::int64_t> expected = {2624512, 1024, 0, 1310976, 512, 0,
                                        393344,  256,  0, 41024,   128, 0, 449};
  REQUIRE(g.stack.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(nn::param_count(g.stack[i]) == expected[i]);
  }
  CHECK(g.total_params() == 4786525);

  const auto shapes = g.stack_shapes();
  CHECK(shapes.front() == std::pair<int, int>{4, 1025});
  std::vector<int> spatial;
  for (std::size_t i = 0; i < g.stack.size(); ++i) {
    if (g.stack[i].kind == nn::LayerKind::tconv1d) spatial.push_back(shapes[i + 1].first);
  }
  CHECK(spatial == std::vector<int>{8, 36, 150, 599, 1201});
  CHECK(shapes.back() == std::pair<int, int>{1201, 1});
}

TEST_CASE("paper discriminator reproduces the published shape ladder and learnable counts") {
  const NetSpec d = build_discriminator(paper_config());
  CHECK(!d.pre.has_value());
  CHECK(nn::param_count(d.label_embed) == 121501);
  std::vector<std::int64_t> expected = {17920, 0, 2097408, 0, 524416, 0, 65600, 0, 513};
  REQUIRE(d.stack.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(nn::param_count(d.stack[i]) == expected[i]);
  }
  CHECK(d.total_params() == 2827358);

  const auto shapes = d.stack_shapes();
  std::vector<int> spatial;
  for (std::size_t i = 0; i < d.stack.size(); ++i) {
    if (d.stack[i].kind == nn::LayerKind::conv1d) spatial.push_back(shapes[i + 1].first);
  }
  CHECK(spatial == std::vector<int>{594, 146, 34, 8, 1});
}

TEST_CASE("desk preset closes the shape algebra at 301 with a single logit") {
  const NetSpec g = build_generator(desk_config());
  const NetSpec d = build_discriminator(desk_config());
  CHECK(g.stack_shapes().back() == std::pair<int, int>{301, 1});
  CHECK(d.stack_shapes().back() == std::pair<int, int>{1, 1});
  CHECK(g.pre->out_channels == 1024 / 8);
}

TEST_CASE("latent_dim=1 still builds with the closed-form projection count") {
  GanConfig cfg = paper_config();
  cfg.latent_dim = 1;
  const NetSpec g = build_generator(cfg);
  CHECK(nn::param_count(*g.pre) == 1 * 4096 + 4096);
}

TEST_CASE("paper-preset forward pass realizes the table shapes end to end") {
  GanConfig cfg = paper_config();
  CondNet<float> g(build_generator(cfg));
  CondNet<float> d(build_discriminator(cfg));
  Rng rng(5);
  g.init_params(rng);
  d.init_params(rng);
  nn::Tensor<float> z(1, cfg.latent_dim, 2);
  for (Eigen::Index i = 0; i < z.data.size(); ++i) z.data.data()[i] = float(rng.normal());
  auto fake = g.forward(z, {0, 1}, nn::Mode::eval, false);
  CHECK(fake.spatial == 1201);
  CHECK(fake.channels == 1);
  auto logits = d.forward(fake, {0, 1}, nn::Mode::eval, false);
  CHECK(logits.spatial == 1);
  CHECK(logits.channels == 1);
  CHECK(logits.batch == 2);
  CHECK(logits.all_finite());
}

TEST_CASE("equilibrium loss values are exact") {
  Eigen::VectorXd zeros = Eigen::VectorXd::Zero(8);
  const double ld = discriminator_loss<double>(zeros, zeros);
  CHECK(std::abs(ld - 2.0 * std::log(2.0)) <= 1e-12);
  const double lg = generator_loss<double>(zeros);
  CHECK(std::abs(lg - std::log(2.0)) <= 1e-12);
}

TEST_CASE("perfect discriminator drives the loss to zero") {
  Eigen::VectorXd real = Eigen::VectorXd::Constant(4, 40.0);
  Eigen::VectorXd fake = Eigen::VectorXd::Constant(4, -40.0);
  CHECK(discriminator_loss<double>(real, fake) < 1e-12);
  CHECK(generator_loss<double>(Eigen::VectorXd::Constant(4, 40.0)) < 1e-12);
}

TEST_CASE("scalar loss evaluations match closed forms") {
  Eigen::VectorXd real(1), fake(1);
  real << 1.0;
  fake << -1.0;
  CHECK(discriminator_loss<double>(real, fake) ==
        doctest::Approx(2.0 * stable_softplus(-1.0)).epsilon(1e-14));
  Eigen::VectorXd g(1);
  g << -2.0;
  CHECK(generator_loss<double>(g) == doctest::Approx(stable_softplus(2.0)).epsilon(1e-14));
}

TEST_CASE("training iteration arithmetic matches the published run") {
  CHECK(iterations_per_epoch(1575, 128) == 12);
  CHECK(iterations_per_epoch(1575, 128) * 500 == 6000);
  CHECK(iterations_per_epoch(2170, 128) == 16);
}

TEST_CASE("score/loss identity holds on singleton batches") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const double lr = rng.normal(0.0, 2.0);
    const double lf = rng.normal(0.0, 2.0);
    Eigen::VectorXd r(1), f(1);
    r << lr;
    f << lf;
    const double a = sigmoid(lr);
    const double b = 1.0 - sigmoid(lf);
    const double loss = discriminator_loss<double>(r, f);
    CHECK(loss == doctest::Approx(-std::log(a) - std::log(b)).epsilon(1e-9));
  }
}

TEST_CASE("tiny desk training is deterministic and records the full trace") {
  GanConfig cfg = desk_config();
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 77;
  SegmentSet data = toy_segments(24, cfg.signal_length, 3);

  auto r1 = train<float>(data, cfg);
  auto r2 = train<float>(data, cfg);
  REQUIRE(r1.trace.rows.size() == r2.trace.rows.size());
  CHECK(r1.trace.rows.size() == std::size_t(2 * iterations_per_epoch(48, 16)));
  for (std::size_t i = 0; i < r1.trace.rows.size(); ++i) {
    CHECK(r1.trace.rows[i].score_d == r2.trace.rows[i].score_d);
    CHECK(r1.trace.rows[i].score_g == r2.trace.rows[i].score_g);
    CHECK(r1.trace.rows[i].loss_d == r2.trace.rows[i].loss_d);
    CHECK(r1.trace.rows[i].loss_g == r2.trace.rows[i].loss_g);
  }
  for (const auto& row : r1.trace.rows) {
    CHECK(row.score_d >= 0.0);
    CHECK(row.score_d <= 1.0);
    CHECK(row.score_g >= 0.0);
    CHECK(row.score_g <= 1.0);
  }
}

TEST_CASE("one small gradient step decreases each adversarial loss") {
  // line-probe sanity on a fixed batch: plain steepest descent with a tiny
  // rate must reduce the loss it descends
  GanConfig cfg = desk_config();
  cfg.batch_size = 8;
  SegmentSet data = toy_segments(8, cfg.signal_length, 5);
  CondNet<double> g(build_generator(cfg));
  CondNet<double> d(build_discriminator(cfg));
  Rng rng(13);
  g.init_params(rng);
  d.init_params(rng);

  const int B = 8, S = cfg.signal_length;
  nn::Tensor<double> x_real(S, 1, B);
  std::vector<int> labels;
  for (int i = 0; i < B; ++i) {
    labels.push_back(data.segments[i].condition_label);
    for (int t = 0; t < S; ++t) x_real.data(0, Eigen::Index(i) * S + t) = data.segments[i].values[t];
  }
  nn::Tensor<double> z(1, cfg.latent_dim, B);
  for (Eigen::Index i = 0; i < z.data.size(); ++i) z.data.data()[i] = rng.normal();

  auto d_loss_on_fixed = [&]() {
    auto fake = g.forward(z, labels, nn::Mode::eval, false);
    auto lr = d.forward(x_real, labels, nn::Mode::eval, false);
    auto lf = d.forward(fake, labels, nn::Mode::eval, false);
    Eigen::VectorXd vr = lr.data.row(0).transpose().cast<double>();
    Eigen::VectorXd vf = lf.data.row(0).transpose().cast<double>();
    return discriminator_loss<double>(vr, vf);
  };

  const double before = d_loss_on_fixed();
  // one steepest-descent step on D for the same batch
  {
    auto fake = g.forward(z, labels, nn::Mode::train, false);
    nn::Tensor<double> joint(S, 1, 2 * B);
    joint.data.leftCols(Eigen::Index(S) * B) = x_real.data;
    joint.data.rightCols(Eigen::Index(S) * B) = fake.data;
    std::vector<int> jl = labels;
    jl.insert(jl.end(), labels.begin(), labels.end());
    d.zero_grads();
    auto logits = d.forward(joint, jl, nn::Mode::train, true);
    nn::Tensor<double> dl(1, 1, 2 * B);
    for (int i = 0; i < B; ++i) dl.data(0, i) = (sigmoid(logits.data(0, i)) - 1.0) / B;
    for (int i = B; i < 2 * B; ++i) dl.data(0, i) = sigmoid(logits.data(0, i)) / B;
    d.backward(dl, true);
    for (auto& v : d.param_views()) {
      Eigen::Map<Eigen::VectorXd> p(v.value, v.size);
      Eigen::Map<const Eigen::VectorXd> gr(v.grad, v.size);
      p -= 1e-6 * gr;
    }
  }
  const double after = d_loss_on_fixed();
  CHECK(after < before);
}

TEST_CASE("checkpoint round-trips bit-exactly and rejects tampering") {
  GanConfig cfg = desk_config();
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 3;
  SegmentSet data = toy_segments(8, cfg.signal_length, 9);
  auto result = train<float>(data, cfg);

  const auto dir = std::filesystem::temp_directory_path() / "twinforge_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.twck";
  save_checkpoint(result.checkpoint, path);
  auto loaded = load_checkpoint<float>(path);

  auto seg_a = generate(result.checkpoint, 1, 3, 123);
  auto seg_b = generate(loaded, 1, 3, 123);
  REQUIRE(seg_a.size() == seg_b.size());
  for (std::size_t i = 0; i < seg_a.size(); ++i) {
    CHECK(seg_a[i].values == seg_b[i].values);
  }

  // flip one byte in the parameter blob
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    char c;
    f.seekg(-1, std::ios::end);
    f.get(c);
    f.seekp(-1, std::ios::end);
    c = static_cast<char>(c ^ 0x01);
    f.put(c);
  }
  CHECK_THROWS_WITH(load_checkpoint<float>(path), doctest::Contains("hash"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("generate is seed-deterministic and validates arguments") {
  GanConfig cfg = desk_config();
  cfg.epochs = 1;
  cfg.batch_size = 8;
  SegmentSet data = toy_segments(8, cfg.signal_length, 1);
  auto result = train<float>(data, cfg);
  auto a = generate(result.checkpoint, 0, 5, 42);
  auto b = generate(result.checkpoint, 0, 5, 42);
  auto c = generate(result.checkpoint, 0, 5, 43);
  REQUIRE(a.size() == 5);
  CHECK(a[0].values == b[0].values);
  CHECK(a[0].values != c[0].values);
  CHECK(a[0].source_tag == "generated");
  CHECK_THROWS(generate(result.checkpoint, 0, 0, 1));
  CHECK_THROWS(generate(result.checkpoint, 2, 1, 1));
}

TEST_CASE("training rejects missing labels and undersized pools") {
  GanConfig cfg = desk_config();
  cfg.epochs = 1;
  cfg.batch_size = 16;
  SegmentSet data = toy_segments(4, cfg.signal_length, 2);  // 4 per label < 8
  CHECK_THROWS(train<float>(data, cfg));

  SegmentSet one_label = toy_segments(16, cfg.signal_length, 2);
  std::erase_if(one_label.segments, [](const Segment& s) { return s.condition_label == 1; });
  one_label.recount();
  CHECK_THROWS_WITH(train<float>(one_label, cfg), doctest::Contains("both condition labels"));
}

TEST_CASE("spectrum locates a pure tone and zero signal has zero power") {
  Segment s;
  s.values.resize(1201);
  for (int t = 0; t < 1201; ++t) s.values[t] = std::sin(2.0 * 3.14159265358979324 * 4.0 * t / 100.0);
  const Psd p = spectrum(s, 100.0);
  int arg = 0;
  p.power.maxCoeff(&arg);
  const double bin = p.freq_hz[1] - p.freq_hz[0];
  CHECK(std::abs(p.freq_hz[arg] - 4.0) <= bin + 1e-12);

  Segment z;
  z.values = Eigen::VectorXd::Zero(1201);
  const Psd pz = spectrum(z, 100.0);
  CHECK(pz.power.maxCoeff() == 0.0);
}
