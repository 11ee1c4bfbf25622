#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "twinforge/psd.hpp"
#include "twinforge/signal_io.hpp"
#include "twinforge/tensor.hpp"

namespace twinforge::gan {

using nn::LayerKind;
using nn::LayerSpec;
using nn::Mode;
using nn::Tensor;

enum class ScalePreset { paper, desk };

std::string preset_name(ScalePreset p);
ScalePreset preset_from_name(const std::string& name);

struct GanConfig {
  int latent_dim = 100;
  int num_classes = 2;
  int signal_length = 1201;
  double lr = 0.0005;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int epochs = 500;
  int batch_size = 128;
  std::uint64_t seed = 1;
  ScalePreset scale_preset = ScalePreset::paper;
  double leaky_slope = 0.2;

  void validate() const;
  std::uint64_t hash() const;
  std::string to_json_string() const;
  static GanConfig from_json_string(const std::string& s);
  // Convenience: preset defaults (signal length, epochs) applied in place.
  void apply_preset(ScalePreset p);
};

// Static architecture of one conditional network: an optional trunk layer
// (the generator's projection), the label branch, channel concatenation, and
// the convolutional stack.
struct NetSpec {
  std::string role;  // "generator" | "discriminator"
  std::optional<LayerSpec> pre;
  LayerSpec label_embed;
  std::vector<LayerSpec> stack;
  int input_spatial = 0;
  int input_channels = 0;

  int trunk_channels() const;  // channels entering concat from the trunk side
  std::int64_t total_params() const;
  std::vector<LayerSpec> all_layers() const;
  // Spatial/channel shape after each stack layer, starting at the concat.
  std::vector<std::pair<int, int>> stack_shapes() const;
  std::string to_json_string() const;
  static NetSpec from_json_string(const std::string& s);
};

NetSpec build_generator(const GanConfig& cfg);
NetSpec build_discriminator(const GanConfig& cfg);

template <typename Scalar>
Tensor<Scalar> labels_tensor(const std::vector<int>& labels) {
  Tensor<Scalar> t(1, 1, static_cast<int>(labels.size()));
  for (std::size_t b = 0; b < labels.size(); ++b) t.data(0, static_cast<Eigen::Index>(b)) = static_cast<Scalar>(labels[b]);
  return t;
}

template <typename Scalar>
class CondNet {
 public:
  explicit CondNet(const NetSpec& spec) : spec_(spec), label_embed_(spec.label_embed) {
    if (spec.pre) pre_.emplace(*spec.pre);
    for (const auto& l : spec.stack) stack_.emplace_back(l);
  }

  const NetSpec& spec() const { return spec_; }

  void init_params(Rng& rng) {
    if (pre_) pre_->init_params(rng);
    label_embed_.init_params(rng);
    for (auto& l : stack_) l.init_params(rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& input, const std::vector<int>& labels, Mode mode,
                         bool cache) {
    if (static_cast<int>(labels.size()) != input.batch)
      throw std::runtime_error("label count does not match batch");
    Tensor<Scalar> trunk = pre_ ? pre_->forward(input, mode, cache) : input;
    Tensor<Scalar> lab = label_embed_.forward(labels_tensor<Scalar>(labels), mode, cache);
    Tensor<Scalar> h = nn::concat_channels(trunk, lab);
    for (auto& l : stack_) h = l.forward(h, mode, cache);
    return h;
  }

  // Returns the gradient w.r.t. the trunk input (empty-ish tensor for a
  // discriminator's label side, which is discrete).
  Tensor<Scalar> backward(const Tensor<Scalar>& out_grad, bool accumulate_param_grads = true) {
    Tensor<Scalar> g = out_grad;
    for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) {
      g = it->backward(g, accumulate_param_grads);
    }
    auto [g_trunk, g_lab] = nn::split_channels(g, spec_.trunk_channels());
    label_embed_.backward(g_lab, accumulate_param_grads);
    if (pre_) return pre_->backward(g_trunk, accumulate_param_grads);
    return g_trunk;
  }

  void zero_grads() {
    if (pre_) pre_->zero_grads();
    label_embed_.zero_grads();
    for (auto& l : stack_) l.zero_grads();
  }

  std::vector<nn::ParamView<Scalar>> param_views() {
    std::vector<nn::ParamView<Scalar>> v;
    if (pre_) pre_->collect_params(v);
    label_embed_.collect_params(v);
    for (auto& l : stack_) l.collect_params(v);
    return v;
  }

  void collect_state(std::vector<Scalar*>& ptrs, std::vector<Eigen::Index>& sizes) {
    if (pre_) pre_->collect_state(ptrs, sizes);
    label_embed_.collect_state(ptrs, sizes);
    for (auto& l : stack_) l.collect_state(ptrs, sizes);
  }

  std::vector<nn::Layer<Scalar>>& stack() { return stack_; }
  nn::Layer<Scalar>* pre() { return pre_ ? &*pre_ : nullptr; }
  nn::Layer<Scalar>& label_embed() { return label_embed_; }

 private:
  NetSpec spec_;
  std::optional<nn::Layer<Scalar>> pre_;
  nn::Layer<Scalar> label_embed_;
  std::vector<nn::Layer<Scalar>> stack_;
};

// Adversarial losses in stable log-space; logits in, scalars out.
double stable_softplus(double x);
double sigmoid(double x);

template <typename Scalar>
double discriminator_loss(const Eigen::Ref<const nn::Vector<Scalar>>& real_logits,
                          const Eigen::Ref<const nn::Vector<Scalar>>& fake_logits) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < real_logits.size(); ++i)
    loss += stable_softplus(-static_cast<double>(real_logits[i]));
  loss /= static_cast<double>(real_logits.size());
  double lf = 0.0;
  for (Eigen::Index i = 0; i < fake_logits.size(); ++i)
    lf += stable_softplus(static_cast<double>(fake_logits[i]));
  loss += lf / static_cast<double>(fake_logits.size());
  if (!std::isfinite(loss)) throw std::runtime_error("discriminator_loss: non-finite result");
  return loss;
}

template <typename Scalar>
double generator_loss(const Eigen::Ref<const nn::Vector<Scalar>>& fake_logits) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < fake_logits.size(); ++i)
    loss += stable_softplus(-static_cast<double>(fake_logits[i]));
  loss /= static_cast<double>(fake_logits.size());
  if (!std::isfinite(loss)) throw std::runtime_error("generator_loss: non-finite result");
  return loss;
}

struct TraceRow {
  long iter = 0;  // 1-based
  double score_g = 0.0;
  double score_d = 0.0;
  double loss_g = 0.0;
  double loss_d = 0.0;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  std::uint64_t config_hash = 0;
  long iterations_per_epoch = 0;
  int epochs = 0;
  double wall_seconds = 0.0;  // reporting only; never serialized into artifacts
};

void save_trace_csv(const TrainTrace& trace, const std::filesystem::path& path);
TrainTrace load_trace_csv(const std::filesystem::path& path);

long iterations_per_epoch(std::int64_t total_segments, int batch_size);

template <typename Scalar>
struct Checkpoint {
  GanConfig config;
  NetSpec gen_spec;
  NetSpec dis_spec;
  CondNet<Scalar> generator;
  CondNet<Scalar> discriminator;
  nn::AdamState<Scalar> adam_g;
  nn::AdamState<Scalar> adam_d;

  Checkpoint(const GanConfig& cfg, const NetSpec& g, const NetSpec& d)
      : config(cfg), gen_spec(g), dis_spec(d), generator(g), discriminator(d) {}
};

template <typename Scalar>
void save_checkpoint(Checkpoint<Scalar>& ckpt, const std::filesystem::path& path);
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

template <typename Scalar = float>
struct TrainResult {
  Checkpoint<Scalar> checkpoint;
  TrainTrace trace;
};

// Alternating conditional adversarial training: one discriminator step and
// one generator step per iteration, label-balanced mini-batches, incomplete
// trailing batches dropped.
template <typename Scalar = float>
TrainResult<Scalar> train(const SegmentSet& data, const GanConfig& cfg);

// Draws n class-conditioned segments from a trained generator (eval-mode
// batch normalization with running statistics).
template <typename Scalar>
std::vector<Segment> generate(Checkpoint<Scalar>& ckpt, int label, int n, std::uint64_t seed);

// One-sided PSD of a segment for report emission.
Psd spectrum(const Segment& segment, double fs);

// ---------------------------------------------------------------------------
// template implementations

namespace detail {
std::string checkpoint_header_json(const GanConfig& cfg, const NetSpec& g, const NetSpec& d,
                                   const std::string& scalar_name, std::int64_t step_g,
                                   std::int64_t step_d, std::uint64_t blob_hash,
                                   std::uint64_t blob_len);
void parse_checkpoint_header(const std::string& json, GanConfig& cfg, NetSpec& g, NetSpec& d,
                             std::string& scalar_name, std::int64_t& step_g, std::int64_t& step_d,
                             std::uint64_t& blob_hash, std::uint64_t& blob_len);
template <typename Scalar>
const char* scalar_name() {
  if constexpr (sizeof(Scalar) == 4) return "f32";
  else return "f64";
}
}  // namespace detail

template <typename Scalar>
void save_checkpoint(Checkpoint<Scalar>& ckpt, const std::filesystem::path& path) {
  std::vector<Scalar*> ptrs;
  std::vector<Eigen::Index> sizes;
  ckpt.generator.collect_state(ptrs, sizes);
  ckpt.discriminator.collect_state(ptrs, sizes);
  for (auto* adam : {&ckpt.adam_g, &ckpt.adam_d}) {
    if (adam->m.size() > 0) {
      ptrs.push_back(adam->m.data());
      sizes.push_back(adam->m.size());
      ptrs.push_back(adam->v.data());
      sizes.push_back(adam->v.size());
    }
  }
  std::uint64_t blob_len = 0;
  for (auto s : sizes) blob_len += static_cast<std::uint64_t>(s) * sizeof(Scalar);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    h = fnv1a64(ptrs[i], static_cast<std::size_t>(sizes[i]) * sizeof(Scalar), h);
  }
  const std::string header = detail::checkpoint_header_json(
      ckpt.config, ckpt.gen_spec, ckpt.dis_spec, detail::scalar_name<Scalar>(), ckpt.adam_g.step,
      ckpt.adam_d.step, h, blob_len);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write("TWCK", 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    out.write(reinterpret_cast<const char*>(ptrs[i]),
              static_cast<std::streamsize>(sizes[i]) * static_cast<std::streamsize>(sizeof(Scalar)));
  }
  if (!out) throw std::runtime_error("short write: " + path.string());
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in.good() || std::string(magic, 4) != "TWCK")
    throw std::runtime_error("corrupt checkpoint (bad magic): " + path.string());
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in.good()) throw std::runtime_error("corrupt checkpoint (truncated header)");

  GanConfig cfg;
  NetSpec gspec, dspec;
  std::string scalar_name;
  std::int64_t step_g = 0, step_d = 0;
  std::uint64_t blob_hash = 0, blob_len = 0;
  detail::parse_checkpoint_header(header, cfg, gspec, dspec, scalar_name, step_g, step_d,
                                  blob_hash, blob_len);
  if (scalar_name != detail::scalar_name<Scalar>())
    throw std::runtime_error("checkpoint scalar type is " + scalar_name);

  Checkpoint<Scalar> ckpt(cfg, gspec, dspec);
  ckpt.adam_g.lr = ckpt.adam_d.lr = cfg.lr;
  ckpt.adam_g.beta1 = ckpt.adam_d.beta1 = cfg.beta1;
  ckpt.adam_g.beta2 = ckpt.adam_d.beta2 = cfg.beta2;
  ckpt.adam_g.step = step_g;
  ckpt.adam_d.step = step_d;

  std::vector<Scalar*> ptrs;
  std::vector<Eigen::Index> sizes;
  ckpt.generator.collect_state(ptrs, sizes);
  ckpt.discriminator.collect_state(ptrs, sizes);
  std::int64_t net_state = 0;
  for (auto s : sizes) net_state += s;
  const std::int64_t adam_extra =
      static_cast<std::int64_t>(blob_len / sizeof(Scalar)) - net_state;
  if (adam_extra > 0) {
    // Adam moment vectors were saved; sized as half each of the remainder
    // split between the two optimizers in parameter order.
    auto views_g = ckpt.generator.param_views();
    auto views_d = ckpt.discriminator.param_views();
    Eigen::Index ng = 0, nd = 0;
    for (auto& v : views_g) ng += v.size;
    for (auto& v : views_d) nd += v.size;
    if (adam_extra != 2 * (ng + nd)) throw std::runtime_error("corrupt checkpoint (blob size)");
    ckpt.adam_g.m.setZero(ng);
    ckpt.adam_g.v.setZero(ng);
    ckpt.adam_d.m.setZero(nd);
    ckpt.adam_d.v.setZero(nd);
    ptrs.push_back(ckpt.adam_g.m.data());
    sizes.push_back(ng);
    ptrs.push_back(ckpt.adam_g.v.data());
    sizes.push_back(ng);
    ptrs.push_back(ckpt.adam_d.m.data());
    sizes.push_back(nd);
    ptrs.push_back(ckpt.adam_d.v.data());
    sizes.push_back(nd);
  } else if (adam_extra != 0) {
    throw std::runtime_error("corrupt checkpoint (blob size)");
  }

  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    in.read(reinterpret_cast<char*>(ptrs[i]),
            static_cast<std::streamsize>(sizes[i]) * static_cast<std::streamsize>(sizeof(Scalar)));
  }
  if (!in.good()) throw std::runtime_error("corrupt checkpoint (truncated blob)");

  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    h = fnv1a64(ptrs[i], static_cast<std::size_t>(sizes[i]) * sizeof(Scalar), h);
  }
  if (h != blob_hash) throw std::runtime_error("corrupt checkpoint (parameter hash mismatch)");
  return ckpt;
}

template <typename Scalar>
TrainResult<Scalar> train(const SegmentSet& data, const GanConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const auto it0 = data.counts_per_label.find(0);
  const auto it1 = data.counts_per_label.find(1);
  if (it0 == data.counts_per_label.end() || it1 == data.counts_per_label.end())
    throw std::runtime_error("train: both condition labels must be present");
  const int half = cfg.batch_size / 2;
  if (it0->second < half || it1->second < half)
    throw std::runtime_error("train: each label needs at least batch_size/2 segments");
  if (data.segment_length() != cfg.signal_length)
    throw std::runtime_error("train: segment length does not match configured signal length");

  const long iters = iterations_per_epoch(static_cast<std::int64_t>(data.segments.size()),
                                          cfg.batch_size);
  if (iters < 1) throw std::runtime_error("train: fewer segments than one batch");

  NetSpec gspec = build_generator(cfg);
  NetSpec dspec = build_discriminator(cfg);
  TrainResult<Scalar> result{Checkpoint<Scalar>(cfg, gspec, dspec), TrainTrace{}};
  auto& G = result.checkpoint.generator;
  auto& D = result.checkpoint.discriminator;
  Rng init_g(derive_seed(cfg.seed, {1}));
  Rng init_d(derive_seed(cfg.seed, {2}));
  G.init_params(init_g);
  D.init_params(init_d);

  auto& adam_g = result.checkpoint.adam_g;
  auto& adam_d = result.checkpoint.adam_d;
  for (auto* a : {&adam_g, &adam_d}) {
    a->lr = cfg.lr;
    a->beta1 = cfg.beta1;
    a->beta2 = cfg.beta2;
  }

  std::vector<int> pool0, pool1;
  for (std::size_t i = 0; i < data.segments.size(); ++i) {
    (data.segments[i].condition_label == 0 ? pool0 : pool1).push_back(static_cast<int>(i));
  }

  Rng rng(derive_seed(cfg.seed, {3}));
  const int B = cfg.batch_size;
  const int S = cfg.signal_length;

  std::vector<int> batch_labels(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) batch_labels[static_cast<std::size_t>(i)] = i < half ? 0 : 1;

  auto fill_real = [&](Tensor<Scalar>& x, std::size_t& c0, std::size_t& c1) {
    for (int i = 0; i < B; ++i) {
      auto& pool = i < half ? pool0 : pool1;
      auto& cur = i < half ? c0 : c1;
      if (cur >= pool.size()) {
        rng.shuffle(pool);
        cur = 0;
      }
      const auto& seg = data.segments[static_cast<std::size_t>(pool[cur++])];
      for (int t = 0; t < S; ++t) x.data(0, static_cast<Eigen::Index>(i) * S + t) = static_cast<Scalar>(seg.values[t]);
    }
  };
  auto draw_latents = [&](Tensor<Scalar>& z) {
    for (Eigen::Index i = 0; i < z.data.size(); ++i) z.data.data()[i] = static_cast<Scalar>(rng.normal());
  };

  auto views_g = G.param_views();
  auto views_d = D.param_views();

  result.trace.config_hash = cfg.hash();
  result.trace.iterations_per_epoch = iters;
  result.trace.epochs = cfg.epochs;
  result.trace.rows.reserve(static_cast<std::size_t>(iters) * cfg.epochs);

  long iter_global = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(pool0);
    rng.shuffle(pool1);
    std::size_t c0 = 0, c1 = 0;
    for (long it = 0; it < iters; ++it) {
      ++iter_global;

      // discriminator step on the shared real mini-batch plus fresh fakes
      Tensor<Scalar> x_real(S, 1, B);
      fill_real(x_real, c0, c1);
      Tensor<Scalar> z1(1, cfg.latent_dim, B);
      draw_latents(z1);
      Tensor<Scalar> x_fake = G.forward(z1, batch_labels, Mode::train, false);

      Tensor<Scalar> joint(S, 1, 2 * B);
      joint.data.leftCols(static_cast<Eigen::Index>(S) * B) = x_real.data;
      joint.data.rightCols(static_cast<Eigen::Index>(S) * B) = x_fake.data;
      std::vector<int> joint_labels = batch_labels;
      joint_labels.insert(joint_labels.end(), batch_labels.begin(), batch_labels.end());

      D.zero_grads();
      Tensor<Scalar> logits = D.forward(joint, joint_labels, Mode::train, true);
      const auto lrow = logits.data.row(0);
      double loss_d = 0.0, mean_sig_real = 0.0, mean_one_minus_sig_fake = 0.0;
      Tensor<Scalar> dlogits(1, 1, 2 * B);
      for (int i = 0; i < B; ++i) {
        const double l = static_cast<double>(lrow[i]);
        loss_d += stable_softplus(-l);
        mean_sig_real += sigmoid(l);
        dlogits.data(0, i) = static_cast<Scalar>((sigmoid(l) - 1.0) / B);
      }
      for (int i = B; i < 2 * B; ++i) {
        const double l = static_cast<double>(lrow[i]);
        loss_d += stable_softplus(l);
        mean_one_minus_sig_fake += 1.0 - sigmoid(l);
        dlogits.data(0, i) = static_cast<Scalar>(sigmoid(l) / B);
      }
      loss_d /= B;
      mean_sig_real /= B;
      mean_one_minus_sig_fake /= B;
      const double score_d = 0.5 * mean_sig_real + 0.5 * mean_one_minus_sig_fake;
      D.backward(dlogits, true);
      nn::adam_step(adam_d, views_d);

      // generator step on a fresh latent batch
      Tensor<Scalar> z2(1, cfg.latent_dim, B);
      draw_latents(z2);
      G.zero_grads();
      Tensor<Scalar> x_gen = G.forward(z2, batch_labels, Mode::train, true);
      Tensor<Scalar> glogits = D.forward(x_gen, batch_labels, Mode::train, true);
      double loss_g = 0.0, score_g = 0.0;
      Tensor<Scalar> dglogits(1, 1, B);
      for (int i = 0; i < B; ++i) {
        const double l = static_cast<double>(glogits.data(0, i));
        loss_g += stable_softplus(-l);
        score_g += sigmoid(l);
        dglogits.data(0, i) = static_cast<Scalar>((sigmoid(l) - 1.0) / B);
      }
      loss_g /= B;
      score_g /= B;
      Tensor<Scalar> dfake = D.backward(dglogits, false);
      G.backward(dfake, true);
      nn::adam_step(adam_g, views_g);

      if (!std::isfinite(loss_d) || !std::isfinite(loss_g)) {
        throw std::runtime_error("training diverged at iteration " + std::to_string(iter_global) +
                                 " (non-finite loss)");
      }
      result.trace.rows.push_back({iter_global, score_g, score_d, loss_g, loss_d});
    }
  }
  result.trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

template <typename Scalar>
std::vector<Segment> generate(Checkpoint<Scalar>& ckpt, int label, int n, std::uint64_t seed) {
  if (n < 1) throw std::runtime_error("generate: n must be >= 1");
  if (label < 0 || label >= ckpt.config.num_classes)
    throw std::runtime_error("generate: label out of range");
  Rng rng(derive_seed(seed, {0xfeedULL, static_cast<std::uint64_t>(label)}));
  std::vector<Segment> out;
  out.reserve(static_cast<std::size_t>(n));
  const int S = ckpt.config.signal_length;
  int done = 0;
  while (done < n) {
    const int b = std::min(n - done, ckpt.config.batch_size);
    Tensor<Scalar> z(1, ckpt.config.latent_dim, b);
    for (Eigen::Index i = 0; i < z.data.size(); ++i) z.data.data()[i] = static_cast<Scalar>(rng.normal());
    std::vector<int> labels(static_cast<std::size_t>(b), label);
    Tensor<Scalar> y = ckpt.generator.forward(z, labels, Mode::eval, false);
    for (int i = 0; i < b; ++i) {
      Segment seg;
      seg.values.resize(S);
      for (int t = 0; t < S; ++t) seg.values[t] = static_cast<double>(y.data(0, static_cast<Eigen::Index>(i) * S + t));
      seg.channel_index = 0;
      seg.window_index = done + i;
      seg.condition_label = label;
      seg.source_tag = "generated";
      out.push_back(std::move(seg));
    }
    done += b;
  }
  return out;
}

}  // namespace twinforge::gan
