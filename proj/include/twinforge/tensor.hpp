#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "twinforge/common.hpp"

namespace twinforge::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Activation tensor (spatial S, channels C, batch B).  The paper-style second
// singleton spatial axis is collapsed; storage is channels-fast: column
// (t + b*S) holds the C-vector at spatial position t of sample b.
template <typename Scalar>
struct Tensor {
  int spatial = 0;
  int channels = 0;
  int batch = 0;
  Matrix<Scalar> data;  // (C, S*B)

  Tensor() = default;
  Tensor(int s, int c, int b)
      : spatial(s), channels(c), batch(b),
        data(Matrix<Scalar>::Zero(c, static_cast<Eigen::Index>(s) * b)) {}

  Eigen::Index cols() const { return static_cast<Eigen::Index>(spatial) * batch; }
  auto sample(int b) { return data.middleCols(static_cast<Eigen::Index>(b) * spatial, spatial); }
  auto sample(int b) const { return data.middleCols(static_cast<Eigen::Index>(b) * spatial, spatial); }
  bool all_finite() const { return data.allFinite(); }
};

enum class LayerKind {
  project_reshape,
  embed_reshape,
  concat,
  tconv1d,
  conv1d,
  batchnorm,
  relu,
  leaky_relu,
  sigmoid,
};

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

enum class Mode { train, eval };

// Static description of one layer; everything needed to rebuild it from a
// checkpoint header and to run the shape algebra without parameters.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int filter = 0;
  int stride = 1;
  int pad = 0;         // conv1d
  int crop_lead = 0;   // tconv1d output cropping
  int crop_trail = 0;
  int in_channels = 0;
  int out_channels = 0;
  int in_spatial = 0;   // project/embed targets; conv fills at forward
  int out_spatial = 0;  // project/embed produce this many positions
  int num_classes = 0;
  int embed_dim = 0;
  int latent_dim = 0;
  double leaky_slope = 0.2;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;

  // Output length of the spatial recurrence for a given input length.
  int spatial_out(int s_in) const;
  int channels_out(int c_in) const;
};

std::int64_t param_count(const LayerSpec& spec);
std::int64_t param_count(const std::vector<LayerSpec>& specs);

template <typename Scalar>
struct ParamView {
  Scalar* value = nullptr;
  Scalar* grad = nullptr;
  Eigen::Index size = 0;
};

template <typename Scalar>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(spec) { allocate(); }

  const LayerSpec& spec() const { return spec_; }

  void init_params(Rng& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& in, Mode mode, bool cache);
  // Returns the input gradient and accumulates parameter gradients unless
  // accumulate_param_grads is false (used when only input grads are needed).
  Tensor<Scalar> backward(const Tensor<Scalar>& out_grad, bool accumulate_param_grads = true);

  void zero_grads();
  void collect_params(std::vector<ParamView<Scalar>>& out);
  // Learnables plus batchnorm running statistics; the checkpoint payload.
  void collect_state(std::vector<Scalar*>& ptrs, std::vector<Eigen::Index>& sizes);

  // Exposed for tests.
  Matrix<Scalar>& weights() { return W_; }
  Vector<Scalar>& bias() { return b_; }
  Matrix<Scalar>& embedding() { return embed_; }
  Vector<Scalar>& bn_scale() { return gamma_; }
  Vector<Scalar>& bn_offset() { return beta_; }
  Vector<Scalar>& bn_running_mean() { return run_mean_; }
  Vector<Scalar>& bn_running_var() { return run_var_; }
  Matrix<Scalar>& weight_grad() { return gW_; }
  Vector<Scalar>& bias_grad() { return gb_; }
  Matrix<Scalar>& embedding_grad() { return gEmbed_; }
  Vector<Scalar>& bn_scale_grad() { return gGamma_; }
  Vector<Scalar>& bn_offset_grad() { return gBeta_; }

 private:
  void allocate();

  Tensor<Scalar> forward_conv(const Tensor<Scalar>& in, bool cache);
  Tensor<Scalar> forward_tconv(const Tensor<Scalar>& in, bool cache);
  Tensor<Scalar> forward_project(const Tensor<Scalar>& in, bool cache);
  Tensor<Scalar> forward_embed(const Tensor<Scalar>& in, bool cache);
  Tensor<Scalar> forward_batchnorm(const Tensor<Scalar>& in, Mode mode, bool cache);
  Tensor<Scalar> forward_pointwise(const Tensor<Scalar>& in, bool cache);

  Tensor<Scalar> backward_conv(const Tensor<Scalar>& g, bool acc);
  Tensor<Scalar> backward_tconv(const Tensor<Scalar>& g, bool acc);
  Tensor<Scalar> backward_project(const Tensor<Scalar>& g, bool acc);
  Tensor<Scalar> backward_embed(const Tensor<Scalar>& g, bool acc);
  Tensor<Scalar> backward_batchnorm(const Tensor<Scalar>& g, bool acc);
  Tensor<Scalar> backward_pointwise(const Tensor<Scalar>& g);

  LayerSpec spec_;

  Matrix<Scalar> W_, gW_;        // conv: (Cout, f*Cin); tconv: (f*Cout, Cin); dense: (rows, in)
  Vector<Scalar> b_, gb_;
  Matrix<Scalar> embed_, gEmbed_;  // (num_classes, embed_dim)
  Vector<Scalar> gamma_, beta_, gGamma_, gBeta_;
  Vector<Scalar> run_mean_, run_var_;

  // forward cache
  bool cached_ = false;
  Tensor<Scalar> in_cache_;
  Matrix<Scalar> cols_cache_;     // conv im2col
  Matrix<Scalar> xhat_cache_;     // batchnorm
  Vector<Scalar> inv_std_cache_;  // batchnorm
  Matrix<Scalar> act_cache_;      // sigmoid output
  std::vector<int> labels_cache_;
  Matrix<Scalar> embed_in_cache_;  // (embed_dim, B)
  int fwd_batch_ = 0;
  int fwd_spatial_in_ = 0;
};

// Channel concatenation and its adjoint; concat is wired into the network
// graph rather than holding state.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_channels(const Tensor<Scalar>& g, int channels_a);

template <typename Scalar>
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  Vector<Scalar> m, v;
};

// One Adam update over a fixed-order parameter view list.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, const std::vector<ParamView<Scalar>>& views);

// ---------------------------------------------------------------------------
// implementation

inline int LayerSpec::spatial_out(int s_in) const {
  switch (kind) {
    case LayerKind::conv1d: {
      const int num = s_in + 2 * pad - filter;
      if (num < 0) throw std::runtime_error("conv1d: input too short for filter");
      return num / stride + 1;
    }
    case LayerKind::tconv1d: {
      const int full = (s_in - 1) * stride + filter;
      const int out = full - crop_lead - crop_trail;
      if (out <= 0) throw std::runtime_error("tconv1d: cropping consumes entire output");
      return out;
    }
    case LayerKind::project_reshape:
    case LayerKind::embed_reshape:
      return out_spatial;
    default:
      return s_in;
  }
}

inline int LayerSpec::channels_out(int c_in) const {
  switch (kind) {
    case LayerKind::conv1d:
    case LayerKind::tconv1d:
      return out_channels;
    case LayerKind::project_reshape:
      return out_channels;
    case LayerKind::embed_reshape:
      return 1;
    default:
      return c_in;
  }
}

inline std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::project_reshape: return "project_reshape";
    case LayerKind::embed_reshape: return "embed_reshape";
    case LayerKind::concat: return "concat";
    case LayerKind::tconv1d: return "tconv1d";
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::sigmoid: return "sigmoid";
  }
  throw std::runtime_error("unknown layer kind");
}

inline LayerKind layer_kind_from_name(const std::string& name) {
  for (LayerKind k : {LayerKind::project_reshape, LayerKind::embed_reshape, LayerKind::concat,
                      LayerKind::tconv1d, LayerKind::conv1d, LayerKind::batchnorm, LayerKind::relu,
                      LayerKind::leaky_relu, LayerKind::sigmoid}) {
    if (layer_kind_name(k) == name) return k;
  }
  throw std::runtime_error("unknown layer kind: " + name);
}

inline std::int64_t param_count(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::conv1d:
    case LayerKind::tconv1d:
      return static_cast<std::int64_t>(s.filter) * s.in_channels * s.out_channels + s.out_channels;
    case LayerKind::batchnorm:
      return 2LL * s.in_channels;
    case LayerKind::project_reshape: {
      const std::int64_t units = static_cast<std::int64_t>(s.out_spatial) * s.out_channels;
      return static_cast<std::int64_t>(s.latent_dim) * units + units;
    }
    case LayerKind::embed_reshape:
      return static_cast<std::int64_t>(s.num_classes) * s.embed_dim +
             static_cast<std::int64_t>(s.embed_dim) * s.out_spatial + s.out_spatial;
    default:
      return 0;
  }
}

inline std::int64_t param_count(const std::vector<LayerSpec>& specs) {
  std::int64_t total = 0;
  for (const auto& s : specs) total += param_count(s);
  return total;
}

template <typename Scalar>
void Layer<Scalar>::allocate() {
  const auto& s = spec_;
  switch (s.kind) {
    case LayerKind::conv1d:
      W_.setZero(s.out_channels, static_cast<Eigen::Index>(s.filter) * s.in_channels);
      b_.setZero(s.out_channels);
      break;
    case LayerKind::tconv1d:
      W_.setZero(static_cast<Eigen::Index>(s.filter) * s.out_channels, s.in_channels);
      b_.setZero(s.out_channels);
      break;
    case LayerKind::project_reshape:
      W_.setZero(static_cast<Eigen::Index>(s.out_spatial) * s.out_channels, s.latent_dim);
      b_.setZero(static_cast<Eigen::Index>(s.out_spatial) * s.out_channels);
      break;
    case LayerKind::embed_reshape:
      embed_.setZero(s.num_classes, s.embed_dim);
      W_.setZero(s.out_spatial, s.embed_dim);
      b_.setZero(s.out_spatial);
      break;
    case LayerKind::batchnorm:
      gamma_.setOnes(s.in_channels);
      beta_.setZero(s.in_channels);
      run_mean_.setZero(s.in_channels);
      run_var_.setOnes(s.in_channels);
      break;
    default:
      break;
  }
  gW_.setZero(W_.rows(), W_.cols());
  gb_.setZero(b_.size());
  gEmbed_.setZero(embed_.rows(), embed_.cols());
  gGamma_.setZero(gamma_.size());
  gBeta_.setZero(beta_.size());
}

template <typename Scalar>
void Layer<Scalar>::init_params(Rng& rng) {
  const auto& s = spec_;
  auto glorot_fill = [&rng](Matrix<Scalar>& w, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Scalar* p = w.data();
    for (Eigen::Index i = 0; i < w.size(); ++i) p[i] = static_cast<Scalar>(rng.uniform(-limit, limit));
  };
  switch (s.kind) {
    case LayerKind::conv1d:
      glorot_fill(W_, double(s.filter) * s.in_channels, double(s.filter) * s.out_channels);
      b_.setZero();
      break;
    case LayerKind::tconv1d:
      glorot_fill(W_, double(s.filter) * s.in_channels, double(s.filter) * s.out_channels);
      b_.setZero();
      break;
    case LayerKind::project_reshape:
      glorot_fill(W_, s.latent_dim, double(s.out_spatial) * s.out_channels);
      b_.setZero();
      break;
    case LayerKind::embed_reshape: {
      Scalar* p = embed_.data();
      for (Eigen::Index i = 0; i < embed_.size(); ++i) p[i] = static_cast<Scalar>(rng.normal(0.0, 0.01));
      glorot_fill(W_, s.embed_dim, s.out_spatial);
      b_.setZero();
      break;
    }
    case LayerKind::batchnorm:
      gamma_.setOnes();
      beta_.setZero();
      run_mean_.setZero();
      run_var_.setOnes();
      break;
    default:
      break;
  }
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::forward(const Tensor<Scalar>& in, Mode mode, bool cache) {
  cached_ = false;  // a non-caching forward invalidates any previous context
  switch (spec_.kind) {
    case LayerKind::conv1d: return forward_conv(in, cache);
    case LayerKind::tconv1d: return forward_tconv(in, cache);
    case LayerKind::project_reshape: return forward_project(in, cache);
    case LayerKind::embed_reshape: return forward_embed(in, cache);
    case LayerKind::batchnorm: return forward_batchnorm(in, mode, cache);
    case LayerKind::relu:
    case LayerKind::leaky_relu:
    case LayerKind::sigmoid: return forward_pointwise(in, cache);
    case LayerKind::concat:
      throw std::runtime_error("concat is wired by the network graph, not Layer::forward");
  }
  throw std::runtime_error("unreachable layer kind");
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::backward(const Tensor<Scalar>& g, bool acc) {
  if (!cached_) throw std::runtime_error("backward before forward (no cached context)");
  switch (spec_.kind) {
    case LayerKind::conv1d: return backward_conv(g, acc);
    case LayerKind::tconv1d: return backward_tconv(g, acc);
    case LayerKind::project_reshape: return backward_project(g, acc);
    case LayerKind::embed_reshape: return backward_embed(g, acc);
    case LayerKind::batchnorm: return backward_batchnorm(g, acc);
    case LayerKind::relu:
    case LayerKind::leaky_relu:
    case LayerKind::sigmoid: return backward_pointwise(g);
    case LayerKind::concat:
      throw std::runtime_error("concat is wired by the network graph, not Layer::backward");
  }
  throw std::runtime_error("unreachable layer kind");
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::forward_conv(const Tensor<Scalar>& in, bool cache) {
  const auto& s = spec_;
  if (in.channels != s.in_channels) throw std::runtime_error("conv1d: channel mismatch");
  const int S = in.spatial, B = in.batch, f = s.filter, Cin = s.in_channels;
  const int So = s.spatial_out(S);
  Matrix<Scalar> cols(static_cast<Eigen::Index>(f) * Cin, static_cast<Eigen::Index>(So) * B);
  cols.setZero();
  for (int b = 0; b < B; ++b) {
    const Eigen::Index in_off = static_cast<Eigen::Index>(b) * S;
    const Eigen::Index out_off = static_cast<Eigen::Index>(b) * So;
    for (int t = 0; t < So; ++t) {
      for (int k = 0; k < f; ++k) {
        const int src = t * s.stride + k - s.pad;
        if (src < 0 || src >= S) continue;
        cols.block(static_cast<Eigen::Index>(k) * Cin, out_off + t, Cin, 1) =
            in.data.col(in_off + src);
      }
    }
  }
  Tensor<Scalar> out(So, s.out_channels, B);
  out.data.noalias() = W_ * cols;
  out.data.colwise() += b_;
  if (cache) {
    cols_cache_ = std::move(cols);
    fwd_batch_ = B;
    fwd_spatial_in_ = S;
    cached_ = true;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::backward_conv(const Tensor<Scalar>& g, bool acc) {
  const auto& s = spec_;
  const int B = fwd_batch_, S = fwd_spatial_in_, f = s.filter, Cin = s.in_channels;
  const int So = g.spatial;
  if (acc) {
    gW_.noalias() += g.data * cols_cache_.transpose();
    gb_.noalias() += g.data.rowwise().sum();
  }
  Matrix<Scalar> dcols(static_cast<Eigen::Index>(f) * Cin, static_cast<Eigen::Index>(So) * B);
  dcols.noalias() = W_.transpose() * g.data;
  Tensor<Scalar> dx(S, Cin, B);
  for (int b = 0; b < B; ++b) {
    const Eigen::Index in_off = static_cast<Eigen::Index>(b) * S;
    const Eigen::Index out_off = static_cast<Eigen::Index>(b) * So;
    for (int t = 0; t < So; ++t) {
      for (int k = 0; k < f; ++k) {
        const int src = t * s.stride + k - s.pad;
        if (src < 0 || src >= S) continue;
        dx.data.col(in_off + src) += dcols.block(static_cast<Eigen::Index>(k) * Cin, out_off + t, Cin, 1);
      }
    }
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::forward_tconv(const Tensor<Scalar>& in, bool cache) {
  const auto& s = spec_;
  if (in.channels != s.in_channels) throw std::runtime_error("tconv1d: channel mismatch");
  const int S = in.spatial, B = in.batch, f = s.filter, Cout = s.out_channels;
  const int Sfull = (S - 1) * s.stride + f;
  if (s.crop_lead + s.crop_trail >= Sfull)
    throw std::runtime_error("tconv1d: crop_total >= (S-1)*stride + filter");
  const int So = Sfull - s.crop_lead - s.crop_trail;

  Matrix<Scalar> y(static_cast<Eigen::Index>(f) * Cout, static_cast<Eigen::Index>(S) * B);
  y.noalias() = W_ * in.data;

  Matrix<Scalar> full = Matrix<Scalar>::Zero(Cout, static_cast<Eigen::Index>(Sfull) * B);
  for (int b = 0; b < B; ++b) {
    const Eigen::Index in_off = static_cast<Eigen::Index>(b) * S;
    const Eigen::Index full_off = static_cast<Eigen::Index>(b) * Sfull;
    for (int t = 0; t < S; ++t) {
      for (int k = 0; k < f; ++k) {
        full.col(full_off + t * s.stride + k) +=
            y.block(static_cast<Eigen::Index>(k) * Cout, in_off + t, Cout, 1);
      }
    }
  }
  Tensor<Scalar> out(So, Cout, B);
  for (int b = 0; b < B; ++b) {
    out.sample(b) = full.middleCols(static_cast<Eigen::Index>(b) * Sfull + s.crop_lead, So);
  }
  out.data.colwise() += b_;
  if (cache) {
    in_cache_ = in;
    fwd_batch_ = B;
    fwd_spatial_in_ = S;
    cached_ = true;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::backward_tconv(const Tensor<Scalar>& g, bool acc) {
  const auto& s = spec_;
  const int B = fwd_batch_, S = fwd_spatial_in_, f = s.filter;
  const int Cout = s.out_channels, Cin = s.in_channels;
  const int Sfull = (S - 1) * s.stride + f;
  Matrix<Scalar> gfull = Matrix<Scalar>::Zero(Cout, static_cast<Eigen::Index>(Sfull) * B);
  for (int b = 0; b < B; ++b) {
    gfull.middleCols(static_cast<Eigen::Index>(b) * Sfull + s.crop_lead, g.spatial) = g.sample(b);
  }
  Matrix<Scalar> dy(static_cast<Eigen::Index>(f) * Cout, static_cast<Eigen::Index>(S) * B);
  for (int b = 0; b < B; ++b) {
    const Eigen::Index in_off = static_cast<Eigen::Index>(b) * S;
    const Eigen::Index full_off = static_cast<Eigen::Index>(b) * Sfull;
    for (int t = 0; t < S; ++t) {
      for (int k = 0; k < f; ++k) {
        dy.block(static_cast<Eigen::Index>(k) * Cout, in_off + t, Cout, 1) =
            gfull.col(full_off + t * s.stride + k);
      }
    }
  }
  if (acc) {
    gW_.noalias() += dy * in_cache_.data.transpose();
    gb_.noalias() += g.data.rowwise().sum();
  }
  Tensor<Scalar> dx(S, Cin, B);
  dx.data.noalias() = W_.transpose() * dy;
  return dx;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::forward_project(const Tensor<Scalar>& in, bool cache) {
  const auto& s = spec_;
  if (in.spatial != 1 || in.channels != s.latent_dim)
    throw std::runtime_error("project_reshape: expects (1, latent_dim, B) input");
  const int B = in.batch, So = s.out_spatial, Co = s.out_channels;
  Matrix<Scalar> y(static_cast<Eigen::Index>(So) * Co, B);
  y.noalias() = W_ * in.data;  // in.data is (latent, B) since S == 1
  y.colwise() += b_;
  Tensor<Scalar> out(So, Co, B);
  for (int b = 0; b < B; ++b) {
    // row index t*Co + c maps to (channel c, position t): a straight reshape.
    out.sample(b) = Eigen::Map<const Matrix<Scalar>>(y.col(b).data(), Co, So);
  }
  if (cache) {
    in_cache_ = in;
    fwd_batch_ = B;
    cached_ = true;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::backward_project(const Tensor<Scalar>& g, bool acc) {
  const auto& s = spec_;
  const int B = fwd_batch_, So = s.out_spatial, Co = s.out_channels;
  Matrix<Scalar> dy(static_cast<Eigen::Index>(So) * Co, B);
  for (int b = 0; b < B; ++b) {
    Eigen::Map<Matrix<Scalar>>(dy.col(b).data(), Co, So) = g.sample(b);
  }
  if (acc) {
    gW_.noalias() += dy * in_cache_.data.transpose();
    gb_.noalias() += dy.rowwise().sum();
  }
  Tensor<Scalar> dx(1, s.latent_dim, B);
  dx.data.noalias() = W_.transpose() * dy;
  return dx;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::forward_embed(const Tensor<Scalar>& in, bool cache) {
  const auto& s = spec_;
  if (in.spatial != 1 || in.channels != 1)
    throw std::runtime_error("embed_reshape: expects (1, 1, B) label input");
  const int B = in.batch;
  std::vector<int> labels(static_cast<std::size_t>(B));
  Matrix<Scalar> e(s.embed_dim, B);
  for (int b = 0; b < B; ++b) {
    const int y = static_cast<int>(std::lround(static_cast<double>(in.data(0, b))));
    if (y < 0 || y >= s.num_classes) throw std::runtime_error("embed_reshape: label out of range");
    labels[static_cast<std::size_t>(b)] = y;
    e.col(b) = embed_.row(y).transpose();
  }
  Matrix<Scalar> y(s.out_spatial, B);
  y.noalias() = W_ * e;
  y.colwise() += b_;
  Tensor<Scalar> out(s.out_spatial, 1, B);
  for (int b = 0; b < B; ++b) {
    out.data.middleCols(static_cast<Eigen::Index>(b) * s.out_spatial, s.out_spatial) =
        y.col(b).transpose();
  }
  if (cache) {
    labels_cache_ = std::move(labels);
    embed_in_cache_ = std::move(e);
    fwd_batch_ = B;
    cached_ = true;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::backward_embed(const Tensor<Scalar>& g, bool acc) {
  const auto& s = spec_;
  const int B = fwd_batch_;
  if (acc) {
    Matrix<Scalar> dy(s.out_spatial, B);
    for (int b = 0; b < B; ++b) {
      dy.col(b) = g.data.middleCols(static_cast<Eigen::Index>(b) * s.out_spatial, s.out_spatial).transpose();
    }
    gW_.noalias() += dy * embed_in_cache_.transpose();
    gb_.noalias() += dy.rowwise().sum();
    Matrix<Scalar> de(s.embed_dim, B);
    de.noalias() = W_.transpose() * dy;
    for (int b = 0; b < B; ++b) {
      gEmbed_.row(labels_cache_[static_cast<std::size_t>(b)]) += de.col(b).transpose();
    }
  }
  // Labels are discrete; no meaningful input gradient.
  return Tensor<Scalar>(1, 1, B);
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::forward_batchnorm(const Tensor<Scalar>& in, Mode mode, bool cache) {
  const auto& s = spec_;
  if (in.channels != s.in_channels) throw std::runtime_error("batchnorm: channel mismatch");
  const Eigen::Index n = in.cols();
  if (mode == Mode::train && in.batch < 2)
    throw std::runtime_error("batchnorm: train mode requires batch >= 2");
  Tensor<Scalar> out(in.spatial, in.channels, in.batch);
  Matrix<Scalar> xhat(in.channels, n);
  Vector<Scalar> inv_std(in.channels);
  for (int c = 0; c < in.channels; ++c) {
    Scalar mu, var;
    if (mode == Mode::train) {
      mu = in.data.row(c).mean();
      var = (in.data.row(c).array() - mu).square().sum() / static_cast<Scalar>(n);
      run_mean_[c] = static_cast<Scalar>(s.bn_momentum) * run_mean_[c] +
                     static_cast<Scalar>(1.0 - s.bn_momentum) * mu;
      run_var_[c] = static_cast<Scalar>(s.bn_momentum) * run_var_[c] +
                    static_cast<Scalar>(1.0 - s.bn_momentum) * var;
    } else {
      mu = run_mean_[c];
      var = run_var_[c];
    }
    const Scalar is = Scalar(1) / std::sqrt(var + static_cast<Scalar>(s.bn_epsilon));
    inv_std[c] = is;
    xhat.row(c) = (in.data.row(c).array() - mu) * is;
    out.data.row(c) = xhat.row(c) * gamma_[c];
    out.data.row(c).array() += beta_[c];
  }
  if (cache) {
    if (mode != Mode::train) throw std::runtime_error("batchnorm: caching requires train mode");
    xhat_cache_ = std::move(xhat);
    inv_std_cache_ = std::move(inv_std);
    fwd_batch_ = in.batch;
    fwd_spatial_in_ = in.spatial;
    cached_ = true;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::backward_batchnorm(const Tensor<Scalar>& g, bool acc) {
  const Eigen::Index n = g.cols();
  Tensor<Scalar> dx(g.spatial, g.channels, g.batch);
  for (int c = 0; c < g.channels; ++c) {
    const auto gr = g.data.row(c).array();
    const auto xh = xhat_cache_.row(c).array();
    const Scalar sum_g = gr.sum();
    const Scalar sum_gx = (gr * xh).sum();
    if (acc) {
      gGamma_[c] += sum_gx;
      gBeta_[c] += sum_g;
    }
    // d/dx of per-channel normalization with batch statistics.
    dx.data.row(c) = (gamma_[c] * inv_std_cache_[c] / static_cast<Scalar>(n)) *
                     (static_cast<Scalar>(n) * gr - sum_g - xh * sum_gx);
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::forward_pointwise(const Tensor<Scalar>& in, bool cache) {
  Tensor<Scalar> out(in.spatial, in.channels, in.batch);
  switch (spec_.kind) {
    case LayerKind::relu:
      out.data = in.data.cwiseMax(Scalar(0));
      break;
    case LayerKind::leaky_relu: {
      const Scalar slope = static_cast<Scalar>(spec_.leaky_slope);
      out.data = (in.data.array() > Scalar(0)).select(in.data, in.data * slope);
      break;
    }
    case LayerKind::sigmoid:
      out.data = (Scalar(1) / (Scalar(1) + (-in.data.array()).exp())).matrix();
      break;
    default:
      throw std::runtime_error("not a pointwise layer");
  }
  if (cache) {
    if (spec_.kind == LayerKind::sigmoid) {
      act_cache_ = out.data;
    } else {
      in_cache_ = in;
    }
    fwd_batch_ = in.batch;
    fwd_spatial_in_ = in.spatial;
    cached_ = true;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::backward_pointwise(const Tensor<Scalar>& g) {
  Tensor<Scalar> dx(g.spatial, g.channels, g.batch);
  switch (spec_.kind) {
    case LayerKind::relu:
      dx.data = (in_cache_.data.array() > Scalar(0)).select(g.data, Matrix<Scalar>::Zero(g.data.rows(), g.data.cols()));
      break;
    case LayerKind::leaky_relu: {
      const Scalar slope = static_cast<Scalar>(spec_.leaky_slope);
      dx.data = (in_cache_.data.array() > Scalar(0)).select(g.data, g.data * slope);
      break;
    }
    case LayerKind::sigmoid:
      dx.data = g.data.array() * act_cache_.array() * (Scalar(1) - act_cache_.array());
      break;
    default:
      throw std::runtime_error("not a pointwise layer");
  }
  return dx;
}

template <typename Scalar>
void Layer<Scalar>::zero_grads() {
  gW_.setZero();
  gb_.setZero();
  gEmbed_.setZero();
  gGamma_.setZero();
  gBeta_.setZero();
}

template <typename Scalar>
void Layer<Scalar>::collect_params(std::vector<ParamView<Scalar>>& out) {
  auto add = [&out](auto& value, auto& grad) {
    if (value.size() > 0) out.push_back({value.data(), grad.data(), value.size()});
  };
  add(W_, gW_);
  add(b_, gb_);
  add(embed_, gEmbed_);
  add(gamma_, gGamma_);
  add(beta_, gBeta_);
}

template <typename Scalar>
void Layer<Scalar>::collect_state(std::vector<Scalar*>& ptrs, std::vector<Eigen::Index>& sizes) {
  auto add = [&](auto& value) {
    if (value.size() > 0) {
      ptrs.push_back(value.data());
      sizes.push_back(value.size());
    }
  };
  add(W_);
  add(b_);
  add(embed_);
  add(gamma_);
  add(beta_);
  add(run_mean_);
  add(run_var_);
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.spatial != b.spatial || a.batch != b.batch)
    throw std::runtime_error("concat: spatial/batch mismatch");
  Tensor<Scalar> out(a.spatial, a.channels + b.channels, a.batch);
  out.data.topRows(a.channels) = a.data;
  out.data.bottomRows(b.channels) = b.data;
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_channels(const Tensor<Scalar>& g, int channels_a) {
  if (channels_a <= 0 || channels_a >= g.channels)
    throw std::runtime_error("split: bad channel split");
  Tensor<Scalar> a(g.spatial, channels_a, g.batch);
  Tensor<Scalar> b(g.spatial, g.channels - channels_a, g.batch);
  a.data = g.data.topRows(channels_a);
  b.data = g.data.bottomRows(g.channels - channels_a);
  return {std::move(a), std::move(b)};
}

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, const std::vector<ParamView<Scalar>>& views) {
  Eigen::Index total = 0;
  for (const auto& v : views) total += v.size;
  if (state.m.size() == 0) {
    state.m.setZero(total);
    state.v.setZero(total);
  }
  if (state.m.size() != total) throw std::runtime_error("adam_step: parameter count changed");
  ++state.step;
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar corr1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(state.beta1, double(state.step))));
  const Scalar corr2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(state.beta2, double(state.step))));
  const Scalar lr = static_cast<Scalar>(state.lr);
  const Scalar eps = static_cast<Scalar>(state.epsilon);
  Eigen::Index off = 0;
  for (const auto& view : views) {
    Eigen::Map<Vector<Scalar>> p(view.value, view.size);
    Eigen::Map<const Vector<Scalar>> g(view.grad, view.size);
    if (!g.allFinite()) throw std::runtime_error("adam_step: non-finite gradient");
    auto m = state.m.segment(off, view.size);
    auto v = state.v.segment(off, view.size);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() * corr1) / ((v.array() * corr2).sqrt() + eps);
    off += view.size;
  }
}

}  // namespace twinforge::nn
