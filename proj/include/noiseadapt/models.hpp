#pragma once

// The three toy networks: autoencoder (pixel clip <-> latent clip), the
// conditional noise-prediction network, and the frozen feature network.
//
// Layouts: a pixel clip is [S, C, H, W]; a latent clip is [S, Cz, H/8, W/8].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "noiseadapt/autodiff.hpp"
#include "noiseadapt/nn.hpp"
#include "noiseadapt/tensor.hpp"

namespace noiseadapt {

struct ModelConfig {
  std::size_t frames = 4;
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t latent_channels = 2;
  std::size_t ae_width = 16;
  std::size_t denoiser_hidden = 48;
  std::size_t time_embed_dim = 16;
  std::size_t feature_dim = 32;
  std::size_t timesteps = 100;

  Shape pixel_shape() const { return {frames, channels, height, width}; }
  Shape latent_shape() const { return {frames, latent_channels, height / 8, width / 8}; }
  std::size_t latent_size() const { return numel(latent_shape()); }
};

// ---------------------------------------------------------------------------
// Autoencoder

struct AutoencoderParams {
  ModelConfig config;
  Conv enc1, enc2, enc3;
  Conv dec1, dec2, dec3, dec4;
  /// Multiplies raw encoder output so latents have roughly unit variance.
  Parameter latent_scale;

  template <class F>
  void visit(F&& f) {
    for (Conv* c : {&enc1, &enc2, &enc3, &dec1, &dec2, &dec3, &dec4}) c->visit(f);
    f(latent_scale);
  }
  template <class F>
  void visit(F&& f) const {
    for (const Conv* c : {&enc1, &enc2, &enc3, &dec1, &dec2, &dec3, &dec4}) c->visit(f);
    f(latent_scale);
  }
};

inline AutoencoderParams init_autoencoder(const ModelConfig& cfg, Rng& rng) {
  require(cfg.height % 8 == 0 && cfg.width % 8 == 0, ErrorKind::ShapeMismatch, "frame size must be divisible by 8");
  const std::size_t w = cfg.ae_width, half = std::max<std::size_t>(1, cfg.ae_width / 2);
  AutoencoderParams p;
  p.config = cfg;
  p.enc1 = make_conv(cfg.channels, half, 3, 2, 1, rng, 1.4);
  p.enc2 = make_conv(half, w, 3, 2, 1, rng, 1.4);
  p.enc3 = make_conv(w, cfg.latent_channels, 3, 2, 1, rng, 1.0);
  p.dec1 = make_conv(cfg.latent_channels, w, 3, 1, 1, rng, 1.4);
  p.dec2 = make_conv(w, w, 3, 1, 1, rng, 1.4);
  p.dec3 = make_conv(w, half, 3, 1, 1, rng, 1.4);
  p.dec4 = make_conv(half, cfg.channels, 3, 1, 1, rng, 1.0);
  p.latent_scale = Parameter(Tensor::scalar(1.0));
  return p;
}

/// Latent clip of x. Accepts a single clip [S,C,H,W] or a batch flattened
/// along frames [B*S,C,H,W].
inline Var encode(Binder& bind, const AutoencoderParams& p, const Var& x) {
  const auto& c = p.config;
  const Shape& s = x.shape();
  require(s.size() == 4 && s[0] % c.frames == 0 && s[1] == c.channels && s[2] == c.height && s[3] == c.width,
          ErrorKind::ShapeMismatch, "encode expects " + to_string(c.pixel_shape()) + ", got " + to_string(s));
  Var h = silu(p.enc1(bind, x));
  h = silu(p.enc2(bind, h));
  h = p.enc3(bind, h);
  return h * p.latent_scale.value().item();
}

inline Var decode(Binder& bind, const AutoencoderParams& p, const Var& z) {
  const auto& c = p.config;
  const Shape& s = z.shape();
  require(s.size() == 4 && s[0] % c.frames == 0 && s[1] == c.latent_channels && s[2] == c.height / 8 &&
              s[3] == c.width / 8,
          ErrorKind::ShapeMismatch, "decode expects " + to_string(c.latent_shape()) + ", got " + to_string(s));
  Var h = z * (1.0 / p.latent_scale.value().item());
  h = silu(p.dec1(bind, h));
  h = silu(p.dec2(bind, upsample(h, 2)));
  h = silu(p.dec3(bind, upsample(h, 2)));
  h = p.dec4(bind, upsample(h, 2));
  return sigmoid(h);
}

inline Tensor encode(const AutoencoderParams& p, const Tensor& x) {
  Tape tape;
  Binder bind(tape, false);
  return encode(bind, p, tape.leaf(x)).value();
}

inline Tensor decode(const AutoencoderParams& p, const Tensor& z) {
  Tape tape;
  Binder bind(tape, false);
  return decode(bind, p, tape.leaf(z)).value();
}

// ---------------------------------------------------------------------------
// Conditional noise-prediction network

struct DenoiserParams {
  ModelConfig config;
  Linear time1, time2;
  Conv in, mid1, mid2, out;

  template <class F>
  void visit(F&& f) {
    time1.visit(f);
    time2.visit(f);
    for (Conv* c : {&in, &mid1, &mid2, &out}) c->visit(f);
  }
  template <class F>
  void visit(F&& f) const {
    time1.visit(f);
    time2.visit(f);
    for (const Conv* c : {&in, &mid1, &mid2, &out}) c->visit(f);
  }
};

inline DenoiserParams init_denoiser(const ModelConfig& cfg, Rng& rng) {
  const std::size_t zc = cfg.frames * cfg.latent_channels, hid = cfg.denoiser_hidden;
  DenoiserParams p;
  p.config = cfg;
  p.time1 = make_linear(cfg.time_embed_dim, hid, rng, 1.4);
  p.time2 = make_linear(hid, hid, rng, 1.0);
  p.in = make_conv(2 * zc, hid, 3, 1, 1, rng, 1.4);
  p.mid1 = make_conv(hid, hid, 3, 1, 1, rng, 1.4);
  p.mid2 = make_conv(hid, hid, 3, 1, 1, rng, 1.4);
  p.out = make_conv(hid, zc, 3, 1, 1, rng, 0.0);
  return p;
}

/// Sinusoidal embedding of integer timesteps, one row per entry.
inline Tensor timestep_embedding(const std::vector<std::size_t>& ts, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor e({ts.size(), dim});
  for (std::size_t b = 0; b < ts.size(); ++b)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      e[b * dim + i] = std::sin(static_cast<double>(ts[b]) * freq);
      e[b * dim + half + i] = std::cos(static_cast<double>(ts[b]) * freq);
    }
  return e;
}

/// Batched noise estimate. z_t and z_cond are [B*S, Cz, h, w]; one timestep per batch entry.
inline Var denoise_batch(Binder& bind, const DenoiserParams& p, const Var& z_t, const std::vector<std::size_t>& ts,
                         const Var& z_cond) {
  const auto& c = p.config;
  const Shape lat = c.latent_shape();
  const Shape& s = z_t.shape();
  require(s.size() == 4 && s[1] == lat[1] && s[2] == lat[2] && s[3] == lat[3] && s[0] == ts.size() * c.frames,
          ErrorKind::ShapeMismatch, "denoise expects latent " + to_string(lat) + ", got " + to_string(s));
  require(z_cond.shape() == s, ErrorKind::ShapeMismatch,
          "condition shape " + to_string(z_cond.shape()) + " differs from " + to_string(s));
  for (std::size_t t : ts)
    require(t >= 1 && t <= c.timesteps, ErrorKind::TimestepOutOfRange,
            "timestep " + std::to_string(t) + " outside [1," + std::to_string(c.timesteps) + "]");
  Tape& tape = bind.tape();
  const std::size_t batch = ts.size(), zc = c.frames * c.latent_channels, hid = c.denoiser_hidden;
  const Shape packed{batch, zc, lat[2], lat[3]};

  Var temb = tape.leaf(timestep_embedding(ts, c.time_embed_dim));
  temb = p.time2(bind, silu(p.time1(bind, temb)));
  temb = reshape(temb, {batch, hid, 1, 1});

  Var x = concat({reshape(z_t, packed), reshape(z_cond, packed)}, 1);
  Var h = silu(p.in(bind, x) + temb);
  h = h + silu(p.mid1(bind, h));
  h = h + silu(p.mid2(bind, h) + temb);
  return reshape(p.out(bind, h), s);
}

inline Var denoise(Binder& bind, const DenoiserParams& p, const Var& z_t, std::size_t t, const Var& z_cond) {
  require(z_t.shape() == p.config.latent_shape(), ErrorKind::ShapeMismatch,
          "denoise expects latent " + to_string(p.config.latent_shape()) + ", got " + to_string(z_t.shape()));
  return denoise_batch(bind, p, z_t, {t}, z_cond);
}

inline Tensor denoise(const DenoiserParams& p, const Tensor& z_t, std::size_t t, const Tensor& z_cond) {
  Tape tape;
  Binder bind(tape, false);
  return denoise(bind, p, tape.leaf(z_t), t, tape.leaf(z_cond)).value();
}

// ---------------------------------------------------------------------------
// Frozen feature network

class FeatureNet {
 public:
  FeatureNet() = default;
  FeatureNet(const ModelConfig& cfg, Rng& rng) : config_(cfg) {
    const std::size_t in = cfg.frames * cfg.channels;
    c1_ = make_conv(in, 8, 3, 2, 1, rng, 1.6);
    c2_ = make_conv(8, 16, 3, 2, 1, rng, 1.6);
    c3_ = make_conv(16, cfg.feature_dim, 3, 2, 1, rng, 1.6);
    checksum_ = parameter_checksum(*this);
  }

  const ModelConfig& config() const { return config_; }
  std::size_t dim() const { return config_.feature_dim; }
  std::uint64_t checksum() const { return checksum_; }
  bool intact() const { return parameter_checksum(*this) == checksum_; }

  /// Flat feature vector [d_f] of one pixel clip. Frames are stacked as
  /// channels so every filter sees the whole clip.
  Var operator()(Binder& bind, const Var& x) const {
    const auto& c = config_;
    require(x.shape() == c.pixel_shape(), ErrorKind::ShapeMismatch,
            "features expect " + to_string(c.pixel_shape()) + ", got " + to_string(x.shape()));
    Var h = reshape(x, {1, c.frames * c.channels, c.height, c.width});
    h = noiseadapt::tanh(c1_(bind, h));
    h = noiseadapt::tanh(c2_(bind, h));
    h = c3_(bind, h);
    h = avg_pool(h, c.height / 8);
    return reshape(h, {c.feature_dim});
  }

  Tensor operator()(const Tensor& x) const {
    Tape tape;
    Binder bind(tape, false);
    return (*this)(bind, tape.leaf(x)).value();
  }

  template <class F>
  void visit(F&& f) const {
    c1_.visit(f);
    c2_.visit(f);
    c3_.visit(f);
  }
  /// Mutable access exists only for deserialization; the checksum is reset.
  template <class F>
  void visit(F&& f) {
    c1_.visit(f);
    c2_.visit(f);
    c3_.visit(f);
  }
  void seal() { checksum_ = parameter_checksum(*this); }

 private:
  ModelConfig config_;
  Conv c1_, c2_, c3_;
  std::uint64_t checksum_ = 0;
};

// ---------------------------------------------------------------------------
// Autoencoder training (plain L1 reconstruction)

struct AutoencoderTraining {
  std::size_t epochs = 20;
  std::size_t batch_clips = 4;
  double lr = 3e-3;
  std::uint64_t seed = 1;
};

struct TrainingCurve {
  std::vector<double> losses;
};

inline Tensor stack_frames(const std::vector<const Tensor*>& clips) {
  std::vector<const Tensor*> parts(clips.begin(), clips.end());
  return kernels::concat(parts, 0);
}

inline double reconstruction_l1(const AutoencoderParams& p, const Tensor& clip) {
  const Tensor rec = decode(p, encode(p, clip));
  double s = 0.0;
  for (std::size_t i = 0; i < clip.size(); ++i) s += std::abs(rec[i] - clip[i]);
  return s / static_cast<double>(clip.size());
}

/// Rescales latents to unit standard deviation over `clips`.
inline void calibrate_latent_scale(AutoencoderParams& p, const std::vector<Tensor>& clips) {
  p.latent_scale.assign(Tensor::scalar(1.0));
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& c : clips) {
    const Tensor z = encode(p, c);
    for (double v : z.data()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double m = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - m * m;
  p.latent_scale.assign(Tensor::scalar(var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0));
}

inline AutoencoderParams train_autoencoder(AutoencoderParams params, const std::vector<Tensor>& clips,
                                           const AutoencoderTraining& cfg, TrainingCurve* curve = nullptr) {
  if (cfg.epochs == 0) return params;
  require(!clips.empty(), ErrorKind::PreconditionViolation, "no training clips");
  // Train at unit scale; the calibrated scale is applied afterwards.
  params.latent_scale.assign(Tensor::scalar(1.0));
  Rng rng(cfg.seed);
  ParameterAdam adam(AdamConfig{cfg.lr});
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);
  auto plist = parameter_list(params);
  plist.pop_back();  // latent_scale is not trained
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_clips) {
      std::vector<const Tensor*> batch;
      for (std::size_t j = start; j < std::min(order.size(), start + cfg.batch_clips); ++j)
        batch.push_back(&clips[order[j]]);
      const Tensor x = stack_frames(batch);
      Tape tape;
      Binder bind(tape, true);
      Var xv = tape.leaf(x);
      Var loss = mean(noiseadapt::abs(decode(bind, params, encode(bind, params, xv)) - xv));
      const double lv = loss.value().item();
      require(std::isfinite(lv), ErrorKind::DivergedTraining, "autoencoder loss is not finite");
      if (curve) curve->losses.push_back(lv);
      Gradients g = tape.backward(loss);
      adam.update(plist, bind.gradients(g, plist));
    }
  }
  calibrate_latent_scale(params, clips);
  return params;
}

}  // namespace noiseadapt
