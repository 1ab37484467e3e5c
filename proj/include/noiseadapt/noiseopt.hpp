#pragma once

// Prediction losses, variance-preserving noise interpolation, and the
// per-observation optimization of the sampling noise.

#include <cmath>
#include <memory>
#include <optional>
#include <string>

#include "noiseadapt/autodiff.hpp"
#include "noiseadapt/diffusion.hpp"
#include "noiseadapt/models.hpp"
#include "noiseadapt/nn.hpp"
#include "noiseadapt/records.hpp"

namespace noiseadapt {

enum class LossMode { Pixel, PixelFeature, Latent };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::Pixel: return "pixel";
    case LossMode::PixelFeature: return "pixel_feature";
    case LossMode::Latent: return "latent";
  }
  return "?";
}

struct OptimConfig {
  double lr = 0.01;
  double lambda = 0.002;
  double p = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 10.0;  // <= 0 disables clipping
};

inline void validate(const OptimConfig& c) {
  require(c.p >= 0.0 && c.p <= 1.0, ErrorKind::POutOfRange, "p = " + std::to_string(c.p) + " outside [0,1]");
  require(c.lr > 0.0, ErrorKind::InvalidRange, "lr must be positive");
  require(c.lambda >= 0.0, ErrorKind::InvalidRange, "lambda must be non-negative");
}

// ---------------------------------------------------------------------------
// Losses

inline void require_same_shape(const Var& a, const Var& b, const char* what) {
  require(a.shape() == b.shape(), ErrorKind::ShapeMismatch,
          std::string(what) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

/// Mean absolute pixel error.
inline Var loss_pixel(const Var& x_obs, const Var& x_pred) {
  require_same_shape(x_obs, x_pred, "loss_pixel");
  return mean(noiseadapt::abs(x_obs - x_pred));
}

/// Squared feature distance divided by the feature dimension.
inline Var loss_feature(Binder& bind, const FeatureNet& g, const Var& x_obs, const Var& x_pred) {
  require_same_shape(x_obs, x_pred, "loss_feature");
  return mean(square(g(bind, x_obs) - g(bind, x_pred)));
}

/// Mean absolute latent error.
inline Var loss_latent(const Var& z_obs, const Var& z_pred) {
  require_same_shape(z_obs, z_pred, "loss_latent");
  return mean(noiseadapt::abs(z_obs - z_pred));
}

struct LossTerms {
  Var total;
  LossBreakdown values;
};

/// Pixel modes take pixel clips; latent mode takes latent clips.
inline LossTerms total_loss(Binder& bind, const Var& obs, const Var& pred, const OptimConfig& cfg, const FeatureNet& g,
                            LossMode mode) {
  const auto& mc = g.config();
  const Shape expected = mode == LossMode::Latent ? mc.latent_shape() : mc.pixel_shape();
  require(obs.shape() == expected && pred.shape() == expected, ErrorKind::ModeMismatch,
          to_string(mode) + " loss expects " + to_string(expected) + ", got " + to_string(obs.shape()) + " and " +
              to_string(pred.shape()));
  LossTerms out;
  if (mode == LossMode::Latent) {
    out.total = loss_latent(obs, pred);
    out.values.latent = out.values.total = out.total.value().item();
    return out;
  }
  const Var pix = loss_pixel(obs, pred);
  out.values.pixel = pix.value().item();
  if (mode == LossMode::Pixel || cfg.lambda == 0.0) {
    out.total = pix;
    if (mode == LossMode::PixelFeature) out.values.feature = loss_feature(bind, g, obs, pred).value().item();
  } else {
    const Var feat = loss_feature(bind, g, obs, pred);
    out.values.feature = feat.value().item();
    out.total = pix + cfg.lambda * feat;
  }
  out.values.total = out.total.value().item();
  return out;
}

inline LossBreakdown total_loss(const Tensor& obs, const Tensor& pred, const OptimConfig& cfg, const FeatureNet& g,
                                LossMode mode) {
  Tape tape;
  Binder bind(tape, false);
  return total_loss(bind, tape.leaf(obs), tape.leaf(pred), cfg, g, mode).values;
}

// ---------------------------------------------------------------------------
// Noise interpolation

/// (p*eps_opt + (1-p)*eps_fresh) / sqrt(p^2 + (1-p)^2); the endpoints return
/// their operand itself.
inline Var interpolate_noise(double p, const Var& eps_opt, const Var& eps_fresh) {
  require(p >= 0.0 && p <= 1.0, ErrorKind::POutOfRange, "p = " + std::to_string(p) + " outside [0,1]");
  require_same_shape(eps_opt, eps_fresh, "interpolate_noise");
  if (p == 1.0) return eps_opt;
  if (p == 0.0) return eps_fresh;
  const double norm = 1.0 / std::sqrt(p * p + (1.0 - p) * (1.0 - p));
  return (p * eps_opt + (1.0 - p) * eps_fresh) * norm;
}

inline Tensor interpolate_noise(double p, const Tensor& eps_opt, const Tensor& eps_fresh) {
  Tape tape;
  return interpolate_noise(p, tape.leaf(eps_opt), tape.leaf(eps_fresh)).value();
}

// ---------------------------------------------------------------------------
// Optimizer state

struct NoiseState {
  Tensor eps;
  Tensor m;
  Tensor v;
  std::size_t steps = 0;
};

inline NoiseState make_noise_state(Tensor eps) {
  NoiseState s;
  s.m = Tensor(eps.shape());
  s.v = Tensor(eps.shape());
  s.eps = std::move(eps);
  return s;
}

/// One Adam update of the noise, after optional clipping to a global L2 norm.
inline NoiseState optimize_noise_step(NoiseState state, const Tensor& grad, const OptimConfig& cfg) {
  require(grad.shape() == state.eps.shape(), ErrorKind::ShapeMismatch,
          "gradient " + to_string(grad.shape()) + " vs noise " + to_string(state.eps.shape()));
  require(grad.all_finite(), ErrorKind::NonFiniteGradient, "noise gradient has NaN or Inf");
  Tensor g = grad;
  if (cfg.clip_norm > 0.0) {
    const double n = l2_norm(g);
    if (n > cfg.clip_norm)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= cfg.clip_norm / n;
  }
  ++state.steps;
  adam_update(state.eps, g, state.m, state.v, state.steps, AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps});
  return state;
}

// ---------------------------------------------------------------------------
// Predict, then adapt once the target is observed

/// Frozen networks and schedule shared by every stream step. All pointees
/// must outlive any prediction built from them.
struct ModelBundle {
  const AutoencoderParams* ae = nullptr;
  const DenoiserParams* denoiser = nullptr;
  const FeatureNet* features = nullptr;
  const NoiseSchedule* schedule = nullptr;
};

/// A prediction whose graph is kept so the noise gradient can be taken once
/// the target arrives.
struct Prediction {
  Tensor x_pred;  // pixel clip
  Tensor z_pred;  // latent clip
  std::unique_ptr<Tape> tape;
  std::optional<Var> eps_var;
  std::optional<Var> output;  // pixel clip in pixel modes, latent in latent mode
};

/// Samples a prediction from noise h(p, eps, eps_fresh). With `track` the
/// graph from eps to the loss input is recorded (checkpointed per step).
inline Prediction predict(const ModelBundle& m, const SamplerConfig& sampler, const Tensor& z_cond, const Tensor& eps,
                          const Tensor& eps_fresh, double p, LossMode mode, bool track,
                          const std::vector<Tensor>& sampler_noise = {}) {
  Prediction out;
  out.tape = std::make_unique<Tape>();
  Tape& tape = *out.tape;
  const Var e = tape.leaf(eps, track);
  const Var h = interpolate_noise(p, e, tape.leaf(eps_fresh));
  const Var zc = tape.leaf(z_cond);
  const Var z = sample(tape, *m.denoiser, *m.schedule, sampler, zc, h, sampler_noise, SampleOptions{track});
  out.z_pred = z.value();
  if (mode == LossMode::Latent) {
    out.x_pred = decode(*m.ae, out.z_pred);
    out.output = z;
  } else {
    Binder bind(tape, false);
    const Var x = decode(bind, *m.ae, z);
    out.x_pred = x.value();
    out.output = x;
  }
  out.eps_var = e;
  if (!track) out.tape.reset();
  return out;
}

/// Loss of a tracked prediction against the observation, and its gradient
/// with respect to the optimized noise.
inline std::pair<LossBreakdown, Tensor> noise_gradient(Prediction& pred, const ModelBundle& m, const Tensor& target,
                                                       const OptimConfig& cfg, LossMode mode) {
  require(pred.tape != nullptr, ErrorKind::PreconditionViolation, "prediction was made without a graph");
  Tape& tape = *pred.tape;
  Binder bind(tape, false);
  const LossTerms loss = total_loss(bind, tape.leaf(target), *pred.output, cfg, *m.features, mode);
  const Gradients g = tape.backward(loss.total);
  return {loss.values, g[*pred.eps_var]};
}

struct AdaptResult {
  Tensor x_pred;
  LossBreakdown loss;
  NoiseState state;
};

/// Predicts from (z_cond, state), scores the prediction against the
/// observation and applies `repeats` optimizer steps to the noise. The
/// returned prediction and loss are those made before any update.
inline AdaptResult predict_and_adapt(const ModelBundle& m, const SamplerConfig& sampler, const Tensor& z_cond,
                                     const Tensor& x_obs, NoiseState state, const OptimConfig& cfg, Rng& rng,
                                     LossMode mode, std::size_t repeats = 1) {
  validate(cfg);
  require(sampler.eta == 0.0, ErrorKind::EtaNonZero, "noise optimization needs deterministic sampling");
  const Tensor eps_fresh = Tensor::randn(state.eps.shape(), rng);
  const Tensor target = mode == LossMode::Latent ? encode(*m.ae, x_obs) : x_obs;
  AdaptResult out;
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    Prediction pred = predict(m, sampler, z_cond, state.eps, eps_fresh, cfg.p, mode, true);
    auto [loss, grad] = noise_gradient(pred, m, target, cfg, mode);
    if (r == 0) {
      out.x_pred = pred.x_pred;
      out.loss = loss;
    }
    state = optimize_noise_step(std::move(state), grad, cfg);
  }
  out.state = std::move(state);
  return out;
}

}  // namespace noiseadapt
