#pragma once

// Noise schedule, DDIM sampling and inversion, the noise-prediction training
// loss, and the weight fine-tuning baseline.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "noiseadapt/autodiff.hpp"
#include "noiseadapt/models.hpp"
#include "noiseadapt/nn.hpp"
#include "noiseadapt/tensor.hpp"

namespace noiseadapt {

struct NoiseSchedule {
  std::size_t T = 0;
  std::vector<double> beta;       // beta[t-1] for t = 1..T
  std::vector<double> alpha_bar;  // alpha_bar[t-1]

  /// Cumulative alpha at t, with alpha(0) = 1.
  double alpha(std::size_t t) const {
    require(t <= T, ErrorKind::TimestepOutOfRange, "timestep " + std::to_string(t) + " beyond T=" + std::to_string(T));
    return t == 0 ? 1.0 : alpha_bar[t - 1];
  }
};

/// Linear beta schedule from beta_start to beta_end.
inline NoiseSchedule build_schedule(std::size_t T, double beta_start = 1e-3, double beta_end = 0.2) {
  require(T >= 1, ErrorKind::InvalidRange, "T must be >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorKind::InvalidRange,
          "need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  double a = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.beta.push_back(b);
    a *= 1.0 - b;
    s.alpha_bar.push_back(a);
  }
  return s;
}

struct SamplerConfig {
  std::size_t num_steps = 10;
  double eta = 0.0;
};

/// Uniformly spaced timesteps floor(i*T/n), i = 1..n; always ends at T.
inline std::vector<std::size_t> sampling_timesteps(std::size_t T, std::size_t n) {
  require(n >= 1 && n <= T, ErrorKind::InvalidTimesteps,
          "num_steps " + std::to_string(n) + " must lie in [1, " + std::to_string(T) + "]");
  std::vector<std::size_t> ts(n);
  for (std::size_t i = 1; i <= n; ++i) ts[i - 1] = i * T / n;
  return ts;
}

inline void validate(const SamplerConfig& cfg, const NoiseSchedule& s) {
  require(cfg.eta >= 0.0 && cfg.eta <= 1.0, ErrorKind::InvalidRange, "eta must lie in [0,1]");
  (void)sampling_timesteps(s.T, cfg.num_steps);
}

inline double ddim_sigma(const NoiseSchedule& s, std::size_t t, std::size_t t_prev, double eta) {
  require(t > t_prev && t <= s.T, ErrorKind::InvalidTimesteps,
          "need T >= t > t_prev, got t=" + std::to_string(t) + " t_prev=" + std::to_string(t_prev));
  require(eta >= 0.0 && eta <= 1.0, ErrorKind::InvalidRange, "eta must lie in [0,1]");
  if (eta == 0.0) return 0.0;
  const double at = s.alpha(t), ap = s.alpha(t_prev);
  return eta * std::sqrt((1.0 - ap) / (1.0 - at)) * std::sqrt(1.0 - at / ap);
}

namespace detail {

struct DdimCoefficients {
  double inv_sqrt_at, sqrt_1m_at, sqrt_ap, dir, sigma;
};

inline DdimCoefficients ddim_coefficients(const NoiseSchedule& s, std::size_t t, std::size_t t_prev, double eta) {
  const double sigma = ddim_sigma(s, t, t_prev, eta);
  const double at = s.alpha(t), ap = s.alpha(t_prev);
  double rad = 1.0 - ap - sigma * sigma;
  require(rad >= -1e-12, ErrorKind::NegativeRadicand, "1 - alpha_prev - sigma^2 = " + std::to_string(rad));
  rad = std::max(rad, 0.0);
  return {1.0 / std::sqrt(at), std::sqrt(1.0 - at), std::sqrt(ap), std::sqrt(rad), sigma};
}

}  // namespace detail

/// One DDIM update from t to t_prev. `eps_rand` may be null when sigma is 0.
inline Var ddim_step(const Var& z_t, const Var& eps_hat, const NoiseSchedule& s, std::size_t t, std::size_t t_prev,
                     double eta, const Var* eps_rand) {
  require(z_t.shape() == eps_hat.shape(), ErrorKind::ShapeMismatch,
          "z_t " + to_string(z_t.shape()) + " vs eps_hat " + to_string(eps_hat.shape()));
  const auto c = detail::ddim_coefficients(s, t, t_prev, eta);
  const Var x0 = (z_t - c.sqrt_1m_at * eps_hat) * c.inv_sqrt_at;
  Var out = c.sqrt_ap * x0 + c.dir * eps_hat;
  if (c.sigma != 0.0) {
    require(eps_rand != nullptr, ErrorKind::PreconditionViolation, "eta > 0 needs explicit sampler noise");
    require(eps_rand->shape() == z_t.shape(), ErrorKind::ShapeMismatch, "sampler noise shape mismatch");
    out = out + c.sigma * *eps_rand;
  }
  return out;
}

inline Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, const NoiseSchedule& s, std::size_t t,
                        std::size_t t_prev, double eta, const Tensor& eps_rand) {
  Tape tape;
  Var r = tape.leaf(eps_rand);
  return ddim_step(tape.leaf(z_t), tape.leaf(eps_hat), s, t, t_prev, eta, &r).value();
}

// ---------------------------------------------------------------------------
// Sampling

struct SampleOptions {
  bool checkpoint = true;
  bool verify_replay = false;
  std::size_t* denoise_calls = nullptr;  // incremented once per forward evaluation
};

/// Per-step sampler noise; empty when eta is 0.
inline std::vector<Tensor> draw_sampler_noise(const SamplerConfig& cfg, const Shape& shape, Rng& rng) {
  std::vector<Tensor> out;
  if (cfg.eta == 0.0) return out;
  for (std::size_t i = 0; i < cfg.num_steps; ++i) out.push_back(Tensor::randn(shape, rng));
  return out;
}

/// Runs the DDIM chain from z_T = eps_init down to t = 0 on `tape`. Each
/// step (denoiser call + update) is one checkpoint segment unless disabled.
inline Var sample(Tape& tape, const DenoiserParams& p, const NoiseSchedule& s, const SamplerConfig& cfg,
                  const Var& z_cond, const Var& eps_init, const std::vector<Tensor>& eps_rand,
                  const SampleOptions& opt = {}) {
  validate(cfg, s);
  require(eps_init.shape() == p.config.latent_shape(), ErrorKind::ShapeMismatch,
          "initial noise " + to_string(eps_init.shape()) + " vs latent " + to_string(p.config.latent_shape()));
  require(cfg.eta == 0.0 || eps_rand.size() == cfg.num_steps, ErrorKind::PreconditionViolation,
          "eta > 0 needs one sampler noise tensor per step");
  const auto ts = sampling_timesteps(s.T, cfg.num_steps);
  Var z = eps_init;
  for (std::size_t i = ts.size(); i-- > 0;) {
    const std::size_t t = ts[i], t_prev = i == 0 ? 0 : ts[i - 1];
    const bool noisy = cfg.eta != 0.0;
    // Replayed during backward: p and s must outlive the tape.
    auto step = [&p, &s, eta = cfg.eta, t, t_prev, noisy, calls = opt.denoise_calls](Tape& tt,
                                                                                     std::span<const Var> v) {
      Binder bind(tt, false);
      if (calls) ++*calls;
      const Var eps = denoise(bind, p, v[0], t, v[1]);
      return ddim_step(v[0], eps, s, t, t_prev, eta, noisy ? &v[2] : nullptr);
    };
    std::vector<Var> in{z, z_cond};
    if (noisy) in.push_back(tape.leaf(eps_rand[i]));
    z = opt.checkpoint ? checkpoint1(step, in, CheckpointOptions{opt.verify_replay}) : step(tape, in);
  }
  return z;
}

inline Tensor sample(const DenoiserParams& p, const NoiseSchedule& s, const SamplerConfig& cfg, const Tensor& z_cond,
                     const Tensor& eps_init, Rng& rng) {
  const auto noise = draw_sampler_noise(cfg, eps_init.shape(), rng);
  Tape tape;
  return sample(tape, p, s, cfg, tape.leaf(z_cond), tape.leaf(eps_init), noise, SampleOptions{false}).value();
}

/// First-order DDIM inversion: walks the deterministic update backwards from
/// the target latent to an approximate timestep-T noise.
inline Tensor ddim_invert(const DenoiserParams& p, const NoiseSchedule& s, const SamplerConfig& cfg,
                          const Tensor& z_cond, const Tensor& z_target) {
  require(cfg.eta == 0.0, ErrorKind::EtaNonZero, "inversion requires eta = 0");
  validate(cfg, s);
  require(z_target.shape() == p.config.latent_shape(), ErrorKind::ShapeMismatch,
          "target " + to_string(z_target.shape()) + " vs latent " + to_string(p.config.latent_shape()));
  const auto ts = sampling_timesteps(s.T, cfg.num_steps);
  Tensor z = z_target;
  std::size_t t_prev = 0;
  for (std::size_t t : ts) {
    const Tensor eps = denoise(p, z, t, z_cond);
    const double ap = s.alpha(t_prev), at = s.alpha(t);
    const double sp = std::sqrt(1.0 - ap), isap = 1.0 / std::sqrt(ap), sat = std::sqrt(at), s1 = std::sqrt(1.0 - at);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double x0 = (z[i] - sp * eps[i]) * isap;
      z[i] = sat * x0 + s1 * eps[i];
    }
    t_prev = t;
  }
  return z;
}

// ---------------------------------------------------------------------------
// Noise-prediction training loss

/// Mean squared error between eps and the denoiser's estimate at the noised
/// latent; batched over [B*S, ...] with one (t, eps) per batch entry.
inline Var ddpm_loss(Binder& bind, const DenoiserParams& p, const NoiseSchedule& s, const Var& z_future,
                     const Var& z_cond, const std::vector<std::size_t>& ts, const Tensor& eps) {
  require(eps.shape() == z_future.shape(), ErrorKind::ShapeMismatch, "noise shape mismatch");
  const std::size_t per = numel(p.config.latent_shape());
  require(ts.size() * per == eps.size(), ErrorKind::ShapeMismatch, "one timestep per batch entry");
  Tensor a(eps.shape()), b(eps.shape());
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const double at = s.alpha(ts[k]);
    for (std::size_t i = 0; i < per; ++i) {
      a[k * per + i] = std::sqrt(at);
      b[k * per + i] = std::sqrt(1.0 - at);
    }
  }
  Tape& tape = bind.tape();
  const Var e = tape.leaf(eps);
  const Var z_t = tape.leaf(a) * z_future + tape.leaf(b) * e;
  return mean(square(denoise_batch(bind, p, z_t, ts, z_cond) - e));
}

inline double ddpm_training_loss(const DenoiserParams& p, const NoiseSchedule& s, const Tensor& z_future,
                                 const Tensor& z_cond, std::size_t t, const Tensor& eps) {
  Tape tape;
  Binder bind(tape, false);
  return ddpm_loss(bind, p, s, tape.leaf(z_future), tape.leaf(z_cond), {t}, eps).value().item();
}

inline double ddpm_training_loss(const DenoiserParams& p, const NoiseSchedule& s, const Tensor& z_future,
                                 const Tensor& z_cond, Rng& rng) {
  const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(s.T)));
  const Tensor eps = Tensor::randn(z_future.shape(), rng);
  return ddpm_training_loss(p, s, z_future, z_cond, t, eps);
}

// ---------------------------------------------------------------------------
// Denoiser training

struct DenoiserTraining {
  std::size_t iterations = 3000;
  std::size_t batch = 16;
  double lr = 2e-3;
  double cond_dropout = 0.3;
  std::uint64_t seed = 2;
};

/// (condition, future) latent pairs.
struct LatentPair {
  Tensor cond, future;
};

inline DenoiserParams train_denoiser(DenoiserParams params, const NoiseSchedule& s, const std::vector<LatentPair>& data,
                                     const DenoiserTraining& cfg, TrainingCurve* curve = nullptr) {
  if (cfg.iterations == 0) return params;
  require(!data.empty(), ErrorKind::PreconditionViolation, "no training pairs");
  Rng rng(cfg.seed);
  ParameterAdam adam(AdamConfig{cfg.lr});
  auto plist = parameter_list(params);
  const Shape lat = params.config.latent_shape();
  const Tensor zero(lat);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    // Cosine decay to 10% of the base rate.
    const double frac = static_cast<double>(it) / static_cast<double>(cfg.iterations);
    adam.set_lr(cfg.lr * (0.55 + 0.45 * std::cos(3.141592653589793 * frac)));
    std::vector<const Tensor*> fut, cond;
    std::vector<std::size_t> ts;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto& pair = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
      fut.push_back(&pair.future);
      cond.push_back(rng.uniform() < cfg.cond_dropout ? &zero : &pair.cond);
      ts.push_back(static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(s.T))));
    }
    const Tensor zf = kernels::concat(fut, 0), zc = kernels::concat(cond, 0);
    const Tensor eps = Tensor::randn(zf.shape(), rng);
    Tape tape;
    Binder bind(tape, true);
    const Var loss = ddpm_loss(bind, params, s, tape.leaf(zf), tape.leaf(zc), ts, eps);
    const double lv = loss.value().item();
    require(std::isfinite(lv), ErrorKind::DivergedTraining, "denoiser loss is not finite");
    if (curve) curve->losses.push_back(lv);
    const Gradients g = tape.backward(loss);
    adam.update(plist, bind.gradients(g, plist));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Weight fine-tuning baseline

struct FinetuneDraw {
  std::size_t t;
  Tensor eps;
};

/// Applies one Adam step per draw of the training loss on a single
/// (z_future, z_cond) pair. `adam` persists across calls.
inline DenoiserParams finetune_step(DenoiserParams params, const NoiseSchedule& s, const Tensor& z_future,
                                    const Tensor& z_cond, const std::vector<FinetuneDraw>& draws, ParameterAdam& adam) {
  require(!draws.empty(), ErrorKind::PreconditionViolation, "n_inner must be >= 1");
  auto plist = parameter_list(params);
  for (const auto& d : draws) {
    Tape tape;
    Binder bind(tape, true);
    const Var loss = ddpm_loss(bind, params, s, tape.leaf(z_future), tape.leaf(z_cond), {d.t}, d.eps);
    require(std::isfinite(loss.value().item()), ErrorKind::DivergedTraining, "fine-tuning loss is not finite");
    const Gradients g = tape.backward(loss);
    adam.update(plist, bind.gradients(g, plist));
  }
  return params;
}

inline DenoiserParams finetune_step(DenoiserParams params, const NoiseSchedule& s, const Tensor& z_future,
                                    const Tensor& z_cond, std::size_t n_inner, Rng& rng, ParameterAdam& adam) {
  require(n_inner >= 1, ErrorKind::PreconditionViolation, "n_inner must be >= 1");
  std::vector<FinetuneDraw> draws;
  for (std::size_t i = 0; i < n_inner; ++i) {
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(s.T)));
    draws.push_back({t, Tensor::randn(z_future.shape(), rng)});
  }
  return finetune_step(std::move(params), s, z_future, z_cond, draws, adam);
}

}  // namespace noiseadapt
