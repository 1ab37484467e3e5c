#pragma once

// Streaming evaluation: each incoming clip is predicted from the previous one,
// scored once it arrives, and then (depending on the variant) used to adapt.

#include <chrono>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "noiseadapt/diffusion.hpp"
#include "noiseadapt/metrics.hpp"
#include "noiseadapt/noiseopt.hpp"
#include "noiseadapt/records.hpp"

namespace noiseadapt {

enum class Variant { Frozen, SaviPixel, SaviPixelFeature, SaviLatent, DdimInverse, Finetune };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Frozen: return "frozen";
    case Variant::SaviPixel: return "savi_dno_pixel";
    case Variant::SaviPixelFeature: return "savi_dno_pixel_feature";
    case Variant::SaviLatent: return "savi_dno_latent";
    case Variant::DdimInverse: return "ddim_inverse";
    case Variant::Finetune: return "finetune";
  }
  return "?";
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::Frozen, Variant::SaviPixel, Variant::SaviPixelFeature, Variant::SaviLatent,
                    Variant::DdimInverse, Variant::Finetune})
    if (to_string(v) == name) return v;
  fail(ErrorKind::ConfigError, "unknown variant '" + name + "'");
}

inline bool optimizes_noise(Variant v) {
  return v == Variant::SaviPixel || v == Variant::SaviPixelFeature || v == Variant::SaviLatent;
}

inline LossMode loss_mode(Variant v) {
  switch (v) {
    case Variant::SaviPixel: return LossMode::Pixel;
    case Variant::SaviLatent: return LossMode::Latent;
    default: return LossMode::PixelFeature;
  }
}

/// every_k value meaning "never after warmup".
inline constexpr std::size_t kNever = std::numeric_limits<std::size_t>::max();

struct StreamConfig {
  Variant variant = Variant::SaviPixelFeature;
  std::size_t every_k = 1;
  std::size_t warmup_steps = 0;
  std::size_t warmup_repeats = 1;
  std::size_t finetune_inner = 20;
  double finetune_lr = 1e-3;
  OptimConfig optim;
  SamplerConfig sampler;
  bool keep_trajectory = false;
  bool keep_predictions = false;
};

inline void validate(const StreamConfig& c) {
  require(c.every_k >= 1, ErrorKind::ConfigError, "every_k must be >= 1");
  require(c.warmup_repeats >= 1, ErrorKind::ConfigError, "warmup_repeats must be >= 1");
  require(c.finetune_inner >= 1, ErrorKind::ConfigError, "finetune_inner must be >= 1");
  require(c.finetune_lr > 0.0, ErrorKind::ConfigError, "finetune_lr must be positive");
  validate(c.optim);
}

struct OptimizeDecision {
  bool optimize = false;
  std::size_t repeats = 0;
};

/// Step s (1-based) adapts during warmup with `warmup_repeats` inner steps,
/// afterwards iff s is a multiple of every_k.
inline OptimizeDecision should_optimize(std::size_t s, std::size_t every_k, std::size_t warmup_steps,
                                        std::size_t warmup_repeats = 1) {
  require(s >= 1, ErrorKind::PreconditionViolation, "steps are 1-based");
  require(every_k >= 1, ErrorKind::PreconditionViolation, "every_k must be >= 1");
  if (s <= warmup_steps) return {true, warmup_repeats};
  if (every_k != kNever && s % every_k == 0) return {true, 1};
  return {false, 0};
}

/// Pull-based clip source; the harness reads each clip exactly once, in order.
class StreamSource {
 public:
  virtual ~StreamSource() = default;
  virtual std::optional<Tensor> next() = 0;
};

class VectorSource : public StreamSource {
 public:
  explicit VectorSource(const std::vector<Tensor>& clips) : clips_(clips) {}
  std::optional<Tensor> next() override {
    if (pos_ >= clips_.size()) return std::nullopt;
    return clips_[pos_++];
  }
  std::size_t served() const { return pos_; }

 private:
  const std::vector<Tensor>& clips_;
  std::size_t pos_ = 0;
};

struct StreamSummary {
  std::size_t steps = 0;
  double ssim = 0.0;
  double psnr = 0.0;
  double boundary = 0.0;
  double frechet = 0.0;
  double ssim_first100 = 0.0;
  double ssim_last100 = 0.0;
  double loss_total = 0.0;
  double predict_seconds = 0.0;  // mean per step
  double adapt_seconds = 0.0;    // mean per step, zero on steps without adaptation
  std::size_t adapt_calls = 0;
};

struct StreamResult {
  std::vector<StepRecord> records;
  StreamSummary summary;
  std::vector<Tensor> predictions;  // only with keep_predictions
};

struct StreamHooks {
  /// Called once a prediction is final, before its target is read.
  std::function<void(std::size_t step, const Tensor& x_pred)> on_prediction;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline double mean_over(const std::vector<StepRecord>& r, std::size_t begin, std::size_t end) {
  if (begin >= end) return 0.0;
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += r[i].ssim;
  return s / static_cast<double>(end - begin);
}

}  // namespace detail

inline StreamSummary summarize(const std::vector<StepRecord>& records, const std::vector<Tensor>& pred_features,
                               const std::vector<Tensor>& target_features) {
  StreamSummary s;
  s.steps = records.size();
  if (records.empty()) return s;
  for (const auto& r : records) {
    s.ssim += r.ssim;
    s.psnr += r.psnr;
    s.boundary += r.boundary;
    s.loss_total += r.loss.total;
    s.predict_seconds += r.predict_seconds;
    s.adapt_seconds += r.adapt_seconds;
    if (r.adapted) ++s.adapt_calls;
  }
  const double n = static_cast<double>(records.size());
  s.ssim /= n;
  s.psnr /= n;
  s.boundary /= n;
  s.loss_total /= n;
  s.predict_seconds /= n;
  s.adapt_seconds /= n;
  const std::size_t k = std::min<std::size_t>(100, records.size());
  s.ssim_first100 = detail::mean_over(records, 0, k);
  s.ssim_last100 = detail::mean_over(records, records.size() - k, records.size());
  if (pred_features.size() >= 2)
    s.frechet = frechet_distance(gaussian_fit(pred_features), gaussian_fit(target_features));
  return s;
}

/// Runs one variant over a stream. `rng` seeds every random draw of the run.
inline StreamResult run_stream(const ModelBundle& models, StreamSource& source, const StreamConfig& cfg, const Rng& rng,
                               const StreamHooks& hooks = {}) {
  validate(cfg);
  validate(cfg.sampler, *models.schedule);
  const Variant variant = cfg.variant;
  const bool noise_opt = optimizes_noise(variant);
  require(variant != Variant::DdimInverse || cfg.sampler.eta == 0.0, ErrorKind::EtaNonZero,
          "ddim_inverse needs eta = 0");
  const LossMode mode = loss_mode(variant);
  const Shape lat = models.ae->config.latent_shape();

  Rng init_rng = rng.derive(1), fresh_rng = rng.derive(2), sampler_rng = rng.derive(3), tune_rng = rng.derive(4);

  // Fine-tuning works on a private copy of the denoiser.
  DenoiserParams tuned;
  ParameterAdam tune_adam(AdamConfig{cfg.finetune_lr});
  ModelBundle m = models;
  if (variant == Variant::Finetune) {
    tuned = *models.denoiser;
    m.denoiser = &tuned;
  }

  std::optional<Tensor> cond = source.next();
  require(cond.has_value(), ErrorKind::StreamTooShort, "stream is empty");
  Tensor z_cond = encode(*m.ae, *cond);
  NoiseState state = make_noise_state(Tensor::randn(lat, init_rng));

  StreamResult out;
  std::vector<Tensor> pred_feat, target_feat;
  for (std::size_t s = 1;; ++s) {
    const OptimizeDecision plan = variant == Variant::Frozen ? OptimizeDecision{}
                                                             : should_optimize(s, cfg.every_k, cfg.warmup_steps,
                                                                               cfg.warmup_repeats);
    // Draws happen every step for every variant so that runs sharing a seed
    // see the same fresh noise.
    const Tensor fresh = Tensor::randn(lat, fresh_rng);
    const auto sampler_noise = draw_sampler_noise(cfg.sampler, lat, sampler_rng);

    const auto t0 = detail::Clock::now();
    Prediction pred;
    if (noise_opt) {
      pred = predict(m, cfg.sampler, z_cond, state.eps, fresh, cfg.optim.p, mode, plan.optimize, sampler_noise);
    } else if (variant == Variant::DdimInverse) {
      pred = predict(m, cfg.sampler, z_cond, state.eps, fresh, 1.0, mode, false, sampler_noise);
    } else {
      pred = predict(m, cfg.sampler, z_cond, fresh, fresh, 0.0, mode, false, sampler_noise);
    }
    StepRecord rec;
    rec.step = s;
    rec.predict_seconds = detail::seconds_since(t0);
    if (hooks.on_prediction) hooks.on_prediction(s, pred.x_pred);

    std::optional<Tensor> target = source.next();
    if (!target) break;
    require(target->shape() == pred.x_pred.shape(), ErrorKind::ShapeMismatch,
            "stream clip " + to_string(target->shape()) + " vs model " + to_string(pred.x_pred.shape()));

    rec.ssim = ssim(*target, pred.x_pred);
    rec.psnr = psnr(*target, pred.x_pred);
    rec.boundary = boundary_consistency(*cond, pred.x_pred);
    pred_feat.push_back((*m.features)(pred.x_pred));
    target_feat.push_back((*m.features)(*target));

    const auto t1 = detail::Clock::now();
    Tensor z_target;
    if (plan.optimize && noise_opt) {
      const Tensor obs = mode == LossMode::Latent ? encode(*m.ae, *target) : *target;
      auto [loss, grad] = noise_gradient(pred, m, obs, cfg.optim, mode);
      rec.loss = loss;
      state = optimize_noise_step(std::move(state), grad, cfg.optim);
      for (std::size_t r = 1; r < plan.repeats; ++r) {
        Prediction again = predict(m, cfg.sampler, z_cond, state.eps, fresh, cfg.optim.p, mode, true, sampler_noise);
        auto [l2, g2] = noise_gradient(again, m, obs, cfg.optim, mode);
        state = optimize_noise_step(std::move(state), g2, cfg.optim);
      }
    } else if (plan.optimize && variant == Variant::DdimInverse) {
      z_target = encode(*m.ae, *target);
      state.eps = ddim_invert(*m.denoiser, *m.schedule, cfg.sampler, z_cond, z_target);
    } else if (plan.optimize && variant == Variant::Finetune) {
      z_target = encode(*m.ae, *target);
      tuned = finetune_step(std::move(tuned), *m.schedule, z_target, z_cond, cfg.finetune_inner * plan.repeats,
                            tune_rng, tune_adam);
    }
    if (plan.optimize) {
      rec.adapt_seconds = detail::seconds_since(t1);
      rec.adapted = true;
      rec.inner_repeats = plan.repeats;
    }
    if (!(plan.optimize && noise_opt)) {
      const Tensor obs = mode == LossMode::Latent ? encode(*m.ae, *target) : *target;
      const Tensor prd = mode == LossMode::Latent ? pred.z_pred : pred.x_pred;
      rec.loss = total_loss(obs, prd, cfg.optim, *m.features, mode);
    }
    if (cfg.keep_trajectory) rec.noise = state.eps;
    if (cfg.keep_predictions) out.predictions.push_back(pred.x_pred);
    out.records.push_back(std::move(rec));

    z_cond = z_target.rank() != 0 ? std::move(z_target) : encode(*m.ae, *target);
    cond = std::move(target);
  }
  require(!out.records.empty(), ErrorKind::StreamTooShort, "stream needs at least 2 clips");
  out.summary = summarize(out.records, pred_feat, target_feat);
  return out;
}

inline StreamResult run_stream(const ModelBundle& models, const std::vector<Tensor>& clips, const StreamConfig& cfg,
                               const Rng& rng) {
  require(clips.size() >= 2, ErrorKind::StreamTooShort,
          "stream needs at least 2 clips, got " + std::to_string(clips.size()));
  VectorSource src(clips);
  return run_stream(models, src, cfg, rng);
}

// ---------------------------------------------------------------------------
// Reference points

struct BestOfK {
  Tensor x_pred;
  std::size_t index = 0;
  double ssim = 0.0;
  std::vector<double> all_ssim;  // per candidate, in draw order
};

/// Draws k noises in order and keeps the prediction with the highest SSIM
/// against the target. Candidate 0 uses the same draw a frozen prediction
/// would make from the same rng state.
inline BestOfK oracle_best_of_k(const ModelBundle& m, const SamplerConfig& sampler, const Tensor& z_cond,
                                const Tensor& x_target, std::size_t k, Rng& rng) {
  require(k >= 1, ErrorKind::PreconditionViolation, "k must be >= 1");
  const Shape lat = m.ae->config.latent_shape();
  BestOfK best;
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor eps = Tensor::randn(lat, rng);
    const Tensor x = decode(*m.ae, sample(*m.denoiser, *m.schedule, sampler, z_cond, eps, rng));
    const double q = ssim(x_target, x);
    best.all_ssim.push_back(q);
    if (i == 0 || q > best.ssim) {
      best.ssim = q;
      best.index = i;
      best.x_pred = x;
    }
  }
  return best;
}

/// Metrics of decode(encode(x)) against x for every clip after the first,
/// i.e. the steps a predictor is scored on.
inline StreamResult autoencoder_upper_bound(const AutoencoderParams& ae, const FeatureNet& g,
                                            const std::vector<Tensor>& clips) {
  require(clips.size() >= 2, ErrorKind::StreamTooShort, "stream needs at least 2 clips");
  StreamResult out;
  std::vector<Tensor> pf, tf;
  for (std::size_t s = 1; s < clips.size(); ++s) {
    const Tensor rec = decode(ae, encode(ae, clips[s]));
    StepRecord r;
    r.step = s;
    r.ssim = ssim(clips[s], rec);
    r.psnr = psnr(clips[s], rec);
    r.boundary = boundary_consistency(clips[s - 1], rec);
    pf.push_back(g(rec));
    tf.push_back(g(clips[s]));
    out.records.push_back(std::move(r));
  }
  out.summary = summarize(out.records, pf, tf);
  return out;
}

}  // namespace noiseadapt
