#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "noiseadapt/noiseopt.hpp"
#include "test_support.hpp"

using namespace noiseadapt;
using noiseadapt::testing::error_kind_of;
using noiseadapt::testing::finite_difference;
using noiseadapt::testing::jitter_parameters;
using noiseadapt::testing::relative_error;
using noiseadapt::testing::tiny_model;

namespace {

struct TinyWorld {
  ModelConfig cfg = tiny_model();
  AutoencoderParams ae;
  DenoiserParams denoiser;
  FeatureNet features;
  NoiseSchedule schedule = build_schedule(100);

  explicit TinyWorld(std::uint64_t seed) {
    Rng rng(seed);
    ae = init_autoencoder(cfg, rng);
    denoiser = init_denoiser(cfg, rng);
    jitter_parameters(denoiser, 0.05, rng);
    features = FeatureNet(cfg, rng);
  }
  ModelBundle bundle() const { return {&ae, &denoiser, &features, &schedule}; }
};

double mae_oracle(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double pixel_loss(const Tensor& a, const Tensor& b) {
  Tape tape;
  return loss_pixel(tape.leaf(a), tape.leaf(b)).value().item();
}

double latent_loss(const Tensor& a, const Tensor& b) {
  Tape tape;
  return loss_latent(tape.leaf(a), tape.leaf(b)).value().item();
}

double feature_loss(const FeatureNet& g, const Tensor& a, const Tensor& b) {
  Tape tape;
  Binder bind(tape, false);
  return loss_feature(bind, g, tape.leaf(a), tape.leaf(b)).value().item();
}

}  // namespace

TEST(PixelLoss, ExamplesAndOracle) {
  const auto cfg = tiny_model();
  Rng rng(1);
  const Tensor x = Tensor::uniform(cfg.pixel_shape(), rng);
  EXPECT_EQ(pixel_loss(x, x), 0.0);
  EXPECT_EQ(pixel_loss(Tensor::full(cfg.pixel_shape(), 1.0), Tensor(cfg.pixel_shape())), 1.0);
  for (int i = 0; i < 20; ++i) {
    const Tensor a = Tensor::uniform(cfg.pixel_shape(), rng), b = Tensor::uniform(cfg.pixel_shape(), rng);
    EXPECT_NEAR(pixel_loss(a, b), mae_oracle(a, b), 1e-12);
  }
  EXPECT_EQ(error_kind_of([&] { (void)pixel_loss(x, Tensor({2, 2})); }), ErrorKind::ShapeMismatch);
}

TEST(FeatureLoss, ExamplesAndOracle) {
  const TinyWorld w(2);
  Rng rng(3);
  const Tensor x = Tensor::uniform(w.cfg.pixel_shape(), rng);
  EXPECT_EQ(feature_loss(w.features, x, x), 0.0);
  for (int i = 0; i < 20; ++i) {
    const Tensor a = Tensor::uniform(w.cfg.pixel_shape(), rng), b = Tensor::uniform(w.cfg.pixel_shape(), rng);
    const double ab = feature_loss(w.features, a, b);
    EXPECT_EQ(ab, feature_loss(w.features, b, a));
    const Tensor fa = w.features(a), fb = w.features(b);
    double oracle = 0.0;
    for (std::size_t k = 0; k < fa.size(); ++k) oracle += (fa[k] - fb[k]) * (fa[k] - fb[k]);
    EXPECT_NEAR(ab, oracle / static_cast<double>(fa.size()), 1e-10);
  }
}

TEST(LatentLoss, ExamplesAndOracle) {
  const auto cfg = tiny_model();
  Rng rng(4);
  const Tensor z = Tensor::randn(cfg.latent_shape(), rng);
  EXPECT_EQ(latent_loss(z, z), 0.0);
  Tensor shifted = z;
  for (std::size_t i = 0; i < z.size(); ++i) shifted[i] -= 0.375;
  EXPECT_NEAR(latent_loss(z, shifted), 0.375, 1e-15);
  for (int i = 0; i < 20; ++i) {
    const Tensor a = Tensor::randn(cfg.latent_shape(), rng), b = Tensor::randn(cfg.latent_shape(), rng);
    EXPECT_NEAR(latent_loss(a, b), mae_oracle(a, b), 1e-12);
  }
}

TEST(TotalLoss, Recombination) {
  const TinyWorld w(5);
  Rng rng(6);
  const Tensor a = Tensor::uniform(w.cfg.pixel_shape(), rng), b = Tensor::uniform(w.cfg.pixel_shape(), rng);
  OptimConfig oc;
  oc.lambda = 0.37;
  const auto l = total_loss(a, b, oc, w.features, LossMode::PixelFeature);
  EXPECT_NEAR(l.total, l.pixel + 0.37 * l.feature, 1e-12);
  EXPECT_GT(l.feature, 0.0);

  oc.lambda = 0.0;
  const auto z = total_loss(a, b, oc, w.features, LossMode::PixelFeature);
  EXPECT_EQ(z.total, z.pixel);
  EXPECT_EQ(z.pixel, total_loss(a, b, oc, w.features, LossMode::Pixel).total);
}

TEST(TotalLoss, ModeMismatch) {
  const TinyWorld w(5);
  const Tensor pix(w.cfg.pixel_shape()), lat(w.cfg.latent_shape());
  const OptimConfig oc;
  EXPECT_EQ(error_kind_of([&] { (void)total_loss(lat, lat, oc, w.features, LossMode::Pixel); }),
            ErrorKind::ModeMismatch);
  EXPECT_EQ(error_kind_of([&] { (void)total_loss(pix, pix, oc, w.features, LossMode::Latent); }),
            ErrorKind::ModeMismatch);
  EXPECT_FALSE(error_kind_of([&] { (void)total_loss(lat, lat, oc, w.features, LossMode::Latent); }).has_value());
}

TEST(Interpolation, EndpointsAreExact) {
  Rng rng(7);
  const Tensor a = Tensor::randn({64}, rng), b = Tensor::randn({64}, rng);
  EXPECT_EQ(interpolate_noise(1.0, a, b), a);
  EXPECT_EQ(interpolate_noise(0.0, a, b), b);
  const Tensor h = interpolate_noise(0.5, a, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(h[i], 0.70711 * (a[i] + b[i]), 1e-5 * (1 + std::fabs(a[i] + b[i])));
}

TEST(Interpolation, PreservesUnitVariance) {
  Rng rng(8);
  const std::size_t n = 100000;
  const Tensor a = Tensor::randn({n}, rng), b = Tensor::randn({n}, rng);
  for (double p : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const Tensor h = interpolate_noise(p, a, b);
    const double m = mean_of(h);
    double v = 0.0;
    for (double x : h.data()) v += (x - m) * (x - m);
    v /= static_cast<double>(n - 1);
    EXPECT_GE(v, 0.98) << "p=" << p;
    EXPECT_LE(v, 1.02) << "p=" << p;
  }
}

TEST(Interpolation, Errors) {
  const Tensor a({4}), b({5});
  EXPECT_EQ(error_kind_of([&] { (void)interpolate_noise(1.5, a, a); }), ErrorKind::POutOfRange);
  EXPECT_EQ(error_kind_of([&] { (void)interpolate_noise(-0.1, a, a); }), ErrorKind::POutOfRange);
  EXPECT_EQ(error_kind_of([&] { (void)interpolate_noise(0.5, a, b); }), ErrorKind::ShapeMismatch);
}

TEST(NoiseStep, ZeroGradientIsFixedPoint) {
  Rng rng(9);
  const Tensor eps = Tensor::randn({10}, rng);
  const auto s = optimize_noise_step(make_noise_state(eps), Tensor({10}), OptimConfig{});
  EXPECT_EQ(s.eps, eps);
  EXPECT_EQ(s.steps, 1u);
}

TEST(NoiseStep, FirstStepMovesByLearningRate) {
  Rng rng(10);
  const Tensor eps = Tensor::randn({10}, rng), g = Tensor::randn({10}, rng);
  OptimConfig oc;
  const auto s = optimize_noise_step(make_noise_state(eps), g, oc);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double delta = s.eps[i] - eps[i];
    EXPECT_NEAR(std::fabs(delta), oc.lr, 1e-6);
    EXPECT_LT(delta * g[i], 0.0);
  }
}

TEST(NoiseStep, NegatedGradientNegatesUpdate) {
  Rng rng(11);
  const Tensor eps = Tensor::randn({10}, rng), g = Tensor::randn({10}, rng);
  Tensor neg = g;
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
  const auto a = optimize_noise_step(make_noise_state(eps), g, OptimConfig{});
  const auto b = optimize_noise_step(make_noise_state(eps), neg, OptimConfig{});
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_NEAR(a.eps[i] - eps[i], -(b.eps[i] - eps[i]), 1e-15);
}

TEST(NoiseStep, ConvergesOnQuadratic) {
  Rng rng(12);
  const Tensor target = Tensor::uniform({8}, rng, -1.0, 1.0);
  NoiseState s = make_noise_state(Tensor({8}));
  for (int it = 0; it < 500; ++it) {
    Tensor g({8});
    for (std::size_t i = 0; i < 8; ++i) g[i] = 2.0 * (s.eps[i] - target[i]);
    s = optimize_noise_step(std::move(s), g, OptimConfig{});
  }
  EXPECT_LE(max_abs_diff(s.eps, target), 1e-3);
}

TEST(NoiseStep, NonFiniteGradientRejected) {
  Tensor g({3});
  g[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(error_kind_of([&] { (void)optimize_noise_step(make_noise_state(Tensor({3})), g, OptimConfig{}); }),
            ErrorKind::NonFiniteGradient);
}

TEST(Pipeline, GradientMatchesFiniteDifferences) {
  const TinyWorld w(13);
  const auto m = w.bundle();
  Rng rng(14);
  const Tensor zc = Tensor::randn(w.cfg.latent_shape(), rng), eps = Tensor::randn(w.cfg.latent_shape(), rng);
  const Tensor fresh = Tensor::randn(w.cfg.latent_shape(), rng), target = Tensor::uniform(w.cfg.pixel_shape(), rng);
  OptimConfig oc;
  oc.lambda = 0.5;
  const SamplerConfig sc{5, 0.0};
  auto loss_at = [&](const Tensor& e) {
    Prediction p = predict(m, sc, zc, e, fresh, oc.p, LossMode::PixelFeature, false);
    return total_loss(target, p.x_pred, oc, w.features, LossMode::PixelFeature).total;
  };
  Prediction p = predict(m, sc, zc, eps, fresh, oc.p, LossMode::PixelFeature, true);
  const Tensor analytic = noise_gradient(p, m, target, oc, LossMode::PixelFeature).second;
  EXPECT_LE(relative_error(analytic, finite_difference(loss_at, eps)), 1e-4);
}

TEST(Pipeline, ZeroLambdaMatchesPixelModeBitwise) {
  const TinyWorld w(15);
  const auto m = w.bundle();
  Rng rng(16);
  const Tensor zc = Tensor::randn(w.cfg.latent_shape(), rng), eps = Tensor::randn(w.cfg.latent_shape(), rng);
  const Tensor fresh = Tensor::randn(w.cfg.latent_shape(), rng), target = Tensor::uniform(w.cfg.pixel_shape(), rng);
  OptimConfig oc;
  oc.lambda = 0.0;
  auto grad = [&](LossMode mode) {
    Prediction p = predict(m, {10, 0.0}, zc, eps, fresh, oc.p, mode, true);
    return noise_gradient(p, m, target, oc, mode).second;
  };
  EXPECT_EQ(grad(LossMode::PixelFeature), grad(LossMode::Pixel));
}

TEST(Pipeline, PZeroMatchesFrozenAndLeavesNoiseUntouched) {
  const TinyWorld w(17);
  const auto m = w.bundle();
  Rng data(18);
  const Tensor zc = Tensor::randn(w.cfg.latent_shape(), data), target = Tensor::uniform(w.cfg.pixel_shape(), data);
  const Tensor eps = Tensor::randn(w.cfg.latent_shape(), data);
  OptimConfig oc;
  oc.p = 0.0;
  Rng a(19), b(19);
  const auto r = predict_and_adapt(m, {10, 0.0}, zc, target, make_noise_state(eps), oc, a, LossMode::PixelFeature);
  const Tensor fresh = Tensor::randn(w.cfg.latent_shape(), b);
  const Tensor frozen = decode(w.ae, sample(w.denoiser, w.schedule, {10, 0.0}, zc, fresh, b));
  EXPECT_EQ(r.x_pred, frozen);
  EXPECT_EQ(r.state.eps, eps);
}

TEST(Pipeline, RepeatedAdaptationReducesLoss) {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TinyWorld w(100 + seed);
    const auto m = w.bundle();
    Rng rng(200 + seed);
    const Tensor zc = Tensor::randn(w.cfg.latent_shape(), rng), target = Tensor::uniform(w.cfg.pixel_shape(), rng);
    NoiseState state = make_noise_state(Tensor::randn(w.cfg.latent_shape(), rng));
    OptimConfig oc;
    oc.p = 1.0;
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 20; ++i) {
      auto r = predict_and_adapt(m, {5, 0.0}, zc, target, std::move(state), oc, rng, LossMode::PixelFeature);
      (i == 0 ? first : last) = r.loss.total;
      state = std::move(r.state);
    }
    if (last < first) ++improved;
  }
  EXPECT_EQ(improved, 10);
}

TEST(Pipeline, StochasticSamplerRejected) {
  const TinyWorld w(21);
  Rng rng(0);
  const Tensor zc(w.cfg.latent_shape()), target(w.cfg.pixel_shape());
  EXPECT_EQ(error_kind_of([&] {
              (void)predict_and_adapt(w.bundle(), {10, 0.5}, zc, target, make_noise_state(Tensor(w.cfg.latent_shape())),
                                      OptimConfig{}, rng, LossMode::Pixel);
            }),
            ErrorKind::EtaNonZero);
}
