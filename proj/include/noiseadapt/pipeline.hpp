#pragma once

// Model training from a run configuration and parameter persistence.

#include <filesystem>
#include <string>

#include "noiseadapt/config.hpp"
#include "noiseadapt/data.hpp"
#include "noiseadapt/diffusion.hpp"
#include "noiseadapt/io.hpp"
#include "noiseadapt/models.hpp"
#include "noiseadapt/noiseopt.hpp"
#include "noiseadapt/stream.hpp"

namespace noiseadapt {

struct TrainedModels {
  AutoencoderParams ae;
  DenoiserParams denoiser;
  FeatureNet features;
  NoiseSchedule schedule;

  ModelBundle bundle() const { return {&ae, &denoiser, &features, &schedule}; }
};

struct TrainingReport {
  TrainingCurve autoencoder;
  TrainingCurve denoiser;
  double heldout_l1 = 0.0;  // mean reconstruction L1 on held-out clips
};

/// Drift-free training streams, seeded away from evaluation seeds.
inline std::vector<Tensor> training_stream(const RunConfig& cfg, std::size_t index) {
  StreamSpec spec = stream_spec_for(cfg, 0x7a11'0000ULL + 7919ULL * cfg.seed + index);
  spec.drifts.clear();
  spec.length = cfg.train.clips_per_stream;
  return generate_stream(spec);
}

inline FeatureNet make_feature_net(const RunConfig& cfg) {
  Rng rng = Rng(cfg.seed).derive(0xfea7);
  return FeatureNet(cfg.model, rng);
}

inline TrainedModels train_models(const RunConfig& cfg, TrainingReport* report = nullptr) {
  TrainedModels m;
  m.schedule = build_schedule(cfg.model.timesteps, cfg.beta_start, cfg.beta_end);
  m.features = make_feature_net(cfg);

  std::vector<std::vector<Tensor>> streams;
  std::vector<Tensor> clips;
  for (std::size_t i = 0; i < cfg.train.streams; ++i) {
    streams.push_back(training_stream(cfg, i));
    clips.insert(clips.end(), streams.back().begin(), streams.back().end());
  }

  Rng init = Rng(cfg.seed).derive(0xae);
  AutoencoderTraining aet = cfg.train.autoencoder;
  aet.seed = Rng(cfg.seed).derive(0xae1).seed();
  m.ae = train_autoencoder(init_autoencoder(cfg.model, init), clips, aet, report ? &report->autoencoder : nullptr);

  std::vector<LatentPair> pairs;
  for (const auto& s : streams) {
    std::vector<Tensor> z;
    for (const auto& c : s) z.push_back(encode(m.ae, c));
    for (std::size_t i = 0; i + 1 < z.size(); ++i) pairs.push_back({z[i], z[i + 1]});
  }
  Rng dinit = Rng(cfg.seed).derive(0xd0);
  DenoiserTraining dt = cfg.train.denoiser;
  dt.seed = Rng(cfg.seed).derive(0xd1).seed();
  m.denoiser = train_denoiser(init_denoiser(cfg.model, dinit), m.schedule, pairs, dt,
                              report ? &report->denoiser : nullptr);

  if (report) {
    RunConfig held = cfg;
    held.seed = cfg.seed + 1'000'003ULL;
    const auto test = training_stream(held, 0);
    double s = 0.0;
    for (const auto& c : test) s += reconstruction_l1(m.ae, c);
    report->heldout_l1 = s / static_cast<double>(test.size());
  }
  return m;
}

inline void save_models(const TrainedModels& m, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  write_tensor(dir / "autoencoder.nft", flatten_parameters(m.ae));
  write_tensor(dir / "denoiser.nft", flatten_parameters(m.denoiser));
  write_tensor(dir / "features.nft", flatten_parameters(m.features));
}

/// Loads parameters into freshly shaped models; shapes come from `cfg`.
inline TrainedModels load_models(const RunConfig& cfg, const std::filesystem::path& dir) {
  TrainedModels m;
  m.schedule = build_schedule(cfg.model.timesteps, cfg.beta_start, cfg.beta_end);
  Rng scratch(0);
  m.ae = init_autoencoder(cfg.model, scratch);
  m.denoiser = init_denoiser(cfg.model, scratch);
  m.features = FeatureNet(cfg.model, scratch);
  unflatten_parameters(m.ae, read_tensor(dir / "autoencoder.nft"));
  unflatten_parameters(m.denoiser, read_tensor(dir / "denoiser.nft"));
  unflatten_parameters(m.features, read_tensor(dir / "features.nft"));
  m.features.seal();
  return m;
}

inline bool models_exist(const std::filesystem::path& dir) {
  for (const char* f : {"autoencoder.nft", "denoiser.nft", "features.nft"})
    if (!std::filesystem::exists(dir / f)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Evaluation runs

/// One stream run of the configured variant on the evaluation stream `seed`.
inline StreamResult run_configured_stream(const TrainedModels& m, const RunConfig& cfg, std::uint64_t seed) {
  const auto clips = generate_stream(stream_spec_for(cfg, seed));
  return run_stream(m.bundle(), clips, cfg.stream, Rng(seed));
}

inline const std::vector<std::string>& sweep_names() {
  static const std::vector<std::string> names{"p", "lambda", "every_k", "steps", "eta"};
  return names;
}

/// Default grid of a sweep, as config values.
inline std::vector<std::string> sweep_grid(const std::string& name) {
  if (name == "p") return {"0", "0.25", "0.5", "0.75", "0.9", "1"};
  if (name == "lambda") return {"0", "0.002", "0.012", "0.1", "1"};
  if (name == "every_k") return {"1", "2", "5", "10"};
  if (name == "steps") return {"5", "10", "20"};
  if (name == "eta") return {"0", "0.5", "1"};
  fail(ErrorKind::ConfigError, "unknown sweep '" + name + "' (expected p, lambda, every_k, steps or eta)");
}

inline std::string sweep_key(const std::string& name) {
  if (name == "p") return "optim.p";
  if (name == "lambda") return "optim.lambda";
  if (name == "every_k") return "stream.every_k";
  if (name == "steps") return "sampler.steps";
  if (name == "eta") return "sampler.eta";
  fail(ErrorKind::ConfigError, "unknown sweep '" + name + "'");
}

}  // namespace noiseadapt
