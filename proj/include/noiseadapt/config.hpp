#pragma once

// Plain-text run configuration. One `key = value` per line; `#` starts a
// comment. Every key has a default, unknown keys are rejected, and
// `render_config` prints the fully resolved set in a stable order.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "noiseadapt/data.hpp"
#include "noiseadapt/diffusion.hpp"
#include "noiseadapt/io.hpp"
#include "noiseadapt/models.hpp"
#include "noiseadapt/stream.hpp"

namespace noiseadapt {

struct TrainingConfig {
  std::size_t streams = 4;         // independent drift-free training streams
  std::size_t clips_per_stream = 150;
  AutoencoderTraining autoencoder;
  DenoiserTraining denoiser;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::string model_dir = "models";
  ModelConfig model;
  double beta_start = 1e-3;
  double beta_end = 0.2;
  StreamConfig stream;
  StreamSpec data = default_stream_spec(0);  // drifts are taken from `drift` below
  DriftEvent drift = default_stream_spec(0).drifts.front();
  bool drift_enabled = true;
  TrainingConfig train;
  std::size_t ablate_seeds = 3;
  std::size_t oracle_k = 10;
  std::size_t oracle_steps = 100;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  require(ec == std::errc() && ptr == end, ErrorKind::ConfigError, key + ": cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::ConfigError, key + ": expected true/false, got '" + v + "'");
}

inline std::string show(double v) { return format_g9(v); }
inline std::string show(std::size_t v) { return std::to_string(v); }
inline std::string show(std::uint64_t v, int) { return std::to_string(v); }
inline std::string show(bool v) { return v ? "true" : "false"; }

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto size_field = [&f](const std::string& key, auto member) {
      f[key] = {[member](const RunConfig& c) { return show(member(c)); },
                [member, key](RunConfig& c, const std::string& v) { member(c) = parse_number<std::size_t>(key, v); }};
    };
    auto real_field = [&f](const std::string& key, auto member) {
      f[key] = {[member](const RunConfig& c) { return show(member(c)); },
                [member, key](RunConfig& c, const std::string& v) { member(c) = parse_number<double>(key, v); }};
    };
    auto bool_field = [&f](const std::string& key, auto member) {
      f[key] = {[member](const RunConfig& c) { return show(member(c)); },
                [member, key](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
    };
    auto text_field = [&f](const std::string& key, auto member) {
      f[key] = {[member](const RunConfig& c) { return member(c); },
                [member](RunConfig& c, const std::string& v) { member(c) = v; }};
    };

    f["seed"] = {[](const RunConfig& c) { return show(c.seed, 0); },
                 [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }};
    text_field("out_dir", [](auto& c) -> auto& { return c.out_dir; });
    text_field("model_dir", [](auto& c) -> auto& { return c.model_dir; });

    size_field("model.frames", [](auto& c) -> auto& { return c.model.frames; });
    size_field("model.height", [](auto& c) -> auto& { return c.model.height; });
    size_field("model.width", [](auto& c) -> auto& { return c.model.width; });
    size_field("model.latent_channels", [](auto& c) -> auto& { return c.model.latent_channels; });
    size_field("model.ae_width", [](auto& c) -> auto& { return c.model.ae_width; });
    size_field("model.denoiser_hidden", [](auto& c) -> auto& { return c.model.denoiser_hidden; });
    size_field("model.time_embed_dim", [](auto& c) -> auto& { return c.model.time_embed_dim; });
    size_field("model.feature_dim", [](auto& c) -> auto& { return c.model.feature_dim; });

    size_field("schedule.T", [](auto& c) -> auto& { return c.model.timesteps; });
    real_field("schedule.beta_start", [](auto& c) -> auto& { return c.beta_start; });
    real_field("schedule.beta_end", [](auto& c) -> auto& { return c.beta_end; });

    size_field("sampler.steps", [](auto& c) -> auto& { return c.stream.sampler.num_steps; });
    real_field("sampler.eta", [](auto& c) -> auto& { return c.stream.sampler.eta; });

    f["stream.variant"] = {[](const RunConfig& c) { return to_string(c.stream.variant); },
                           [](RunConfig& c, const std::string& v) { c.stream.variant = parse_variant(v); }};
    f["stream.every_k"] = {
        [](const RunConfig& c) { return c.stream.every_k == kNever ? std::string("never") : show(c.stream.every_k); },
        [](RunConfig& c, const std::string& v) {
          c.stream.every_k = v == "never" ? kNever : parse_number<std::size_t>("stream.every_k", v);
        }};
    size_field("stream.warmup_steps", [](auto& c) -> auto& { return c.stream.warmup_steps; });
    size_field("stream.warmup_repeats", [](auto& c) -> auto& { return c.stream.warmup_repeats; });
    size_field("stream.finetune_inner", [](auto& c) -> auto& { return c.stream.finetune_inner; });
    real_field("stream.finetune_lr", [](auto& c) -> auto& { return c.stream.finetune_lr; });
    bool_field("stream.keep_trajectory", [](auto& c) -> auto& { return c.stream.keep_trajectory; });

    real_field("optim.lr", [](auto& c) -> auto& { return c.stream.optim.lr; });
    real_field("optim.lambda", [](auto& c) -> auto& { return c.stream.optim.lambda; });
    real_field("optim.p", [](auto& c) -> auto& { return c.stream.optim.p; });
    real_field("optim.beta1", [](auto& c) -> auto& { return c.stream.optim.beta1; });
    real_field("optim.beta2", [](auto& c) -> auto& { return c.stream.optim.beta2; });
    real_field("optim.eps", [](auto& c) -> auto& { return c.stream.optim.adam_eps; });
    real_field("optim.clip_norm", [](auto& c) -> auto& { return c.stream.optim.clip_norm; });

    f["data.generator"] = {[](const RunConfig& c) { return to_string(c.data.kind); },
                           [](RunConfig& c, const std::string& v) {
                             if (v == "bouncing-sprites")
                               c.data.kind = GeneratorKind::BouncingSprites;
                             else if (v == "drifting-texture")
                               c.data.kind = GeneratorKind::DriftingTexture;
                             else
                               fail(ErrorKind::ConfigError, "data.generator: unknown generator '" + v + "'");
                           }};
    size_field("data.length", [](auto& c) -> auto& { return c.data.length; });
    size_field("data.sprites", [](auto& c) -> auto& { return c.data.sprites; });
    real_field("data.speed", [](auto& c) -> auto& { return c.data.speed; });
    real_field("data.sprite_radius", [](auto& c) -> auto& { return c.data.sprite_radius; });
    real_field("data.background", [](auto& c) -> auto& { return c.data.background; });
    f["data.drift_clip"] = {
        [](const RunConfig& c) { return c.drift_enabled ? show(c.drift.clip) : std::string("none"); },
        [](RunConfig& c, const std::string& v) {
          c.drift_enabled = v != "none";
          if (c.drift_enabled) c.drift.clip = parse_number<std::size_t>("data.drift_clip", v);
        }};
    auto drift_real = [&f](const std::string& key, double DriftEvent::*member) {
      f[key] = {[member](const RunConfig& c) { return show(c.drift.*member); },
                [member, key](RunConfig& c, const std::string& v) { c.drift.*member = parse_number<double>(key, v); }};
    };
    drift_real("data.drift_speed_scale", &DriftEvent::speed_scale);
    drift_real("data.drift_size_delta", &DriftEvent::size_delta);
    drift_real("data.drift_background", &DriftEvent::background_delta);
    drift_real("data.drift_frequency_scale", &DriftEvent::frequency_scale);
    drift_real("data.drift_angle", &DriftEvent::angle_delta);
    f["data.drift_toggle_shape"] = {
        [](const RunConfig& c) { return show(c.drift.toggle_shape); },
        [](RunConfig& c, const std::string& v) { c.drift.toggle_shape = parse_bool("data.drift_toggle_shape", v); }};

    size_field("train.streams", [](auto& c) -> auto& { return c.train.streams; });
    size_field("train.clips_per_stream", [](auto& c) -> auto& { return c.train.clips_per_stream; });
    size_field("train.ae_epochs", [](auto& c) -> auto& { return c.train.autoencoder.epochs; });
    size_field("train.ae_batch", [](auto& c) -> auto& { return c.train.autoencoder.batch_clips; });
    real_field("train.ae_lr", [](auto& c) -> auto& { return c.train.autoencoder.lr; });
    size_field("train.denoiser_iterations", [](auto& c) -> auto& { return c.train.denoiser.iterations; });
    size_field("train.denoiser_batch", [](auto& c) -> auto& { return c.train.denoiser.batch; });
    real_field("train.denoiser_lr", [](auto& c) -> auto& { return c.train.denoiser.lr; });
    real_field("train.cond_dropout", [](auto& c) -> auto& { return c.train.denoiser.cond_dropout; });

    size_field("ablate.seeds", [](auto& c) -> auto& { return c.ablate_seeds; });
    size_field("oracle.k", [](auto& c) -> auto& { return c.oracle_k; });
    size_field("oracle.steps", [](auto& c) -> auto& { return c.oracle_steps; });
    return f;
  }();
  return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::fields()) keys.push_back(k);
  return keys;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& f = detail::fields();
  const auto it = f.find(key);
  require(it != f.end(), ErrorKind::ConfigError, "unknown key '" + key + "'");
  it->second.set(cfg, value);
}

inline std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const auto& f = detail::fields();
  const auto it = f.find(key);
  require(it != f.end(), ErrorKind::ConfigError, "unknown key '" + key + "'");
  return it->second.get(cfg);
}

/// Stream spec for a run: the configured stream with the run seed.
inline StreamSpec stream_spec_for(const RunConfig& cfg, std::uint64_t seed) {
  StreamSpec s = cfg.data;
  s.seed = seed;
  s.frames = cfg.model.frames;
  s.height = cfg.model.height;
  s.width = cfg.model.width;
  s.drifts.clear();
  if (cfg.drift_enabled) s.drifts.push_back(cfg.drift);
  return s;
}

/// Applies `key = value` lines on top of `base`.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::ConfigError,
            "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    require(!key.empty() && !value.empty(), ErrorKind::ConfigError,
            "line " + std::to_string(lineno) + ": empty key or value");
    set_config_value(base, key, value);
  }
  validate(stream_spec_for(base, base.seed));
  validate(base.stream);
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

inline std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : detail::fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}


}  // namespace noiseadapt
