// Command-line entry point: train / stream / ablate / oracle.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "noiseadapt/config.hpp"
#include "noiseadapt/io.hpp"
#include "noiseadapt/pipeline.hpp"
#include "noiseadapt/stream.hpp"

namespace fs = std::filesystem;
using namespace noiseadapt;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string sweep;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.variant.empty()) cfg.stream.variant = parse_variant(o.variant);
  return cfg;
}

fs::path prepare_out_dir(const RunConfig& cfg) {
  const fs::path dir = cfg.out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create output directory " + dir.string() + ": " + ec.message());
  write_file(dir / "resolved_config.txt", render_config(cfg));
  return dir;
}

TrainedModels require_models(const RunConfig& cfg) {
  require(models_exist(cfg.model_dir), ErrorKind::IoError,
          "no trained models in '" + cfg.model_dir + "' (run `noiseadapt train --out " + cfg.model_dir + "` first)");
  return load_models(cfg, cfg.model_dir);
}

void write_curve(const TrainingCurve& c, const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < c.losses.size(); ++i) rows.push_back({std::to_string(i), format_g9(c.losses[i])});
  if (!rows.empty()) write_table({"iteration", "loss"}, rows, path);
}

const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> cols{"variant",       "seed",          "steps",          "ssim",
                                             "psnr",          "boundary",      "frechet",        "ssim_first100",
                                             "ssim_last100",  "loss_total",    "predict_seconds", "adapt_seconds",
                                             "adapt_calls"};
  return cols;
}

std::vector<std::string> summary_row(const std::string& variant, std::uint64_t seed, const StreamSummary& s) {
  return {variant,
          std::to_string(seed),
          std::to_string(s.steps),
          format_g9(s.ssim),
          format_g9(s.psnr),
          format_g9(s.boundary),
          format_g9(s.frechet),
          format_g9(s.ssim_first100),
          format_g9(s.ssim_last100),
          format_g9(s.loss_total),
          format_g9(s.predict_seconds),
          format_g9(s.adapt_seconds),
          std::to_string(s.adapt_calls)};
}

void cmd_train(const RunConfig& cfg) {
  const fs::path dir = prepare_out_dir(cfg);
  TrainingReport report;
  const TrainedModels m = train_models(cfg, &report);
  save_models(m, dir);
  write_curve(report.autoencoder, dir / "autoencoder_curve.csv");
  write_curve(report.denoiser, dir / "denoiser_curve.csv");
  write_table({"key", "value"},
              {{"heldout_reconstruction_l1", format_g9(report.heldout_l1)},
               {"autoencoder_checksum", std::to_string(parameter_checksum(m.ae))},
               {"denoiser_checksum", std::to_string(parameter_checksum(m.denoiser))},
               {"features_checksum", std::to_string(m.features.checksum())}},
              dir / "train_summary.csv");
  std::cout << "heldout_reconstruction_l1=" << format_g9(report.heldout_l1) << "\n"
            << "models=" << dir.string() << "\n";
}

void cmd_stream(RunConfig cfg) {
  const TrainedModels m = require_models(cfg);
  const fs::path dir = prepare_out_dir(cfg);
  const auto result = run_configured_stream(m, cfg, cfg.seed);
  write_csv(result.records, dir / "steps.csv");
  const std::string name = to_string(cfg.stream.variant);
  write_table(summary_columns(), {summary_row(name, cfg.seed, result.summary)}, dir / "summary.csv");
  if (cfg.stream.keep_trajectory) {
    const std::size_t d = numel(m.ae.config.latent_shape());
    Tensor traj({result.records.size(), d});
    for (std::size_t i = 0; i < result.records.size(); ++i)
      for (std::size_t k = 0; k < d; ++k) traj[i * d + k] = (*result.records[i].noise)[k];
    write_tensor(dir / "noise_trajectory.nft", traj);
  }
  const auto& s = result.summary;
  std::cout << "variant=" << name << "\nseed=" << cfg.seed << "\nssim=" << format_g9(s.ssim)
            << "\npsnr=" << format_g9(s.psnr) << "\nfrechet=" << format_g9(s.frechet)
            << "\nboundary=" << format_g9(s.boundary) << "\nadapt_seconds=" << format_g9(s.adapt_seconds) << "\n";
}

void cmd_ablate(const RunConfig& base, const std::string& sweep) {
  require(!sweep.empty(), ErrorKind::ConfigError, "ablate needs --sweep (p, lambda, every_k, steps or eta)");
  const auto grid = sweep_grid(sweep);
  const std::string key = sweep_key(sweep);
  const TrainedModels m = require_models(base);
  const fs::path dir = prepare_out_dir(base);
  require(base.ablate_seeds >= 1, ErrorKind::ConfigError, "ablate.seeds must be >= 1");

  std::vector<std::string> header{"sweep", "value"};
  header.insert(header.end(), summary_columns().begin(), summary_columns().end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < base.ablate_seeds; ++i) {
    const std::uint64_t seed = base.seed + i;
    RunConfig frozen = base;
    frozen.stream.variant = Variant::Frozen;
    auto ref = summary_row("frozen", seed, run_configured_stream(m, frozen, seed).summary);
    ref.insert(ref.begin(), {sweep, "reference"});
    rows.push_back(ref);
    for (const auto& value : grid) {
      RunConfig cfg = base;
      set_config_value(cfg, key, value);
      validate(cfg.stream);
      auto row = summary_row(to_string(cfg.stream.variant), seed, run_configured_stream(m, cfg, seed).summary);
      row.insert(row.begin(), {sweep, value});
      rows.push_back(row);
      std::cout << sweep << "=" << value << " seed=" << seed << " ssim=" << row[5] << "\n" << std::flush;
    }
  }
  write_table(header, rows, dir / ("ablate_" + sweep + ".csv"));
}

void cmd_oracle(const RunConfig& cfg) {
  const TrainedModels m = require_models(cfg);
  const fs::path dir = prepare_out_dir(cfg);
  const auto clips = generate_stream(stream_spec_for(cfg, cfg.seed));
  const std::size_t steps = std::min(cfg.oracle_steps, clips.size() - 1);
  require(steps >= 1, ErrorKind::StreamTooShort, "oracle needs at least 2 clips");
  Rng rng(cfg.seed);
  std::vector<std::vector<std::string>> rows;
  std::size_t wins = 0;
  double single_sum = 0, best_sum = 0;
  for (std::size_t s = 1; s <= steps; ++s) {
    const Tensor zc = encode(m.ae, clips[s - 1]);
    const auto best = oracle_best_of_k(m.bundle(), cfg.stream.sampler, zc, clips[s], cfg.oracle_k, rng);
    if (best.ssim > best.all_ssim[0]) ++wins;
    single_sum += best.all_ssim[0];
    best_sum += best.ssim;
    rows.push_back({std::to_string(s), format_g9(best.all_ssim[0]), format_g9(best.ssim), std::to_string(best.index)});
  }
  write_table({"step", "single_ssim", "best_ssim", "best_index"}, rows, dir / "oracle.csv");
  std::vector<Tensor> window(clips.begin(), clips.begin() + static_cast<std::ptrdiff_t>(steps + 1));
  const auto upper = autoencoder_upper_bound(m.ae, m.features, window);
  write_table(summary_columns(), {summary_row("autoencoder_upper_bound", cfg.seed, upper.summary)},
              dir / "upper_bound.csv");
  const double n = static_cast<double>(steps);
  std::cout << "k=" << cfg.oracle_k << "\nsteps=" << steps << "\nsingle_ssim=" << format_g9(single_sum / n)
            << "\nbest_ssim=" << format_g9(best_sum / n) << "\nbest_beats_single_fraction=" << format_g9(wins / n)
            << "\nupper_bound_ssim=" << format_g9(upper.summary.ssim) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stream adaptation of a latent video diffusion predictor by optimizing its sampling noise"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "key = value run configuration file");
    cmd->add_option("--out", o.out, "output directory (overrides out_dir)");
    cmd->add_option("--seed", seed, "run seed (overrides seed)");
    cmd->add_option("--variant", o.variant,
                    "frozen | savi_dno_pixel | savi_dno_pixel_feature | savi_dno_latent | ddim_inverse | finetune");
  };
  auto* train = app.add_subcommand("train", "train the autoencoder and denoiser; writes parameter files");
  auto* stream = app.add_subcommand("stream", "run one variant over one evaluation stream");
  auto* ablate = app.add_subcommand("ablate", "sweep one hyperparameter over several seeds");
  auto* oracle = app.add_subcommand("oracle", "best-of-k reference and autoencoder upper bound");
  for (auto* c : {train, stream, ablate, oracle}) add_common(c);
  ablate->add_option("--sweep", o.sweep, "p | lambda | every_k | steps | eta")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: UsageError: " << e.what() << "\n";
    return 64;
  }

  try {
    for (auto* c : {train, stream, ablate, oracle})
      if (c->parsed() && c->count("--seed")) o.seed = seed;
    const RunConfig cfg = resolve(o);
    if (train->parsed()) cmd_train(cfg);
    if (stream->parsed()) cmd_stream(cfg);
    if (ablate->parsed()) cmd_ablate(cfg, o.sweep);
    if (oracle->parsed()) cmd_oracle(cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
