#pragma once

#include <cstddef>
#include <optional>

#include "noiseadapt/tensor.hpp"

namespace noiseadapt {

struct LossBreakdown {
  double pixel = 0.0;
  double feature = 0.0;
  double latent = 0.0;
  double total = 0.0;
};

/// One prediction step of a stream run.
struct StepRecord {
  std::size_t step = 0;  // 1-based: predicts clip `step` from clip `step - 1`
  double ssim = 0.0;
  double psnr = 0.0;
  double boundary = 0.0;
  LossBreakdown loss;
  double predict_seconds = 0.0;
  double adapt_seconds = 0.0;
  bool adapted = false;
  std::size_t inner_repeats = 0;
  std::optional<Tensor> noise;  // eps after this step, when trajectories are kept
};

}  // namespace noiseadapt
