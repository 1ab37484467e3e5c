#pragma once

// Synthetic long video streams with scheduled distribution drift.
//
// The generator simulates one continuous sequence of frames and cuts it into
// non-overlapping clips of `frames` frames, so the last frame of clip i is
// immediately followed by the first frame of clip i+1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "noiseadapt/error.hpp"
#include "noiseadapt/tensor.hpp"

namespace noiseadapt {

enum class GeneratorKind { BouncingSprites, DriftingTexture };

inline std::string to_string(GeneratorKind k) {
  return k == GeneratorKind::BouncingSprites ? "bouncing-sprites" : "drifting-texture";
}

/// Parameter change applied from `clip` onwards. Sprites use speed, size,
/// shape and background; textures use frequency, angle, speed and background.
struct DriftEvent {
  std::size_t clip = 0;
  double speed_scale = 1.0;
  double size_delta = 0.0;
  double background_delta = 0.0;
  bool toggle_shape = false;
  double frequency_scale = 1.0;
  double angle_delta = 0.0;
};

struct StreamSpec {
  GeneratorKind kind = GeneratorKind::BouncingSprites;
  std::size_t length = 300;  // clips
  std::vector<DriftEvent> drifts;
  std::uint64_t seed = 0;
  std::size_t frames = 4;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t sprites = 2;
  double speed = 1.5;        // pixels per frame
  double sprite_radius = 4;  // half side for squares
  double background = 0.1;

  Shape clip_shape() const { return {frames, 1, height, width}; }
};

/// The default evaluation stream: 300 clips, one drift event at clip 150.
inline StreamSpec default_stream_spec(std::uint64_t seed,
                                      GeneratorKind kind = GeneratorKind::BouncingSprites) {
  StreamSpec s;
  s.kind = kind;
  s.seed = seed;
  s.length = 300;
  DriftEvent d;
  d.clip = 150;
  d.speed_scale = 1.6;
  d.toggle_shape = true;
  d.background_delta = 0.15;
  d.frequency_scale = 1.5;
  d.angle_delta = 0.8;
  s.drifts = {d};
  return s;
}

inline void validate(const StreamSpec& s) {
  require(s.length >= 1, ErrorKind::InvalidSpec, "stream length must be >= 1");
  require(s.frames >= 1 && s.height >= 1 && s.width >= 1, ErrorKind::InvalidSpec, "empty clip geometry");
  require(s.speed >= 0.0 && s.sprite_radius > 0.0, ErrorKind::InvalidSpec, "negative speed or sprite size");
  require(s.background >= 0.0 && s.background <= 1.0, ErrorKind::InvalidSpec, "background outside [0,1]");
  for (std::size_t i = 0; i < s.drifts.size(); ++i) {
    require(s.drifts[i].clip < s.length, ErrorKind::InvalidSpec,
            "drift at clip " + std::to_string(s.drifts[i].clip) + " beyond stream length");
    require(i == 0 || s.drifts[i].clip > s.drifts[i - 1].clip, ErrorKind::InvalidSpec,
            "drift indices must be strictly increasing");
    require(s.drifts[i].speed_scale >= 0.0 && s.drifts[i].frequency_scale > 0.0, ErrorKind::InvalidSpec,
            "drift scales must be positive");
  }
}

namespace detail {

struct Sprite {
  double x, y, vx, vy, radius;
  bool square;
};

inline void render_sprites(const std::vector<Sprite>& sprites, double background, std::size_t h, std::size_t w,
                           double* frame) {
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double px = static_cast<double>(j) + 0.5, py = static_cast<double>(i) + 0.5;
      double v = background;
      for (const auto& s : sprites) {
        const double dx = px - s.x, dy = py - s.y;
        const bool inside =
            s.square ? (std::abs(dx) <= s.radius && std::abs(dy) <= s.radius) : (dx * dx + dy * dy <= s.radius * s.radius);
        if (inside) v = 1.0;
      }
      frame[i * w + j] = v;
    }
}

inline void advance(Sprite& s, double speed_scale, double w, double h) {
  s.x += s.vx * speed_scale;
  s.y += s.vy * speed_scale;
  if (s.x - s.radius < 0) {
    s.x = 2 * s.radius - s.x;
    s.vx = std::abs(s.vx);
  }
  if (s.x + s.radius > w) {
    s.x = 2 * (w - s.radius) - s.x;
    s.vx = -std::abs(s.vx);
  }
  if (s.y - s.radius < 0) {
    s.y = 2 * s.radius - s.y;
    s.vy = std::abs(s.vy);
  }
  if (s.y + s.radius > h) {
    s.y = 2 * (h - s.radius) - s.y;
    s.vy = -std::abs(s.vy);
  }
}

}  // namespace detail

/// Clips of shape [frames, 1, height, width] with values in [0,1].
inline std::vector<Tensor> generate_stream(const StreamSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const std::size_t h = spec.height, w = spec.width, plane = h * w;
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  std::vector<Tensor> clips;
  clips.reserve(spec.length);

  double speed_scale = 1.0, background = spec.background, freq_scale = 1.0, angle_delta = 0.0;
  std::size_t next_drift = 0;

  std::vector<detail::Sprite> sprites;
  for (std::size_t k = 0; k < spec.sprites; ++k) {
    const double r = spec.sprite_radius * (0.8 + 0.4 * rng.uniform());
    const double angle = 2.0 * std::numbers::pi * rng.uniform();
    sprites.push_back({r + (W - 2 * r) * rng.uniform(), r + (H - 2 * r) * rng.uniform(), spec.speed * std::cos(angle),
                       spec.speed * std::sin(angle), r, k % 2 == 1});
  }
  const double base_radius_min = spec.sprite_radius * 0.5;

  // Texture state.
  const double freq = 1.5 + 1.5 * rng.uniform();
  const double theta = 2.0 * std::numbers::pi * rng.uniform();
  const double omega = spec.speed * (0.15 + 0.1 * rng.uniform());
  const double freq2 = 0.7 + 0.6 * rng.uniform();
  const double theta2 = 2.0 * std::numbers::pi * rng.uniform();
  double phase = 2.0 * std::numbers::pi * rng.uniform();
  double phase2 = 2.0 * std::numbers::pi * rng.uniform();

  for (std::size_t c = 0; c < spec.length; ++c) {
    while (next_drift < spec.drifts.size() && spec.drifts[next_drift].clip == c) {
      const DriftEvent& d = spec.drifts[next_drift++];
      speed_scale *= d.speed_scale;
      background = std::clamp(background + d.background_delta, 0.0, 0.9);
      freq_scale *= d.frequency_scale;
      angle_delta += d.angle_delta;
      for (auto& s : sprites) {
        s.radius = std::max(base_radius_min, s.radius + d.size_delta);
        if (d.toggle_shape) s.square = !s.square;
      }
    }
    Tensor clip(spec.clip_shape());
    for (std::size_t f = 0; f < spec.frames; ++f) {
      double* frame = &clip[f * plane];
      if (spec.kind == GeneratorKind::BouncingSprites) {
        detail::render_sprites(sprites, background, h, w, frame);
        for (auto& s : sprites) detail::advance(s, speed_scale, W, H);
      } else {
        const double th = theta + angle_delta, th2 = theta2 - 0.5 * angle_delta;
        const double fr = freq * freq_scale, fr2 = freq2 * freq_scale;
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double x = static_cast<double>(j) / W, y = static_cast<double>(i) / H;
            const double a = std::sin(2.0 * std::numbers::pi * fr * (x * std::cos(th) + y * std::sin(th)) - phase);
            const double b = std::sin(2.0 * std::numbers::pi * fr2 * (x * std::cos(th2) + y * std::sin(th2)) - phase2);
            frame[i * w + j] = std::clamp(background + 0.4 + 0.3 * a + 0.15 * b, 0.0, 1.0);
          }
        phase += omega * speed_scale;
        phase2 += 0.5 * omega * speed_scale;
      }
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace noiseadapt
