#pragma once

// Test-only oracles. Nothing here may call into the reverse-mode machinery
// when computing reference values.

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "noiseadapt/autodiff.hpp"
#include "noiseadapt/error.hpp"
#include "noiseadapt/models.hpp"
#include "noiseadapt/nn.hpp"
#include "noiseadapt/tensor.hpp"

namespace noiseadapt::testing {

/// Central finite-difference gradient of a scalar function of one tensor.
inline Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||).
inline double relative_error(const Tensor& a, const Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
  return std::sqrt(diff) / scale;
}

/// Analytic gradient of `build(tape, x)` w.r.t. x, via one tape.
inline Tensor tape_gradient(const std::function<Var(Tape&, const Var&)>& build, const Tensor& x) {
  Tape tape;
  Var xv = tape.leaf(x, true);
  Var loss = build(tape, xv);
  return tape.backward(loss)[xv];
}

inline double tape_value(const std::function<Var(Tape&, const Var&)>& build, const Tensor& x) {
  Tape tape;
  Var xv = tape.leaf(x, false);
  return build(tape, xv).value().item();
}

/// Relative error between the tape gradient and central differences.
inline double gradient_check(const std::function<Var(Tape&, const Var&)>& build, const Tensor& x, double h = 1e-5) {
  const Tensor analytic = tape_gradient(build, x);
  const Tensor numeric = finite_difference([&](const Tensor& p) { return tape_value(build, p); }, x, h);
  return relative_error(analytic, numeric);
}

/// Kind of the library error raised by f, or nullopt when nothing is thrown.
template <class F>
std::optional<ErrorKind> error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

/// Reduced model geometry for fast unit tests.
inline ModelConfig tiny_model() {
  ModelConfig c;
  c.height = c.width = 16;
  c.ae_width = 4;
  c.denoiser_hidden = 8;
  c.time_embed_dim = 4;
  c.feature_dim = 6;
  c.frames = 2;
  return c;
}

/// Adds N(0, scale^2) to every parameter, e.g. to wake up zero-initialized layers.
template <class Model>
void jitter_parameters(Model& m, double scale, Rng& rng) {
  Tensor flat = flatten_parameters(m);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += scale * rng.normal();
  unflatten_parameters(m, flat);
}

}  // namespace noiseadapt::testing
