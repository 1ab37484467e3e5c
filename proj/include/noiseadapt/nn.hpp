#pragma once

// Layer building blocks shared by the autoencoder, denoiser and feature network.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

#include "noiseadapt/autodiff.hpp"
#include "noiseadapt/tensor.hpp"

namespace noiseadapt {

/// Immutable, cheaply copyable weight tensor. Updates replace the storage, so
/// copies of a parameter set never observe each other's training.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Tensor t) : value_(std::make_shared<const Tensor>(std::move(t))) {}

  const Tensor& value() const { return *value_; }
  const std::shared_ptr<const Tensor>& shared() const { return value_; }
  void assign(Tensor t) { value_ = std::make_shared<const Tensor>(std::move(t)); }

 private:
  std::shared_ptr<const Tensor> value_;
};

/// Places parameters on a tape, either as frozen constants or as trainable
/// leaves whose ids are remembered in binding order.
class Binder {
 public:
  Binder(Tape& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

  Var operator()(const Parameter& p) {
    Var v = tape_.constant(p.shared(), trainable_);
    if (trainable_) bound_.emplace_back(p.shared().get(), v);
    return v;
  }
  Tape& tape() { return tape_; }

  /// Gradient of `p`, summed over every place it was bound.
  Tensor gradient(const Gradients& grads, const Parameter& p) const {
    Tensor total(p.value().shape());
    for (const auto& [storage, v] : bound_)
      if (storage == p.shared().get()) {
        const Tensor g = grads[v];
        for (std::size_t i = 0; i < g.size(); ++i) total[i] += g[i];
      }
    return total;
  }

  std::vector<Tensor> gradients(const Gradients& grads, const std::vector<Parameter*>& params) const {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Parameter* p : params) out.push_back(gradient(grads, *p));
    return out;
  }

 private:
  Tape& tape_;
  bool trainable_;
  std::vector<std::pair<const Tensor*, Var>> bound_;
};

struct Conv {
  Parameter weight;  // [out, in, k, k]
  Parameter bias;    // [out]
  std::size_t stride = 1;
  std::size_t pad = 1;

  Var operator()(Binder& bind, const Var& x) const { return conv2d(x, bind(weight), bind(bias), stride, pad); }

  template <class F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
  template <class F>
  void visit(F&& f) const {
    f(weight);
    f(bias);
  }
};

struct Linear {
  Parameter weight;  // [in, out]
  Parameter bias;    // [1, out]

  Var operator()(Binder& bind, const Var& x) const { return matmul(x, bind(weight)) + bind(bias); }

  template <class F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
  template <class F>
  void visit(F&& f) const {
    f(weight);
    f(bias);
  }
};

inline Conv make_conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, Rng& rng,
                      double gain = 1.0) {
  const double scale = gain / std::sqrt(static_cast<double>(in * k * k));
  return Conv{Parameter(Tensor::randn({out, in, k, k}, rng, scale)), Parameter(Tensor::zeros({out})), stride, pad};
}

inline Linear make_linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
  const double scale = gain / std::sqrt(static_cast<double>(in));
  return Linear{Parameter(Tensor::randn({in, out}, rng, scale)), Parameter(Tensor::zeros({1, out}))};
}

// ---------------------------------------------------------------------------
// Parameter-set utilities. A parameter set is any type with visit(f).

template <class Params>
std::vector<Parameter*> parameter_list(Params& params) {
  std::vector<Parameter*> out;
  params.visit([&](Parameter& p) { out.push_back(&p); });
  return out;
}

template <class Params>
std::size_t parameter_count(const Params& params) {
  std::size_t n = 0;
  params.visit([&](const Parameter& p) { n += p.value().size(); });
  return n;
}

/// All parameters concatenated in visitation order.
template <class Params>
Tensor flatten_parameters(const Params& params) {
  std::vector<double> flat;
  params.visit([&](const Parameter& p) { flat.insert(flat.end(), p.value().data().begin(), p.value().data().end()); });
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

/// Inverse of flatten_parameters; shapes come from `params` itself.
template <class Params>
void unflatten_parameters(Params& params, const Tensor& flat) {
  require(flat.rank() == 1 && flat.size() == parameter_count(params), ErrorKind::ShapeMismatch,
          "parameter blob has " + std::to_string(flat.size()) + " values, model expects " +
              std::to_string(parameter_count(params)));
  std::size_t offset = 0;
  params.visit([&](Parameter& p) {
    const auto n = p.value().size();
    std::vector<double> part(flat.data().begin() + static_cast<std::ptrdiff_t>(offset),
                             flat.data().begin() + static_cast<std::ptrdiff_t>(offset + n));
    p.assign(Tensor(p.value().shape(), std::move(part)));
    offset += n;
  });
}

/// FNV-1a over the raw bytes of every parameter.
template <class Params>
std::uint64_t parameter_checksum(const Params& params) {
  std::uint64_t h = 1469598103934665603ULL;
  params.visit([&](const Parameter& p) {
    for (double v : p.value().data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  });
  return h;
}

// ---------------------------------------------------------------------------
// Adaptive-moment optimizer.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update in place. `step` is the 1-based count
/// including this update.
inline void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t step,
                        const AdamConfig& cfg) {
  require(grad.shape() == param.shape() && m.shape() == param.shape() && v.shape() == param.shape(),
          ErrorKind::ShapeMismatch, "adam state shape mismatch");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// Adam state over a whole parameter set.
class ParameterAdam {
 public:
  ParameterAdam() = default;
  explicit ParameterAdam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::size_t steps() const { return step_; }

  void update(const std::vector<Parameter*>& params, const std::vector<Tensor>& grads) {
    require(params.size() == grads.size(), ErrorKind::PreconditionViolation, "one gradient per parameter");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value().shape());
        v_.emplace_back(p->value().shape());
      }
    }
    ++step_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor updated = params[i]->value();
      adam_update(updated, grads[i], m_[i], v_[i], step_, cfg_);
      params[i]->assign(std::move(updated));
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace noiseadapt
