#pragma once

// Reverse-mode differentiation over an explicit, single-use tape, plus
// segment-level gradient checkpointing.
//
// A Var is a handle (tape, node id). Every op appends a node holding its
// output value; when any input requires a gradient the node also stores a
// vector-Jacobian closure. backward() walks the tape once in reverse order.
//
// checkpoint() runs a segment on a scratch tape, keeps only the segment
// outputs, and replays the segment with gradients enabled during backward.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "noiseadapt/error.hpp"
#include "noiseadapt/kernels.hpp"
#include "noiseadapt/tensor.hpp"

namespace noiseadapt {

using NodeId = std::size_t;

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  MatMul,
  Conv2d,
  AvgPool,
  Upsample,
  Relu,
  Silu,
  Sigmoid,
  Tanh,
  Reshape,
  Concat,
  Slice,
  Sum,
  Mean,
  Abs,
  Square,
  Sqrt,
  AddScalar,
  MulScalar,
  SegmentHeader,
  SegmentOutput,
};

/// Counts doubles held by live tape nodes on this thread. Used to verify the
/// memory bound of checkpointed chains.
class TapeMemory {
 public:
  static TapeMemory& local() {
    thread_local TapeMemory meter;
    return meter;
  }
  void acquire(std::size_t n) {
    live_ += n;
    peak_ = std::max(peak_, live_);
  }
  void release(std::size_t n) { live_ -= n; }
  std::size_t live() const { return live_; }
  std::size_t peak() const { return peak_; }
  void reset_peak() { peak_ = live_; }

 private:
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
};

using GradList = std::vector<std::optional<Tensor>>;
/// Maps the output gradient to one optional gradient per input. `needed[i]`
/// tells whether input i wants its gradient computed.
using VjpFn = std::function<GradList(const Tensor& grad_out, const std::vector<bool>& needed)>;

struct TapeNode {
  OpKind op = OpKind::Leaf;
  std::vector<NodeId> inputs;
  std::shared_ptr<const Tensor> value;  // null for segment headers
  Shape grad_shape;
  bool requires_grad = false;
  std::size_t counted = 0;  // doubles charged to TapeMemory
  VjpFn vjp;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Gradients produced by one backward pass, indexed by node id.
class Gradients {
 public:
  explicit Gradients(std::vector<std::optional<Tensor>> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  bool has(NodeId id) const { return id < grads_.size() && grads_[id].has_value(); }
  /// Gradient of a node; nodes the loss does not depend on get zeros.
  Tensor at(NodeId id) const {
    require(id < grads_.size(), ErrorKind::PreconditionViolation, "gradient requested for unknown node");
    return grads_[id] ? *grads_[id] : Tensor(shapes_[id]);
  }
  Tensor operator[](const Var& v) const { return at(v.id()); }

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::vector<Shape> shapes_;
};

struct CheckpointOptions {
  /// Compare replayed segment outputs against the forward outputs bitwise.
  bool verify_replay = false;
};

using SegmentFn = std::function<std::vector<Var>(Tape&, std::span<const Var>)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() {
    auto& meter = TapeMemory::local();
    for (const auto& n : nodes_) meter.release(n.counted);
  }

  /// Leaf holding a copy of `value`.
  Var leaf(Tensor value, bool requires_grad = false) {
    return push(OpKind::Leaf, {}, std::make_shared<const Tensor>(std::move(value)), requires_grad, nullptr);
  }
  /// Leaf sharing externally owned storage (not charged to the memory meter).
  Var constant(std::shared_ptr<const Tensor> value, bool requires_grad = false) {
    require(!consumed_, ErrorKind::DoubleBackward, "tape already consumed by backward");
    TapeNode node;
    node.op = OpKind::Leaf;
    node.grad_shape = value->shape();
    node.requires_grad = requires_grad;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const TapeNode& node(NodeId id) const { return nodes_.at(id); }

  /// Appends a node. The vjp is dropped when no input requires a gradient.
  Var push(OpKind op, std::vector<NodeId> inputs, std::shared_ptr<const Tensor> value, bool leaf_grad, VjpFn vjp,
           std::optional<Shape> grad_shape = std::nullopt) {
    require(!consumed_, ErrorKind::DoubleBackward, "tape already consumed by backward");
    if (value) {
      require(value->all_finite(), ErrorKind::NonFiniteValue,
              std::string("non-finite output from op #") + std::to_string(static_cast<int>(op)));
    }
    TapeNode node;
    node.op = op;
    node.grad_shape = grad_shape ? *grad_shape : value->shape();
    node.requires_grad = leaf_grad;
    for (NodeId i : inputs) node.requires_grad = node.requires_grad || nodes_.at(i).requires_grad;
    if (node.requires_grad && op != OpKind::Leaf) node.vjp = std::move(vjp);
    node.inputs = std::move(inputs);
    node.counted = value ? value->size() : 0;
    TapeMemory::local().acquire(node.counted);
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  /// Reverse sweep from a scalar loss. The tape can be swept only once.
  Gradients backward(const Var& loss) {
    require(&loss.tape() == this, ErrorKind::PreconditionViolation, "loss belongs to a different tape");
    require(!nodes_.empty(), ErrorKind::PreconditionViolation, "backward on an empty tape");
    require(loss.value().size() == 1, ErrorKind::NotScalarLoss,
            "loss has shape " + to_string(loss.value().shape()));
    return sweep({loss}, {Tensor(loss.value().shape(), {1.0})});
  }

  /// Reverse sweep seeded with explicit output gradients (used by segment replay).
  Gradients backward_seeded(std::span<const Var> outputs, std::span<const Tensor> seeds) {
    require(outputs.size() == seeds.size(), ErrorKind::PreconditionViolation, "one seed per output required");
    return sweep(std::vector<Var>(outputs.begin(), outputs.end()), std::vector<Tensor>(seeds.begin(), seeds.end()));
  }

 private:
  Gradients sweep(const std::vector<Var>& outputs, const std::vector<Tensor>& seeds) {
    require(!consumed_, ErrorKind::DoubleBackward, "tape already consumed by backward");
    consumed_ = true;
    std::vector<std::optional<Tensor>> grads(nodes_.size());
    NodeId last = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      const NodeId id = outputs[i].id();
      require(seeds[i].shape() == nodes_[id].grad_shape, ErrorKind::ShapeMismatch, "seed shape mismatch");
      accumulate(grads[id], seeds[i]);
      last = std::max(last, id);
    }
    for (NodeId id = last + 1; id-- > 0;) {
      TapeNode& n = nodes_[id];
      if (!grads[id] || !n.requires_grad || !n.vjp) continue;
      std::vector<bool> needed(n.inputs.size());
      for (std::size_t k = 0; k < n.inputs.size(); ++k) needed[k] = nodes_[n.inputs[k]].requires_grad;
      GradList gin = n.vjp(*grads[id], needed);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (!needed[k] || !gin[k]) continue;
        accumulate(grads[n.inputs[k]], std::move(*gin[k]));
      }
      n.vjp = nullptr;
    }
    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) shapes.push_back(n.grad_shape);
    return Gradients(std::move(grads), std::move(shapes));
  }

  static void accumulate(std::optional<Tensor>& slot, Tensor g) {
    if (!slot) {
      slot = std::move(g);
      return;
    }
    require(slot->shape() == g.shape(), ErrorKind::ShapeMismatch, "gradient shape mismatch during accumulation");
    for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
  }

  std::vector<TapeNode> nodes_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return *tape_->node(id_).value; }
inline bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

// ---------------------------------------------------------------------------
// Elementary ops

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  require(&a.tape() == &b.tape(), ErrorKind::PreconditionViolation, "operands live on different tapes");
  return a.tape();
}

inline std::shared_ptr<const Tensor> share(Tensor t) { return std::make_shared<const Tensor>(std::move(t)); }

inline std::shared_ptr<const Tensor> value_ptr(const Var& v) { return v.tape().node(v.id()).value; }

template <class Fwd, class Deriv>
Var pointwise(const Var& x, OpKind kind, Fwd fwd, Deriv deriv) {
  auto xv = value_ptr(x);
  auto out = share(kernels::unary(*xv, fwd));
  VjpFn vjp = [xv, out, deriv](const Tensor& g, const std::vector<bool>&) -> GradList {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * deriv((*xv)[i], (*out)[i]);
    return {std::move(gx)};
  };
  return x.tape().push(kind, {x.id()}, out, false, std::move(vjp));
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  Shape sa = a.shape(), sb = b.shape();
  auto out = detail::share(kernels::binary(a.value(), b.value(), [](double x, double y) { return x + y; }));
  VjpFn vjp = [sa, sb](const Tensor& g, const std::vector<bool>& need) -> GradList {
    GradList r(2);
    if (need[0]) r[0] = kernels::reduce_to_shape(g, sa);
    if (need[1]) r[1] = kernels::reduce_to_shape(g, sb);
    return r;
  };
  return t.push(OpKind::Add, {a.id(), b.id()}, out, false, std::move(vjp));
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  Shape sa = a.shape(), sb = b.shape();
  auto out = detail::share(kernels::binary(a.value(), b.value(), [](double x, double y) { return x - y; }));
  VjpFn vjp = [sa, sb](const Tensor& g, const std::vector<bool>& need) -> GradList {
    GradList r(2);
    if (need[0]) r[0] = kernels::reduce_to_shape(g, sa);
    if (need[1]) {
      Tensor ng = kernels::unary(g, [](double v) { return -v; });
      r[1] = kernels::reduce_to_shape(ng, sb);
    }
    return r;
  };
  return t.push(OpKind::Sub, {a.id(), b.id()}, out, false, std::move(vjp));
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  auto av = detail::value_ptr(a), bv = detail::value_ptr(b);
  auto out = detail::share(kernels::binary(*av, *bv, [](double x, double y) { return x * y; }));
  VjpFn vjp = [av, bv](const Tensor& g, const std::vector<bool>& need) -> GradList {
    GradList r(2);
    if (need[0]) r[0] = kernels::mul_broadcast_grad(g, *bv, av->shape());
    if (need[1]) r[1] = kernels::mul_broadcast_grad(g, *av, bv->shape());
    return r;
  };
  return t.push(OpKind::Mul, {a.id(), b.id()}, out, false, std::move(vjp));
}

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  auto av = detail::value_ptr(a), bv = detail::value_ptr(b);
  auto out = detail::share(kernels::matmul(*av, *bv));
  VjpFn vjp = [av, bv](const Tensor& g, const std::vector<bool>& need) -> GradList {
    GradList r(2);
    if (need[0]) r[0] = kernels::matmul(g, *bv, false, true);
    if (need[1]) r[1] = kernels::matmul(*av, g, true, false);
    return r;
  };
  return t.push(OpKind::MatMul, {a.id(), b.id()}, out, false, std::move(vjp));
}

/// 2-D convolution of x [N,C,H,W] with w [O,C,K,K] plus per-channel bias [O].
inline Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t stride = 1, std::size_t pad = 0) {
  Tape& t = detail::same_tape(x, w);
  detail::same_tape(x, bias);
  auto xv = detail::value_ptr(x), wv = detail::value_ptr(w);
  auto out = detail::share(kernels::conv2d(*xv, *wv, &bias.value(), stride, pad));
  VjpFn vjp = [xv, wv, stride, pad](const Tensor& g, const std::vector<bool>& need) -> GradList {
    GradList r(3);
    if (need[0]) r[0] = kernels::conv2d_grad_input(g, *wv, xv->shape(), stride, pad);
    if (need[1]) r[1] = kernels::conv2d_grad_weight(g, *xv, wv->shape(), stride, pad);
    if (need[2]) r[2] = kernels::conv2d_grad_bias(g);
    return r;
  };
  return t.push(OpKind::Conv2d, {x.id(), w.id(), bias.id()}, out, false, std::move(vjp));
}

inline Var avg_pool(const Var& x, std::size_t window) {
  Shape sx = x.shape();
  auto out = detail::share(kernels::avg_pool(x.value(), window));
  VjpFn vjp = [sx, window](const Tensor& g, const std::vector<bool>&) -> GradList {
    return {kernels::avg_pool_grad(g, sx, window)};
  };
  return x.tape().push(OpKind::AvgPool, {x.id()}, out, false, std::move(vjp));
}

inline Var upsample(const Var& x, std::size_t factor) {
  Shape sx = x.shape();
  auto out = detail::share(kernels::upsample_nearest(x.value(), factor));
  VjpFn vjp = [sx, factor](const Tensor& g, const std::vector<bool>&) -> GradList {
    return {kernels::upsample_nearest_grad(g, sx, factor)};
  };
  return x.tape().push(OpKind::Upsample, {x.id()}, out, false, std::move(vjp));
}

inline Var relu(const Var& x) {
  return detail::pointwise(
      x, OpKind::Relu, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// x * sigmoid(x); smooth, so finite-difference checks stay meaningful.
inline Var silu(const Var& x) {
  return detail::pointwise(
      x, OpKind::Silu, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

inline Var sigmoid(const Var& x) {
  return detail::pointwise(
      x, OpKind::Sigmoid, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& x) {
  return detail::pointwise(
      x, OpKind::Tanh, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

/// |x| with subgradient 0 at 0.
inline Var abs(const Var& x) {
  return detail::pointwise(
      x, OpKind::Abs, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var square(const Var& x) {
  return detail::pointwise(
      x, OpKind::Square, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var sqrt(const Var& x) {
  return detail::pointwise(
      x, OpKind::Sqrt, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

inline Var add_scalar(const Var& x, double c) {
  auto out = detail::share(kernels::unary(x.value(), [c](double v) { return v + c; }));
  VjpFn vjp = [](const Tensor& g, const std::vector<bool>&) -> GradList { return {g}; };
  return x.tape().push(OpKind::AddScalar, {x.id()}, out, false, std::move(vjp));
}

inline Var mul_scalar(const Var& x, double c) {
  auto out = detail::share(kernels::unary(x.value(), [c](double v) { return v * c; }));
  VjpFn vjp = [c](const Tensor& g, const std::vector<bool>&) -> GradList {
    return {kernels::unary(g, [c](double v) { return v * c; })};
  };
  return x.tape().push(OpKind::MulScalar, {x.id()}, out, false, std::move(vjp));
}

inline Var reshape(const Var& x, Shape shape) {
  Shape sx = x.shape();
  auto out = detail::share(x.value().reshaped(std::move(shape)));
  VjpFn vjp = [sx](const Tensor& g, const std::vector<bool>&) -> GradList { return {g.reshaped(sx)}; };
  return x.tape().push(OpKind::Reshape, {x.id()}, out, false, std::move(vjp));
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::ShapeMismatch, "concat of zero tensors");
  Tape& t = parts[0].tape();
  std::vector<const Tensor*> values;
  std::vector<NodeId> ids;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    values.push_back(&p.value());
    ids.push_back(p.id());
    extents.push_back(p.value().dim(axis));
  }
  auto out = detail::share(kernels::concat(values, axis));
  VjpFn vjp = [extents, axis](const Tensor& g, const std::vector<bool>& need) -> GradList {
    GradList r(extents.size());
    std::size_t begin = 0;
    for (std::size_t i = 0; i < extents.size(); ++i) {
      if (need[i]) r[i] = kernels::slice(g, axis, begin, begin + extents[i]);
      begin += extents[i];
    }
    return r;
  };
  return t.push(OpKind::Concat, std::move(ids), out, false, std::move(vjp));
}

inline Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  Shape sx = x.shape();
  auto out = detail::share(kernels::slice(x.value(), axis, begin, end));
  VjpFn vjp = [sx, axis, begin](const Tensor& g, const std::vector<bool>&) -> GradList {
    return {kernels::slice_grad(g, sx, axis, begin)};
  };
  return x.tape().push(OpKind::Slice, {x.id()}, out, false, std::move(vjp));
}

inline Var sum(const Var& x) {
  Shape sx = x.shape();
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  auto out = detail::share(Tensor::scalar(s));
  VjpFn vjp = [sx](const Tensor& g, const std::vector<bool>&) -> GradList { return {Tensor::full(sx, g[0])}; };
  return x.tape().push(OpKind::Sum, {x.id()}, out, false, std::move(vjp));
}

inline Var mean(const Var& x) {
  Shape sx = x.shape();
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  auto out = detail::share(Tensor::scalar(s / n));
  VjpFn vjp = [sx, n](const Tensor& g, const std::vector<bool>&) -> GradList { return {Tensor::full(sx, g[0] / n)}; };
  return x.tape().push(OpKind::Mean, {x.id()}, out, false, std::move(vjp));
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& x) { return mul_scalar(x, c); }
inline Var operator*(const Var& x, double c) { return mul_scalar(x, c); }
inline Var operator+(const Var& x, double c) { return add_scalar(x, c); }

// ---------------------------------------------------------------------------
// Checkpointing

/// Runs `fn` on `inputs` without retaining its intermediates. During backward
/// the segment is replayed on a scratch tape to obtain the input gradients.
/// `fn` must be deterministic in its inputs; randomness goes in as an input.
inline std::vector<Var> checkpoint(const SegmentFn& fn, std::span<const Var> inputs,
                                   CheckpointOptions options = {}) {
  require(!inputs.empty(), ErrorKind::PreconditionViolation, "checkpoint segment needs at least one input");
  Tape& tape = inputs[0].tape();
  std::vector<std::shared_ptr<const Tensor>> in_values;
  std::vector<NodeId> in_ids;
  for (const Var& v : inputs) {
    detail::same_tape(inputs[0], v);
    in_values.push_back(detail::value_ptr(v));
    in_ids.push_back(v.id());
  }

  std::vector<std::shared_ptr<const Tensor>> out_values;
  {
    Tape scratch;
    std::vector<Var> leaves;
    for (const auto& v : in_values) leaves.push_back(scratch.constant(v));
    for (const Var& o : fn(scratch, leaves)) out_values.push_back(detail::value_ptr(o));
  }

  std::vector<std::size_t> offsets{0};
  for (const auto& v : out_values) offsets.push_back(offsets.back() + v->size());
  const std::size_t total = offsets.back();

  VjpFn header_vjp = [fn, in_values, out_values, offsets, options](const Tensor& g,
                                                                   const std::vector<bool>& need) -> GradList {
    Tape scratch;
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < in_values.size(); ++i) {
      leaves.push_back(scratch.constant(in_values[i], need[i]));
    }
    std::vector<Var> outs = fn(scratch, leaves);
    require(outs.size() == out_values.size(), ErrorKind::NonDeterministicSegment, "segment output count changed");
    if (options.verify_replay) {
      for (std::size_t i = 0; i < outs.size(); ++i)
        require(outs[i].value() == *out_values[i], ErrorKind::NonDeterministicSegment,
                "segment replay differs from forward output " + std::to_string(i));
    }
    std::vector<Tensor> seeds;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      std::vector<double> part(g.data().begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                               g.data().begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]));
      seeds.emplace_back(out_values[i]->shape(), std::move(part));
    }
    // Outputs that do not depend on any differentiable leaf contribute nothing.
    std::vector<Var> live_outs;
    std::vector<Tensor> live_seeds;
    for (std::size_t i = 0; i < outs.size(); ++i)
      if (outs[i].requires_grad()) {
        live_outs.push_back(outs[i]);
        live_seeds.push_back(std::move(seeds[i]));
      }
    GradList r(in_values.size());
    if (live_outs.empty()) return r;
    Gradients grads = scratch.backward_seeded(live_outs, live_seeds);
    for (std::size_t i = 0; i < leaves.size(); ++i)
      if (need[i]) r[i] = grads[leaves[i]];
    return r;
  };

  Var header = tape.push(OpKind::SegmentHeader, in_ids, nullptr, false, std::move(header_vjp), Shape{total});
  std::vector<Var> outputs;
  for (std::size_t i = 0; i < out_values.size(); ++i) {
    const std::size_t begin = offsets[i], end = offsets[i + 1];
    VjpFn vjp = [begin, end, total](const Tensor& g, const std::vector<bool>&) -> GradList {
      Tensor full({total});
      std::copy(g.data().begin(), g.data().end(), full.data().begin() + static_cast<std::ptrdiff_t>(begin));
      (void)end;
      return {std::move(full)};
    };
    outputs.push_back(tape.push(OpKind::SegmentOutput, {header.id()}, out_values[i], false, std::move(vjp)));
  }
  return outputs;
}

/// Single-output convenience wrapper.
inline Var checkpoint1(const std::function<Var(Tape&, std::span<const Var>)>& fn, std::span<const Var> inputs,
                       CheckpointOptions options = {}) {
  SegmentFn wrapped = [fn](Tape& t, std::span<const Var> in) { return std::vector<Var>{fn(t, in)}; };
  return checkpoint(wrapped, inputs, options)[0];
}

}  // namespace noiseadapt
