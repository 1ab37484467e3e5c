#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "noiseadapt/autodiff.hpp"
#include "test_support.hpp"

using namespace noiseadapt;
using noiseadapt::testing::gradient_check;

namespace {

Tensor sliding_window_sum_oracle(const Tensor& x, const Tensor& w) {
  // Single image, single channel, no padding, stride 1.
  const std::size_t h = x.dim(2), wd = x.dim(3), k = w.dim(2);
  Tensor out({1, 1, h - k + 1, wd - k + 1});
  for (std::size_t i = 0; i + k <= h; ++i)
    for (std::size_t j = 0; j + k <= wd; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) s += x[(i + a) * wd + j + b] * w[a * k + b];
      out[i * (wd - k + 1) + j] = s;
    }
  return out;
}

}  // namespace

TEST(Elementary, AddElementwise) {
  Tape t;
  Var a = t.leaf(Tensor::vector({1, 2}));
  Var b = t.leaf(Tensor::vector({3, 4}));
  EXPECT_EQ((a + b).value(), Tensor::vector({4, 6}));
}

TEST(Elementary, MatmulIdentity) {
  Tape t;
  Var eye = t.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  Tensor a({2, 2}, {1.5, -2, 3, 7});
  EXPECT_EQ(matmul(eye, t.leaf(a)).value(), a);
}

TEST(Elementary, ConvAllOnes) {
  Tape t;
  Var x = t.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
  Var w = t.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
  Var b = t.leaf(Tensor::zeros({1}));
  Var y = conv2d(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.value()[0], 9.0);
}

TEST(Elementary, ConvMatchesSlidingWindowOracle) {
  Rng rng(3);
  Tensor x = Tensor::randn({1, 1, 7, 6}, rng);
  Tensor w = Tensor::randn({1, 1, 3, 3}, rng);
  Tape t;
  Var y = conv2d(t.leaf(x), t.leaf(w), t.leaf(Tensor::zeros({1})));
  EXPECT_LT(max_abs_diff(y.value(), sliding_window_sum_oracle(x, w)), 1e-13);
}

TEST(Elementary, BroadcastAdd) {
  Tape t;
  Var a = t.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = t.leaf(Tensor({1, 3}, {1, 2, 4}));
  EXPECT_EQ((a + b).value(), Tensor({2, 3}, {2, 4, 7, 5, 7, 10}));
}

TEST(Elementary, ShapeMismatchThrows) {
  Tape t;
  Var a = t.leaf(Tensor::zeros({2, 3}));
  Var b = t.leaf(Tensor::zeros({4}));
  try {
    (void)add(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_THROW((void)matmul(a, a), Error);
}

TEST(Elementary, NonFiniteOutputThrows) {
  Tape t;
  Var a = t.leaf(Tensor::vector({-1.0}));
  try {
    (void)noiseadapt::sqrt(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteValue);
  }
}

TEST(Elementary, ConcatAndSlice) {
  Tape t;
  Var a = t.leaf(Tensor({2, 1}, {1, 2}));
  Var b = t.leaf(Tensor({2, 2}, {3, 4, 5, 6}));
  Var c = concat({a, b}, 1);
  EXPECT_EQ(c.value(), Tensor({2, 3}, {1, 3, 4, 2, 5, 6}));
  EXPECT_EQ(slice(c, 1, 1, 3).value(), b.value());
}

TEST(Backward, SquareGradient) {
  Tape t;
  Var x = t.leaf(Tensor::vector({3}), true);
  auto g = t.backward(sum(square(x)));
  EXPECT_EQ(g[x], Tensor::vector({6}));
}

TEST(Backward, AbsSubgradient) {
  Tape t;
  Var x = t.leaf(Tensor::vector({-2, 5, 0}), true);
  auto g = t.backward(sum(noiseadapt::abs(x)));
  EXPECT_EQ(g[x], Tensor::vector({-1, 1, 0}));
}

TEST(Backward, NotScalarLoss) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}), true);
  Var y = square(x);
  try {
    (void)t.backward(y);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotScalarLoss);
  }
}

TEST(Backward, DoubleBackward) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}), true);
  Var loss = sum(square(x));
  (void)t.backward(loss);
  try {
    (void)t.backward(loss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DoubleBackward);
  }
}

TEST(Backward, GradientsForInteriorNodes) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}), true);
  Var y = 3.0 * x;
  auto g = t.backward(sum(square(y)));
  EXPECT_EQ(g[y], Tensor::vector({6, 12}));
  EXPECT_EQ(g[x], Tensor::vector({18, 36}));
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}), true);
  Var c = t.leaf(Tensor::vector({5, 5}), false);
  auto g = t.backward(sum(x * c));
  EXPECT_FALSE(g.has(c.id()));
  EXPECT_EQ(g[x], Tensor::vector({5, 5}));
}

// Every elementary op against central differences (h = 1e-5, rel. err <= 1e-5).
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  Rng rng(100 + GetParam());
  const Tensor other = Tensor::randn({2, 3}, rng);
  const Tensor wconv = Tensor::randn({3, 2, 3, 3}, rng, 0.5);
  const Tensor bconv = Tensor::randn({3}, rng);
  const Tensor mat = Tensor::randn({3, 4}, rng);
  const Tensor row = Tensor::randn({1, 3}, rng);

  using Build = std::function<Var(Tape&, const Var&)>;
  std::vector<std::pair<const char*, Build>> cases = {
      {"add", [&](Tape& t, const Var& x) { return sum(square(x + t.leaf(other))); }},
      {"add_broadcast", [&](Tape& t, const Var& x) { return sum(square(x + t.leaf(row))); }},
      {"sub", [&](Tape& t, const Var& x) { return sum(square(t.leaf(other) - x)); }},
      {"mul", [&](Tape& t, const Var& x) { return sum(x * x * t.leaf(other)); }},
      {"mul_broadcast", [&](Tape& t, const Var& x) { return sum(square(t.leaf(row) * x)); }},
      {"matmul", [&](Tape& t, const Var& x) { return sum(square(matmul(x, t.leaf(mat)))); }},
      {"silu", [&](Tape&, const Var& x) { return sum(silu(x) * x); }},
      {"sigmoid", [&](Tape&, const Var& x) { return sum(square(sigmoid(x))); }},
      {"tanh", [&](Tape&, const Var& x) { return sum(square(noiseadapt::tanh(x))); }},
      {"abs", [&](Tape&, const Var& x) { return sum(noiseadapt::abs(x) * x); }},
      {"sqrt", [&](Tape&, const Var& x) { return sum(noiseadapt::sqrt(square(x) + 1.0)); }},
      {"scalar_ops", [&](Tape&, const Var& x) { return sum(square(2.5 * x + 0.3)); }},
      {"mean", [&](Tape&, const Var& x) { return square(mean(x * x)); }},
      {"reshape", [&](Tape& t, const Var& x) { return sum(reshape(x, {3, 2}) * reshape(t.leaf(other), {3, 2}) * reshape(x, {3, 2})); }},
      {"concat_slice",
       [&](Tape& t, const Var& x) {
         Var c = concat({x, t.leaf(other), x}, 0);
         return sum(square(slice(c, 0, 1, 5)) * 0.5);
       }},
  };
  const Tensor x = Tensor::randn({2, 3}, rng);
  for (auto& [name, build] : cases) {
    EXPECT_LE(gradient_check(build, x), 1e-5) << name;
  }

  // Conv / pooling / upsampling on images.
  const Tensor img = Tensor::randn({2, 2, 6, 6}, rng);
  std::vector<std::pair<const char*, Build>> image_cases = {
      {"conv_pad", [&](Tape& t, const Var& x) { return sum(square(conv2d(x, t.leaf(wconv), t.leaf(bconv), 1, 1))); }},
      {"conv_stride", [&](Tape& t, const Var& x) { return sum(square(conv2d(x, t.leaf(wconv), t.leaf(bconv), 2, 1))); }},
      {"avg_pool", [&](Tape&, const Var& x) { return sum(square(avg_pool(x, 3))); }},
      {"upsample", [&](Tape&, const Var& x) { return sum(square(upsample(x, 2)) * 0.25); }},
  };
  for (auto& [name, build] : image_cases) {
    EXPECT_LE(gradient_check(build, img), 1e-5) << name;
  }

  // Kernel weight and bias gradients.
  EXPECT_LE(gradient_check([&](Tape& t, const Var& w) { return sum(square(conv2d(t.leaf(img), w, t.leaf(bconv), 2, 1))); },
                           wconv),
            1e-5);
  EXPECT_LE(gradient_check([&](Tape& t, const Var& b) { return sum(square(conv2d(t.leaf(img), t.leaf(wconv), b, 1, 1))); },
                           bconv),
            1e-5);
  EXPECT_LE(gradient_check([&](Tape& t, const Var& m) { return sum(square(matmul(t.leaf(x), m))); }, mat), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(RandomInputs, OpGradient, ::testing::Range(0, 5));

TEST(Backward, ComposedNetworkMatchesFiniteDifferences) {
  Rng rng(9);
  const Tensor w1 = Tensor::randn({4, 1, 3, 3}, rng, 0.5), b1 = Tensor::randn({4}, rng, 0.1);
  const Tensor w2 = Tensor::randn({2, 4, 3, 3}, rng, 0.5), b2 = Tensor::randn({2}, rng, 0.1);
  auto net = [&](Tape& t, const Var& x) {
    Var h = silu(conv2d(x, t.leaf(w1), t.leaf(b1), 2, 1));
    h = upsample(h, 2);
    Var y = sigmoid(conv2d(h, t.leaf(w2), t.leaf(b2), 1, 1));
    return mean(noiseadapt::abs(y - 0.3 * x));
  };
  const Tensor x = Tensor::randn({1, 1, 8, 8}, rng);
  EXPECT_LE(gradient_check([&](Tape& t, const Var& v) { return net(t, v); }, x), 1e-5);
}

// --- checkpointing --------------------------------------------------------

namespace {

struct AffineChain {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  explicit AffineChain(std::size_t steps, std::size_t dim, Rng& rng) {
    for (std::size_t i = 0; i < steps; ++i) {
      weights.push_back(Tensor::randn({dim, dim}, rng, 0.4));
      biases.push_back(Tensor::randn({1, dim}, rng, 0.1));
    }
  }

  Var step(Tape& t, const Var& x, std::size_t i) const {
    return noiseadapt::tanh(matmul(x, t.leaf(weights[i])) + t.leaf(biases[i]));
  }

  Var run(Tape& t, Var x, bool checkpointed) const {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (checkpointed) {
        std::vector<Var> in{x};
        x = checkpoint1([this, i](Tape& tt, std::span<const Var> v) { return step(tt, v[0], i); }, in,
                        CheckpointOptions{true});
      } else {
        x = step(t, x, i);
      }
    }
    return x;
  }
};

Tensor chain_gradient(const AffineChain& chain, const Tensor& x0, bool checkpointed) {
  Tape t;
  Var x = t.leaf(x0, true);
  Var y = chain.run(t, x, checkpointed);
  return t.backward(sum(square(y)))[x];
}

}  // namespace

TEST(Checkpoint, IdentityPassthrough) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1.5, -2}), true);
  std::vector<Var> in{x};
  Var y = checkpoint1([](Tape&, std::span<const Var> v) { return v[0]; }, in);
  EXPECT_EQ(y.value(), x.value());
  auto g = t.backward(sum(y));
  EXPECT_EQ(g[x], Tensor::vector({1, 1}));
}

TEST(Checkpoint, FiveStepChainMatchesFullTapeExactly) {
  Rng rng(17);
  AffineChain chain(5, 6, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x0 = Tensor::randn({1, 6}, rng);
    const Tensor full = chain_gradient(chain, x0, false);
    const Tensor ckpt = chain_gradient(chain, x0, true);
    EXPECT_LE(max_abs_diff(full, ckpt), 1e-12);
  }
}

TEST(Checkpoint, MultiOutputSegment) {
  Tape t;
  Var x = t.leaf(Tensor::vector({2, 3}), true);
  std::vector<Var> in{x};
  auto outs = checkpoint(
      [](Tape&, std::span<const Var> v) { return std::vector<Var>{square(v[0]), 3.0 * v[0]}; }, in);
  ASSERT_EQ(outs.size(), 2u);
  auto g = t.backward(sum(outs[0]) + sum(outs[1]));
  EXPECT_EQ(g[x], Tensor::vector({7, 9}));
}

TEST(Checkpoint, PeakMemoryBoundedByOneStepPlusHeaders) {
  Rng rng(23);
  const std::size_t steps = 12, dim = 16;
  AffineChain chain(steps, dim, rng);
  const Tensor x0 = Tensor::randn({1, dim}, rng);
  auto& meter = TapeMemory::local();

  // One step on a full tape, forward and backward.
  meter.reset_peak();
  std::size_t base = meter.live();
  {
    AffineChain one(1, dim, rng);
    one.weights[0] = chain.weights[0];
    one.biases[0] = chain.biases[0];
    (void)chain_gradient(one, x0, false);
  }
  const std::size_t one_step = meter.peak() - base;

  meter.reset_peak();
  base = meter.live();
  (void)chain_gradient(chain, x0, true);
  const std::size_t checkpointed = meter.peak() - base;

  meter.reset_peak();
  base = meter.live();
  (void)chain_gradient(chain, x0, false);
  const std::size_t full = meter.peak() - base;

  // A segment header keeps its output (dim values) alive on the outer tape.
  EXPECT_LE(checkpointed, one_step + steps * dim);
  EXPECT_LT(checkpointed, full);
}

TEST(Checkpoint, DetectsNonDeterministicSegment) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1.0}), true);
  int calls = 0;
  std::vector<Var> in{x};
  Var y = checkpoint1(
      [&calls](Tape& tt, std::span<const Var> v) {
        ++calls;
        return v[0] + tt.leaf(Tensor::vector({static_cast<double>(calls)}));
      },
      in, CheckpointOptions{true});
  try {
    (void)t.backward(sum(y));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonDeterministicSegment);
  }
}
