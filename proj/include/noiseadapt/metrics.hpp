#pragma once

// Clip quality metrics: PSNR, windowed SSIM, Frechet distance between
// Gaussian feature fits, and boundary consistency.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "noiseadapt/error.hpp"
#include "noiseadapt/tensor.hpp"

namespace noiseadapt {

inline constexpr double kPsnrCap = 100.0;

inline double psnr(const Tensor& x, const Tensor& y, double max_val = 1.0) {
  require(x.shape() == y.shape(), ErrorKind::ShapeMismatch, "psnr " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  require(max_val > 0.0, ErrorKind::InvalidRange, "max_val must be positive");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - y[i]) * (x[i] - y[i]);
  const double mse = se / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_taps(std::size_t n, double sigma) {
  std::vector<double> w(n);
  const double c = static_cast<double>(n - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

/// Mean SSIM over every frame plane of [S, C, H, W] clips (or [H, W]
/// images), using only windows that fit entirely inside the frame.
inline double ssim(const Tensor& x, const Tensor& y, const SsimParams& prm = {}) {
  require(x.shape() == y.shape(), ErrorKind::ShapeMismatch, "ssim " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  require(x.rank() >= 2, ErrorKind::ShapeMismatch, "ssim needs at least two dimensions");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1), plane = h * w;
  const std::size_t n = prm.window;
  require(h >= n && w >= n, ErrorKind::FrameTooSmall,
          "frame " + std::to_string(h) + "x" + std::to_string(w) + " smaller than window " + std::to_string(n));
  const auto taps = gaussian_taps(n, prm.sigma);
  std::vector<double> win(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) win[a * n + b] = taps[a] * taps[b];

  const std::size_t planes = x.size() / plane;
  double total = 0.0;
  for (std::size_t f = 0; f < planes; ++f) {
    const double* px = x.data().data() + f * plane;
    const double* py = y.data().data() + f * plane;
    double frame_sum = 0.0;
    for (std::size_t i = 0; i + n <= h; ++i)
      for (std::size_t j = 0; j + n <= w; ++j) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t b = 0; b < n; ++b) {
            const double k = win[a * n + b];
            const double u = px[(i + a) * w + j + b], v = py[(i + a) * w + j + b];
            mx += k * u;
            my += k * v;
            xx += k * u * u;
            yy += k * v * v;
            xy += k * u * v;
          }
        const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
        frame_sum += ((2 * mx * my + prm.c1) * (2 * cxy + prm.c2)) /
                     ((mx * mx + my * my + prm.c1) * (vx + vy + prm.c2));
      }
    total += frame_sum / static_cast<double>((h - n + 1) * (w - n + 1));
  }
  return total / static_cast<double>(planes);
}

/// Mean |last frame of cond - first frame of pred| for [S, ...] clips.
inline double boundary_consistency(const Tensor& cond, const Tensor& pred) {
  require(cond.rank() >= 2 && pred.rank() == cond.rank(), ErrorKind::ShapeMismatch, "boundary needs clips");
  Shape fc(cond.shape().begin() + 1, cond.shape().end()), fp(pred.shape().begin() + 1, pred.shape().end());
  require(fc == fp, ErrorKind::ShapeMismatch, "frame shapes " + to_string(fc) + " vs " + to_string(fp));
  const std::size_t frame = numel(fc);
  const double* last = cond.data().data() + (cond.dim(0) - 1) * frame;
  const double* first = pred.data().data();
  double s = 0.0;
  for (std::size_t i = 0; i < frame; ++i) s += std::abs(last[i] - first[i]);
  return s / static_cast<double>(frame);
}

// ---------------------------------------------------------------------------
// Gaussian statistics and Frechet distance

struct GaussianStats {
  std::vector<double> mean;
  std::vector<double> cov;  // row-major d x d
  std::size_t count = 0;

  std::size_t dim() const { return mean.size(); }
};

inline GaussianStats gaussian_fit(const std::vector<Tensor>& features) {
  require(features.size() >= 2, ErrorKind::TooFewSamples,
          "need at least 2 feature vectors, got " + std::to_string(features.size()));
  const std::size_t d = features[0].size(), n = features.size();
  GaussianStats g;
  g.count = n;
  g.mean.assign(d, 0.0);
  for (const auto& f : features) {
    require(f.size() == d, ErrorKind::DimensionMismatch, "feature vectors differ in length");
    for (std::size_t i = 0; i < d; ++i) g.mean[i] += f[i];
  }
  for (double& m : g.mean) m /= static_cast<double>(n);
  g.cov.assign(d * d, 0.0);
  std::vector<double> c(d);
  for (const auto& f : features) {
    for (std::size_t i = 0; i < d; ++i) c[i] = f[i] - g.mean[i];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) g.cov[i * d + j] += c[i] * c[j];
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      g.cov[i * d + j] /= static_cast<double>(n - 1);
      g.cov[j * d + i] = g.cov[i * d + j];
    }
  return g;
}

struct SymmetricEigen {
  std::vector<double> values;
  std::vector<double> vectors;  // column k is the k-th eigenvector, row-major d x d
};

/// Cyclic Jacobi rotations on a symmetric matrix.
inline SymmetricEigen symmetric_eigen(std::vector<double> a, std::size_t d) {
  require(a.size() == d * d, ErrorKind::DimensionMismatch, "matrix is not d x d");
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  double scale = 0.0;
  for (double x : a) scale = std::max(scale, std::abs(x));
  for (double x : a) require(std::isfinite(x), ErrorKind::EigenFailure, "matrix has non-finite entries");
  const double tol = std::numeric_limits<double>::epsilon() * std::max(scale, std::numeric_limits<double>::min());
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) off = std::max(off, std::abs(a[p * d + q]));
    if (off <= tol * 1e-3) {
      SymmetricEigen out{std::vector<double>(d), std::move(v)};
      for (std::size_t i = 0; i < d; ++i) out.values[i] = a[i * d + i];
      return out;
    }
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (std::abs(apq) <= tol * 1e-3) continue;
        const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a[k * d + p], akq = a[k * d + q];
          a[k * d + p] = c * akp - s * akq;
          a[k * d + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a[p * d + k], aqk = a[q * d + k];
          a[p * d + k] = c * apk - s * aqk;
          a[q * d + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v[k * d + p], vkq = v[k * d + q];
          v[k * d + p] = c * vkp - s * vkq;
          v[k * d + q] = s * vkp + c * vkq;
        }
      }
  }
  fail(ErrorKind::EigenFailure, "Jacobi iteration did not converge");
}

namespace detail {

/// V diag(f(lambda)) V^T for a symmetric eigendecomposition.
template <class F>
std::vector<double> spectral_map(const SymmetricEigen& e, std::size_t d, F&& f) {
  std::vector<double> out(d * d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double fk = f(e.values[k]);
    if (fk == 0.0) continue;
    for (std::size_t i = 0; i < d; ++i) {
      const double vik = e.vectors[i * d + k] * fk;
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += vik * e.vectors[j * d + k];
    }
  }
  return out;
}

inline std::vector<double> matmul_square(const std::vector<double>& a, const std::vector<double>& b, std::size_t d) {
  std::vector<double> c(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double aik = a[i * d + k];
      for (std::size_t j = 0; j < d; ++j) c[i * d + j] += aik * b[k * d + j];
    }
  return c;
}

}  // namespace detail

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)). The trace of the
/// root is taken from the symmetric form S_a^(1/2) S_b S_a^(1/2), with
/// negative eigenvalues clamped to zero.
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  const std::size_t d = a.dim();
  require(b.dim() == d && a.cov.size() == d * d && b.cov.size() == d * d, ErrorKind::DimensionMismatch,
          "Gaussian fits differ in dimension: " + std::to_string(d) + " vs " + std::to_string(b.dim()));
  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const auto ea = symmetric_eigen(a.cov, d);
  const auto root_a = detail::spectral_map(ea, d, [](double l) { return std::sqrt(std::max(l, 0.0)); });
  auto m = detail::matmul_square(detail::matmul_square(root_a, b.cov, d), root_a, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) m[i * d + j] = m[j * d + i] = 0.5 * (m[i * d + j] + m[j * d + i]);
  const auto em = symmetric_eigen(std::move(m), d);
  double trace_root = 0.0, trace_a = 0.0, trace_b = 0.0;
  for (double l : em.values) trace_root += std::sqrt(std::max(l, 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    trace_a += a.cov[i * d + i];
    trace_b += b.cov[i * d + i];
  }
  return std::max(0.0, mean_term + trace_a + trace_b - 2.0 * trace_root);
}

}  // namespace noiseadapt
