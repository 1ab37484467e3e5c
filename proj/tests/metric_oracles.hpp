#pragma once

// Second implementations of the metrics, written independently of the
// library code paths (separable filtering, Denman-Beavers matrix root).

#include <cmath>
#include <vector>

#include "noiseadapt/tensor.hpp"

namespace noiseadapt::oracle {

inline double psnr(const Tensor& x, const Tensor& y, double max_val = 1.0) {
  long double se = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double d = static_cast<long double>(x[i]) - static_cast<long double>(y[i]);
    se += d * d;
  }
  const long double mse = se / static_cast<long double>(x.size());
  if (mse == 0.0L) return 100.0;
  const double v = static_cast<double>(20.0L * std::log10(static_cast<long double>(max_val)) - 10.0L * std::log10(mse));
  return v > 100.0 ? 100.0 : v;
}

/// SSIM with the 11x11 Gaussian window applied as two 1-D passes.
inline double ssim(const Tensor& x, const Tensor& y) {
  const std::size_t n = 11;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  std::vector<double> k(n);
  double ks = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    k[i] = std::exp(-(d * d) / (2 * sigma * sigma));
    ks += k[i];
  }
  for (double& v : k) v /= ks;

  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1), oh = h - n + 1, ow = w - n + 1;
  const std::size_t planes = x.size() / (h * w);
  auto filter = [&](const std::vector<double>& img) {
    std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t b = 0; b < n; ++b) rows[i * ow + j] += k[b] * img[i * w + j + b];
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t a = 0; a < n; ++a) out[i * ow + j] += k[a] * rows[(i + a) * ow + j];
    return out;
  };
  double total = 0.0;
  for (std::size_t f = 0; f < planes; ++f) {
    std::vector<double> a(h * w), b(h * w), aa(h * w), bb(h * w), ab(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      a[i] = x[f * h * w + i];
      b[i] = y[f * h * w + i];
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter(a), mu_b = filter(b), e_aa = filter(aa), e_bb = filter(bb), e_ab = filter(ab);
    double s = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i], vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      s += (2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    total += s / static_cast<double>(oh * ow);
  }
  return total / static_cast<double>(planes);
}

inline double boundary(const Tensor& cond, const Tensor& pred) {
  const std::size_t frame = cond.size() / cond.dim(0), last = cond.dim(0) - 1;
  double s = 0.0;
  for (std::size_t i = 0; i < frame; ++i) s += std::fabs(cond[last * frame + i] - pred[i]);
  return s / static_cast<double>(frame);
}

using Matrix = std::vector<std::vector<double>>;

inline Matrix identity(std::size_t d) {
  Matrix m(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) m[i][i] = 1.0;
  return m;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  const std::size_t d = a.size();
  Matrix c(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

/// Gauss-Jordan inverse with partial pivoting.
inline Matrix inverse(Matrix a) {
  const std::size_t d = a.size();
  Matrix inv = identity(d);
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(inv[col], inv[piv]);
    const double p = a[col][col];
    for (std::size_t j = 0; j < d; ++j) {
      a[col][j] /= p;
      inv[col][j] /= p;
    }
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t j = 0; j < d; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

/// Principal square root of a matrix with positive real spectrum.
inline Matrix sqrtm_denman_beavers(const Matrix& a) {
  Matrix y = a, z = identity(a.size());
  for (int it = 0; it < 100; ++it) {
    const Matrix yi = inverse(y), zi = inverse(z);
    double change = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double ny = 0.5 * (y[i][j] + zi[i][j]);
        change = std::max(change, std::fabs(ny - y[i][j]));
        y[i][j] = ny;
        z[i][j] = 0.5 * (z[i][j] + yi[i][j]);
      }
    if (change < 1e-15) break;
  }
  return y;
}

struct Fit {
  std::vector<double> mean;
  Matrix cov;
};

/// Two-pass sample mean and unbiased covariance.
inline Fit fit(const std::vector<Tensor>& xs) {
  const std::size_t d = xs[0].size(), n = xs.size();
  Fit f{std::vector<double>(d, 0.0), Matrix(d, std::vector<double>(d, 0.0))};
  for (const auto& x : xs)
    for (std::size_t i = 0; i < d; ++i) f.mean[i] += x[i] / static_cast<double>(n);
  for (const auto& x : xs)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) f.cov[i][j] += (x[i] - f.mean[i]) * (x[j] - f.mean[j]);
  for (auto& row : f.cov)
    for (double& v : row) v /= static_cast<double>(n - 1);
  return f;
}

inline double frechet(const Fit& a, const Fit& b) {
  const std::size_t d = a.mean.size();
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const Matrix root = sqrtm_denman_beavers(multiply(a.cov, b.cov));
  for (std::size_t i = 0; i < d; ++i) s += a.cov[i][i] + b.cov[i][i] - 2.0 * root[i][i];
  return s;
}

}  // namespace noiseadapt::oracle
