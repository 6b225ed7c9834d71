#pragma once

// Reference computations written independently of the library, used as test
// oracles. Nothing here calls into faultfree beyond its matrix typedefs.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "faultfree/types.hpp"

namespace oracle {

using faultfree::CMatrix;
using faultfree::Complex;
using faultfree::Matrix;

inline double cosine(const Matrix& a, const Matrix& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      ab += a(i, j) * b(i, j);
      aa += a(i, j) * a(i, j);
      bb += b(i, j) * b(i, j);
    }
  return ab / std::sqrt(aa * bb);
}

inline double cosine_loss(const Matrix& a, const Matrix& b, const Matrix& t) {
  return 1.0 - cosine(a * b, t);
}

// Central differences of the cosine loss with respect to every entry of a and b.
inline std::pair<Matrix, Matrix> cosine_loss_fd(const Matrix& a, const Matrix& b, const Matrix& t,
                                                double h) {
  Matrix ga(a.rows(), a.cols()), gb(b.rows(), b.cols());
  Matrix p = a;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = p(i);
    p(i) = x + h;
    const double up = cosine_loss(p, b, t);
    p(i) = x - h;
    const double dn = cosine_loss(p, b, t);
    p(i) = x;
    ga(i) = (up - dn) / (2 * h);
  }
  Matrix q = b;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const double x = q(i);
    q(i) = x + h;
    const double up = cosine_loss(a, q, t);
    q(i) = x - h;
    const double dn = cosine_loss(a, q, t);
    q(i) = x;
    gb(i) = (up - dn) / (2 * h);
  }
  return {ga, gb};
}

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double q_func(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

// Standard deviation of N(0, sigma^2) conditioned on |x| <= a.
inline double truncated_normal_std(double sigma, double a) {
  const double z = a / sigma;
  const double mass = 1.0 - 2.0 * q_func(z);
  return sigma * std::sqrt(1.0 - 2.0 * z * phi(z) / mass);
}

// Exact bit error rate of Gray-coded 16-QAM over AWGN.
inline double qam16_ber(double ebn0) {
  const double d = std::sqrt(0.8 * ebn0);
  return 0.25 * (3.0 * q_func(d) + 2.0 * q_func(3.0 * d) - q_func(5.0 * d));
}

// Textbook DFT matrix entry exp(-2 pi i a b / n), reduced mod n for accuracy.
inline CMatrix dft(std::size_t n) {
  CMatrix w(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((a * b) % n) / static_cast<double>(n);
      w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = std::polar(1.0, ang);
    }
  return w;
}

// out(u, v) = sum_{r, c} x(r, c) exp(-2 pi i (u r / rows + v c / cols)), via FFTW.
inline CMatrix fft2(const Matrix& x) {
  const int rows = static_cast<int>(x.rows()), cols = static_cast<int>(x.cols());
  std::vector<fftw_complex> in(static_cast<std::size_t>(rows * cols)), out(in.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      in[static_cast<std::size_t>(r * cols + c)][0] = x(r, c);
      in[static_cast<std::size_t>(r * cols + c)][1] = 0.0;
    }
  fftw_plan plan = fftw_plan_dft_2d(rows, cols, in.data(), out.data(), FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  CMatrix y(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const auto& o = out[static_cast<std::size_t>(r * cols + c)];
      y(r, c) = Complex(o[0], o[1]);
    }
  return y;
}

// 1-D forward FFT of a complex vector.
inline std::vector<Complex> fft(const std::vector<Complex>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<fftw_complex> in(x.size()), out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    in[i][0] = x[i].real();
    in[i][1] = x[i].imag();
  }
  fftw_plan plan = fftw_plan_dft_1d(n, in.data(), out.data(), FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  std::vector<Complex> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = Complex(out[i][0], out[i][1]);
  return y;
}

// (H^H H + I / snr)^-1 H^H y by Gaussian elimination with partial pivoting.
inline faultfree::CVector mmse(const CMatrix& h, const faultfree::CVector& y, double snr) {
  CMatrix a = h.adjoint() * h;
  for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, i) += 1.0 / snr;
  faultfree::CVector rhs = h.adjoint() * y;
  const Eigen::Index n = a.rows();
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index p = c;
    for (Eigen::Index r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
    a.row(c).swap(a.row(p));
    std::swap(rhs(c), rhs(p));
    for (Eigen::Index r = c + 1; r < n; ++r) {
      const Complex f = a(r, c) / a(c, c);
      a.row(r) -= f * a.row(c);
      rhs(r) -= f * rhs(c);
    }
  }
  faultfree::CVector x(n);
  for (Eigen::Index r = n - 1; r >= 0; --r) {
    Complex s = rhs(r);
    for (Eigen::Index c = r + 1; c < n; ++c) s -= a(r, c) * x(c);
    x(r) = s / a(r, r);
  }
  return x;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle
