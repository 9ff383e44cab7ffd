#include "spontts/fft.hpp"

#include <cmath>

namespace spontts::fft {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative Cooley-Tukey, n a power of two.
void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        cplx u = a[i + k];
        cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

// Bluestein's algorithm for arbitrary n, via a power-of-two convolution.
void fft_bluestein(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cplx> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    // exponent k^2/2 mod n, computed with 128-bit-safe modular arithmetic
    unsigned long long k2 = (static_cast<unsigned long long>(k) * k) % (2 * n);
    double ang = sign * kPi * static_cast<double>(k2) / static_cast<double>(n);
    w[k] = cplx(std::cos(ang), std::sin(ang));
  }
  const std::size_t m = next_pow2(2 * n - 1);
  std::vector<cplx> x(m, cplx(0, 0)), y(m, cplx(0, 0));
  for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * w[k];
  for (std::size_t k = 0; k < n; ++k) {
    y[k] = std::conj(w[k]);
    if (k != 0) y[m - k] = std::conj(w[k]);
  }
  fft_pow2(x, false);
  fft_pow2(y, false);
  for (std::size_t k = 0; k < m; ++k) x[k] *= y[k];
  fft_pow2(x, true);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * w[k];
  if (inverse) {
    for (auto& v : a) v /= static_cast<double>(n);
  }
}

void transform(std::vector<cplx>& a, bool inverse) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size()))
    fft_pow2(a, inverse);
  else
    fft_bluestein(a, inverse);
}

}  // namespace

void fft(std::vector<cplx>& a) { transform(a, false); }
void ifft(std::vector<cplx>& a) { transform(a, true); }

std::vector<cplx> rfft(const std::vector<double>& frame) {
  std::vector<cplx> a(frame.begin(), frame.end());
  fft(a);
  a.resize(frame.size() / 2 + 1);
  return a;
}

}  // namespace spontts::fft
