#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "opnet/irreps.hpp"

namespace opnet {

namespace {

using BigInt = boost::multiprecision::cpp_int;
using BigRat = boost::multiprecision::cpp_rational;

BigInt factorial(int n) {
  BigInt f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// Complex-basis 3j symbol (Condon-Shortley, Racah factorial formula).
// The rational prefactor and the alternating sum are carried exactly; the
// only rounding is the final square root.
double complex_3j(int l1, int l2, int l3, int m1, int m2, int m3) {
  if (m1 + m2 + m3 != 0) return 0.0;
  if (std::abs(m1) > l1 || std::abs(m2) > l2 || std::abs(m3) > l3) return 0.0;

  BigRat delta = BigRat(factorial(l1 + l2 - l3) * factorial(l1 - l2 + l3) *
                            factorial(-l1 + l2 + l3),
                        factorial(l1 + l2 + l3 + 1));
  BigInt mfac = factorial(l1 + m1) * factorial(l1 - m1) * factorial(l2 + m2) *
                factorial(l2 - m2) * factorial(l3 + m3) * factorial(l3 - m3);
  BigRat radicand = delta * BigRat(mfac);

  int tmin = std::max({0, l2 - l3 - m1, l1 + m2 - l3});
  int tmax = std::min({l1 + l2 - l3, l1 - m1, l2 + m2});
  BigRat sum = 0;
  for (int t = tmin; t <= tmax; ++t) {
    BigInt denom = factorial(t) * factorial(l1 + l2 - l3 - t) * factorial(l1 - m1 - t) *
                   factorial(l2 + m2 - t) * factorial(l3 - l2 + m1 + t) *
                   factorial(l3 - l1 - m2 + t);
    BigRat term = BigRat(1, denom);
    if (t % 2) term = -term;
    sum += term;
  }

  int phase = l1 - l2 - m3;
  double sign = (((phase % 2) + 2) % 2) ? -1.0 : 1.0;
  return sign * static_cast<double>(sum) * std::sqrt(static_cast<double>(radicand));
}

// Row of the real-from-complex change of basis for one m; entries are
// nonzero only at mu = +-m. Chosen so that the real harmonics carry no
// Condon-Shortley sign: L=1 components come out as (y, z, x).
struct BasisRow {
  std::complex<double> plus, minus;  // coefficients of C^{+|m|}, C^{-|m|}
};

BasisRow basis_row(int m) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  if (m == 0) return {{1.0, 0.0}, {0.0, 0.0}};
  if (m > 0) {
    double s = (m % 2) ? -1.0 : 1.0;
    return {{s * inv_sqrt2, 0.0}, {inv_sqrt2, 0.0}};
  }
  int mm = -m;
  double s = (mm % 2) ? 1.0 : -1.0;
  return {{0.0, s * inv_sqrt2}, {0.0, inv_sqrt2}};
}

}  // namespace

Wigner3j wigner_3j(int l1, int l2, int l3) {
  if (l1 < 0 || l2 < 0 || l3 < 0) throw std::invalid_argument("negative degree");
  if (l1 > 12 || l2 > 12 || l3 > 12)
    throw std::invalid_argument("degrees beyond 12 are unsupported");
  if (l3 < std::abs(l1 - l2) || l3 > l1 + l2)
    throw std::invalid_argument("incompatible degrees");

  const int d1 = 2 * l1 + 1, d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;

  // Complex-basis coupling tensor.
  std::vector<double> kc(static_cast<std::size_t>(d1) * d2 * d3, 0.0);
  for (int u1 = -l1; u1 <= l1; ++u1)
    for (int u2 = -l2; u2 <= l2; ++u2) {
      int u3 = -u1 - u2;
      if (std::abs(u3) > l3) continue;
      kc[(static_cast<std::size_t>(u1 + l1) * d2 + (u2 + l2)) * d3 + (u3 + l3)] =
          complex_3j(l1, l2, l3, u1, u2, u3);
    }

  // Conjugate into the real basis. Each real index couples to mu = +-m,
  // so every entry is a sum of at most eight complex terms.
  std::vector<std::complex<double>> cr(static_cast<std::size_t>(d1) * d2 * d3);
  auto row_terms = [](int m, int l, int out[2], std::complex<double> w[2]) {
    BasisRow br = basis_row(m);
    int n = 0;
    int am = std::abs(m);
    if (std::abs(br.plus) > 0.0) {
      out[n] = am + l;
      w[n++] = br.plus;
    }
    if (std::abs(br.minus) > 0.0) {
      out[n] = -am + l;
      w[n++] = br.minus;
    }
    if (n == 0) {
      out[0] = l;
      w[0] = 0.0;
      n = 1;
    }
    return n;
  };
  for (int m1 = -l1; m1 <= l1; ++m1) {
    int i1[2];
    std::complex<double> w1[2];
    int n1 = row_terms(m1, l1, i1, w1);
    for (int m2 = -l2; m2 <= l2; ++m2) {
      int i2[2];
      std::complex<double> w2[2];
      int n2 = row_terms(m2, l2, i2, w2);
      for (int m3 = -l3; m3 <= l3; ++m3) {
        int i3[2];
        std::complex<double> w3[2];
        int n3 = row_terms(m3, l3, i3, w3);
        std::complex<double> acc = 0.0;
        for (int a = 0; a < n1; ++a)
          for (int b = 0; b < n2; ++b)
            for (int c = 0; c < n3; ++c) {
              const std::complex<double> w = w1[a] * w2[b] * w3[c];
              const double k =
                  kc[(static_cast<std::size_t>(i1[a]) * d2 + i2[b]) * d3 + i3[c]];
              if (k != 0.0) acc += w * k;
            }
        cr[(static_cast<std::size_t>(m1 + l1) * d2 + (m2 + l2)) * d3 + (m3 + l3)] = acc;
      }
    }
  }

  // The transformed tensor is either purely real or purely imaginary
  // depending on the parity of l1+l2+l3; rotate the phase to real.
  double max_re = 0.0, max_im = 0.0;
  for (const auto& z : cr) {
    max_re = std::max(max_re, std::abs(z.real()));
    max_im = std::max(max_im, std::abs(z.imag()));
  }
  const bool imaginary = max_im > max_re;
  Wigner3j out;
  out.l1 = l1;
  out.l2 = l2;
  out.l3 = l3;
  out.c.resize(cr.size());
  double cross = 0.0;
  for (std::size_t i = 0; i < cr.size(); ++i) {
    out.c[i] = imaginary ? cr[i].imag() : cr[i].real();
    cross = std::max(cross, std::abs(imaginary ? cr[i].real() : cr[i].imag()));
  }
  if (cross > 1e-10)
    throw std::logic_error("real-basis 3j transform produced a mixed-phase tensor");

  double fro = 0.0;
  for (double v : out.c) fro += v * v;
  fro = std::sqrt(fro);
  if (fro < 1e-14) throw std::logic_error("vanishing 3j tensor for a valid triple");
  for (double& v : out.c) v /= fro;

  // Deterministic global sign: first entry above threshold is positive.
  for (double v : out.c) {
    if (std::abs(v) > 1e-12) {
      if (v < 0)
        for (double& w : out.c) w = -w;
      break;
    }
  }
  return out;
}

}  // namespace opnet
