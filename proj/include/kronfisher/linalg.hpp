#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <vector>

#include "kronfisher/tensor.hpp"

namespace kronfisher {

struct EigenDecomposition {
  std::vector<double> values;  // descending
  Tensor vectors;              // column j pairs with values[j]
  int sweeps = 0;
};

// Symmetric eigendecomposition by cyclic Jacobi rotations.
//
// Each sweep visits every off-diagonal pair (p, q) in row order and applies the
// rotation that zeroes a(p, q) (Rutishauser's stable formulation). Iteration
// stops once the off-diagonal Frobenius norm drops below tol * ||A||_F, or
// throws ConvergenceError after `max_sweeps`.
inline EigenDecomposition sym_eig(const Tensor& input, double tol = 1e-12,
                                  int max_sweeps = 100) {
  require_matrix(input, "sym_eig input");
  if (input.rows() != input.cols()) throw DimensionError("sym_eig: matrix not square");
  const double scale = std::max(frobenius_norm(input), 1.0);
  if (!is_symmetric(input, 1e-9 * scale))
    throw ValidationError("sym_eig: matrix is not symmetric");
  const std::size_t n = input.rows();

  Tensor a = input;
  // Symmetrize exactly so rotations see a single consistent value per pair.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
  Tensor v = Tensor::identity(n);
  const double threshold = tol * frobenius_norm(a);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  int sweep = 0;
  while (off_norm() > threshold) {
    if (sweep++ >= max_sweeps)
      throw ConvergenceError("sym_eig: no convergence after " +
                             std::to_string(max_sweeps) + " sweeps");
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p), arq = a(r, q);
          a(r, p) = a(p, r) = arp - s * (arq + tau * arp);
          a(r, q) = a(q, r) = arq + s * (arp - tau * arq);
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v(r, p), vrq = v(r, q);
          v(r, p) = vrp - s * (vrq + tau * vrp);
          v(r, q) = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  EigenDecomposition out;
  out.sweeps = sweep;
  out.values.resize(n);
  out.vectors = Tensor({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, j) = v(r, order[j]);
  }
  return out;
}

// |DFT| of a real matrix, evaluated as the direct double sum with complex f64
// accumulation. Twiddles are tabulated per axis so the phase stays exact mod m, n.
inline Tensor dft2_magnitude(const Tensor& a) {
  require_matrix(a, "dft2_magnitude input");
  const std::size_t m = a.rows(), n = a.cols();
  auto twiddles = [](std::size_t len) {
    std::vector<std::complex<double>> w(len);
    for (std::size_t k = 0; k < len; ++k)
      w[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) /
                                 static_cast<double>(len));
    return w;
  };
  const auto wm = twiddles(m);
  const auto wn = twiddles(n);

  // Row transforms first, then columns; algebraically the same double sum.
  std::vector<std::complex<double>> rows(m * n);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t l = 0; l < n; ++l) {
      std::complex<double> acc{};
      for (std::size_t q = 0; q < n; ++q) acc += a(p, q) * wn[(q * l) % n];
      rows[p * n + l] = acc;
    }
  Tensor out({m, n});
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t l = 0; l < n; ++l) {
      std::complex<double> acc{};
      for (std::size_t p = 0; p < m; ++p) acc += rows[p * n + l] * wm[(p * k) % m];
      out(k, l) = std::abs(acc);
    }
  return out;
}

// Solves A x = b for square A by Gaussian elimination with partial pivoting.
inline std::vector<double> solve(Tensor a, std::vector<double> b) {
  require_matrix(a, "solve matrix");
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw DimensionError("solve: shape mismatch");
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(pivot, k))) pivot = i;
    if (a(pivot, k) == 0.0) throw ValidationError("solve: singular matrix");
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(pivot, j));
      std::swap(b[k], b[pivot]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a(k, j) * x[j];
    x[k] = s / a(k, k);
  }
  return x;
}

}  // namespace kronfisher
