#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "kronfisher/kfactor.hpp"
#include "kronfisher/linalg.hpp"
#include "kronfisher/nn/loss.hpp"
#include "kronfisher/rng.hpp"

namespace kronfisher {

// ---------------------------------------------------------------------------
// Diagonal-concentration analyses
// ---------------------------------------------------------------------------

struct GershgorinReport {
  std::vector<double> centers;      // a_ii
  std::vector<double> radii;        // sum_{j != i} |a_ij|
  std::vector<double> eigenvalues;  // descending
  std::size_t kaiser_count = 0;     // eigenvalues strictly above their mean
  double diag_energy_ratio = 0.0;   // sum a_ii^2 / sum a_ij^2
  std::optional<double> snr_db;     // filled in when a perturbation is analysed
};

inline GershgorinReport gershgorin_report(const Tensor& m) {
  require_matrix(m, "gershgorin_report input");
  const std::size_t n = m.rows();
  GershgorinReport r;
  r.eigenvalues = sym_eig(m).values;  // validates symmetry
  r.centers.resize(n);
  r.radii.assign(n, 0.0);
  double diag_energy = 0.0, total_energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r.centers[i] = m(i, i);
    for (std::size_t j = 0; j < n; ++j) {
      total_energy += m(i, j) * m(i, j);
      if (j != i) r.radii[i] += std::abs(m(i, j));
    }
    diag_energy += m(i, i) * m(i, i);
  }
  r.diag_energy_ratio = total_energy > 0.0 ? diag_energy / total_energy : 1.0;
  double mean = 0.0;
  for (double v : r.eigenvalues) mean += v;
  mean /= static_cast<double>(n);
  for (double v : r.eigenvalues)
    if (v > mean) ++r.kaiser_count;
  return r;
}

// True when every eigenvalue lies in some disc |z - a_ii| <= R_i (+ slack).
inline bool eigenvalues_in_discs(const GershgorinReport& r, double slack) {
  for (double ev : r.eigenvalues) {
    bool inside = false;
    for (std::size_t i = 0; i < r.centers.size() && !inside; ++i)
      inside = std::abs(ev - r.centers[i]) <= r.radii[i] + slack;
    if (!inside) return false;
  }
  return true;
}

// 10 log10( sum_i |m_ii|^2 / sum_{j>i} |m_hat_ij|^2 ); +inf when the perturbed
// upper triangle carries no energy.
inline double snr_offdiag(const Tensor& m, const Tensor& perturbed) {
  require_matrix(m, "snr_offdiag input");
  if (m.shape() != perturbed.shape() || m.rows() != m.cols())
    throw DimensionError("snr_offdiag: matrices must be square and the same shape");
  double signal = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    signal += m(i, i) * m(i, i);
    for (std::size_t j = i + 1; j < m.cols(); ++j) noise += perturbed(i, j) * perturbed(i, j);
  }
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

// m + (E + E^T)/2 with E_ij ~ N(0, sigma^2) off the diagonal, E_ii = 0.
inline Tensor perturb_offdiag(const Tensor& m, double sigma, SeededRng& rng) {
  require_matrix(m, "perturb_offdiag input");
  const std::size_t n = m.rows();
  if (m.cols() != n) throw DimensionError("perturb_offdiag: matrix must be square");
  Tensor e = gaussian_fill(rng, {n, n}, 0.0, sigma);
  Tensor out = m;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) out(i, j) += 0.5 * (e(i, j) + e(j, i));
  return out;
}

// Full (non-diagonal) factors H = mean h_bar h_bar^T and S = mean s s^T over
// the captured columns, for diagnostics only.
struct FullFactors {
  Tensor H;
  Tensor S;
};

inline FullFactors full_kf_factors(const nn::CaptureBuffer& cap) {
  if (!cap.has_forward || !cap.has_backward)
    throw StateError("full_kf_factors: capture needs a forward and a backward pass");
  const double inv = 1.0 / static_cast<double>(cap.h_bar.cols());
  FullFactors f{matmul_nt(cap.h_bar, cap.h_bar), matmul_nt(cap.s, cap.s)};
  for (double& v : f.H.data()) v *= inv;
  for (double& v : f.S.data()) v *= inv;
  return f;
}

// ---------------------------------------------------------------------------
// True Fisher by Monte-Carlo label sampling
// ---------------------------------------------------------------------------

// Diagonal of E_x E_{y ~ p(y|x)} [g g^T] for the per-sample NLL gradient g,
// flattened in the network's parameter order. Labels are drawn
// `samples_per_input` times per input by inverse-CDF sampling; since the
// per-sample gradient depends on the input and label only, each distinct drawn
// label is back-propagated once and weighted by its draw count.
inline std::vector<double> true_fisher_diag_mc(nn::Network& net, const Tensor& inputs,
                                               std::size_t samples_per_input, SeededRng& rng) {
  if (samples_per_input == 0) throw ValidationError("true_fisher_diag_mc: need n >= 1 samples");
  const std::size_t N = inputs.batch();
  if (N == 0) throw ValidationError("true_fisher_diag_mc: no inputs");
  std::vector<double> acc(net.parameter_count(), 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t idx[] = {i};
    const Tensor x = gather_rows(inputs, idx);
    const Tensor logits = net.forward(x, false);
    const auto p = nn::softmax_row(logits.data());
    const std::size_t C = p.size();
    std::vector<std::size_t> counts(C, 0);
    for (std::size_t d = 0; d < samples_per_input; ++d) {
      const double u = rng.uniform();
      double cdf = 0.0;
      std::size_t c = 0;
      for (; c + 1 < C; ++c) {
        cdf += p[c];
        if (u < cdf) break;
      }
      ++counts[c];
    }
    for (std::size_t c = 0; c < C; ++c) {
      if (!counts[c]) continue;
      Tensor dlogits({1, C});
      for (std::size_t k = 0; k < C; ++k) dlogits[k] = p[k] - (k == c ? 1.0 : 0.0);
      net.backward(dlogits);
      const auto g = net.flat_gradients();
      const double w = static_cast<double>(counts[c]);
      for (std::size_t k = 0; k < g.size(); ++k) acc[k] += w * g[k] * g[k];
    }
  }
  const double denom = static_cast<double>(N * samples_per_input);
  for (double& v : acc) v /= denom;
  return acc;
}

inline double fisher_mae(std::span<const double> truth, std::span<const double> approx) {
  if (truth.size() != approx.size())
    throw DimensionError("fisher_mae: lengths " + std::to_string(truth.size()) + " and " +
                         std::to_string(approx.size()) + " differ");
  if (truth.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - approx[i]);
  return s / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;

  double bin_lo(std::size_t b) const { return lo + (hi - lo) * b / counts.size(); }
  double bin_hi(std::size_t b) const { return lo + (hi - lo) * (b + 1) / counts.size(); }
};

// Equal-width bins over [lo, hi]; the top edge belongs to the last bin.
inline Histogram histogram(std::span<const double> values, double lo, double hi,
                           std::size_t bins) {
  if (bins < 2) throw ValidationError("histogram: need at least 2 bins");
  if (!(hi > lo)) hi = lo + std::max(std::abs(lo), 1.0) * 1e-12;
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    double pos = std::floor((v - lo) / width);
    const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
    ++h.counts[b];
  }
  return h;
}

// One histogram per parametric layer over [lambda, max entry].
inline std::vector<std::optional<Histogram>> fim_histogram(const std::vector<EfimDiag>& efims,
                                                           std::size_t bins) {
  std::vector<std::optional<Histogram>> out(efims.size());
  for (std::size_t l = 0; l < efims.size(); ++l) {
    if (efims[l].blocks.empty()) continue;
    std::vector<double> values;
    for (const auto& b : efims[l].blocks) values.insert(values.end(), b.data().begin(), b.data().end());
    const double hi = *std::max_element(values.begin(), values.end());
    out[l] = histogram(values, efims[l].lambda, hi, bins);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA and loss-landscape export
// ---------------------------------------------------------------------------

struct Pca2Result {
  Tensor projected;   // N x 2
  Tensor components;  // 2 x d
  std::array<double, 2> explained{};
  double total_variance = 0.0;
  std::vector<double> mean;
};

// Top-two principal components of the sample covariance (N - 1 denominator).
// Each component's sign is fixed so its first nonzero loading is positive.
inline Pca2Result pca2(const Tensor& data) {
  require_matrix(data, "pca2 input");
  const std::size_t N = data.rows(), d = data.cols();
  if (N < 2 || d < 2) throw ValidationError("pca2: need at least 2 samples and 2 features");
  Pca2Result r;
  r.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < d; ++j) r.mean[j] += data(i, j);
  for (double& v : r.mean) v /= static_cast<double>(N);
  Tensor centered({N, d});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < d; ++j) centered(i, j) = data(i, j) - r.mean[j];
  Tensor cov = matmul_tn(centered, centered);
  for (double& v : cov.data()) v /= static_cast<double>(N - 1);
  r.total_variance = trace(cov);
  if (!(r.total_variance > 0.0)) throw ValidationError("pca2: data has zero variance");
  const auto eig = sym_eig(cov);
  r.components = Tensor({2, d});
  for (std::size_t c = 0; c < 2; ++c) {
    r.explained[c] = std::max(0.0, eig.values[c]);
    double sign = 1.0;
    for (std::size_t j = 0; j < d; ++j)
      if (std::abs(eig.vectors(j, c)) > 1e-12) {
        sign = eig.vectors(j, c) > 0 ? 1.0 : -1.0;
        break;
      }
    for (std::size_t j = 0; j < d; ++j) r.components(c, j) = sign * eig.vectors(j, c);
  }
  r.projected = matmul_nt(centered, r.components);
  return r;
}

struct LandscapeGrid {
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  std::size_t n = 200;
};

struct LandscapeExport {
  std::vector<std::array<double, 2>> trajectory;  // one row per recorded epoch
  std::vector<double> losses;
  LandscapeGrid grid;
};

// Bounding-box grid over the tracked-weight trajectory; a zero-extent axis is
// padded by 1e-6 on each side.
inline LandscapeExport landscape_export(std::vector<std::array<double, 2>> trajectory,
                                        std::vector<double> losses, std::size_t grid_n = 200) {
  if (trajectory.size() < 2) throw ValidationError("landscape export needs at least 2 epochs");
  if (losses.size() != trajectory.size())
    throw DimensionError("landscape export: one loss per trajectory point required");
  LandscapeExport ex{std::move(trajectory), std::move(losses), {}};
  auto& g = ex.grid;
  g.n = grid_n;
  g.xmin = g.xmax = ex.trajectory[0][0];
  g.ymin = g.ymax = ex.trajectory[0][1];
  for (const auto& w : ex.trajectory) {
    g.xmin = std::min(g.xmin, w[0]);
    g.xmax = std::max(g.xmax, w[0]);
    g.ymin = std::min(g.ymin, w[1]);
    g.ymax = std::max(g.ymax, w[1]);
  }
  if (g.xmax - g.xmin < 1e-12) g.xmin -= 1e-6, g.xmax += 1e-6;
  if (g.ymax - g.ymin < 1e-12) g.ymin -= 1e-6, g.ymax += 1e-6;
  return ex;
}

}  // namespace kronfisher
