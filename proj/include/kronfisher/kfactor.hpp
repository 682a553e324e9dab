#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kronfisher/nn/network.hpp"

namespace kronfisher {

// Diagonals of one layer's activation factor H and sensitivity factor S.
struct KFactorDiag {
  std::vector<double> H;
  std::vector<double> S;
};

namespace detail {

inline std::vector<double> mean_square_rows(const Tensor& m, double denom) {
  std::vector<double> out(m.rows(), 0.0);
  const std::size_t cols = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = &m.data()[r * cols];
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * row[c];
    out[r] = acc / denom;
  }
  return out;
}

}  // namespace detail

// Raw (this-batch) diagonal Kronecker factors of a layer.
//
//   dense      H = mean_b diag(h_bar h_bar^T),      S = mean_b diag(s s^T)
//   conv2d     same over expanded patches, divided by |T|
//   batchnorm  H|scale = mean over (batch, T) of x_hat^2, S likewise of s^2
//   layernorm  as batchnorm with T = 1; the shift factor is fixed at 1
//   activation identity factors of sizes (in+1, in)
inline KFactorDiag layer_kf_diag(const nn::LayerKind& kind, const nn::CaptureBuffer& cap) {
  if (!cap.has_forward || cap.h_bar.empty())
    throw StateError("layer_kf_diag: capture is empty (no forward pass)");
  if (std::holds_alternative<nn::ActivationSpec>(kind)) {
    const std::size_t rows = cap.h_bar.rows();
    return {std::vector<double>(rows, 1.0), std::vector<double>(rows - 1, 1.0)};
  }
  if (!cap.has_backward || cap.s.empty())
    throw StateError("layer_kf_diag: capture has no backward pass");
  // Every column is one (sample, position) pair, so the column mean is the
  // batch mean of the per-sample |T|-averaged statistic.
  const double denom = static_cast<double>(cap.h_bar.cols());
  return {detail::mean_square_rows(cap.h_bar, denom), detail::mean_square_rows(cap.s, denom)};
}

struct KFState {
  std::vector<double> H;
  std::vector<double> S;
  double gamma = 0.8;
  std::uint64_t step = 0;

  // Ones, matching the identity initialization of the Fisher approximation.
  static KFState initial(std::size_t h_len, std::size_t s_len, double gamma) {
    return {std::vector<double>(h_len, 1.0), std::vector<double>(s_len, 1.0), gamma, 0};
  }
};

// H <- gamma * H_new + (1 - gamma) * H_prev, likewise for S.
inline KFState ema_update(KFState state, std::span<const double> h_new,
                          std::span<const double> s_new) {
  if (h_new.size() != state.H.size() || s_new.size() != state.S.size())
    throw DimensionError("ema_update: factor length mismatch (H " +
                         std::to_string(h_new.size()) + " vs " + std::to_string(state.H.size()) +
                         ", S " + std::to_string(s_new.size()) + " vs " +
                         std::to_string(state.S.size()) + ")");
  const double g = state.gamma;
  for (std::size_t i = 0; i < h_new.size(); ++i) state.H[i] = g * h_new[i] + (1.0 - g) * state.H[i];
  for (std::size_t i = 0; i < s_new.size(); ++i) state.S[i] = g * s_new[i] + (1.0 - g) * state.S[i];
  ++state.step;
  return state;
}

// (v - min) / (max - min); a flat vector (range < 1e-12) maps to all ones.
inline std::vector<double> minmax_normalize(std::span<const double> v) {
  if (v.empty()) return {};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  if (range < 1e-12) return std::vector<double>(v.size(), 1.0);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  return out;
}

// Diagonal of H' (x) S' + lambda I laid out like the layer's parameters:
// entry (j, k) of an out x (in+1) weight is S'[j] * H'[k] + lambda.
// Norm layers get two blocks: scale S'[c] * H'[c] + lambda, shift S'[c] + lambda.
struct EfimDiag {
  std::vector<Tensor> blocks;
  double lambda = 0.0;
};

inline EfimDiag assemble_efim_diag(std::span<const double> h_norm,
                                   std::span<const double> s_norm, double lambda,
                                   const nn::LayerKind& kind) {
  if (!(lambda > 0.0)) throw ValidationError("assemble_efim_diag: lambda must be positive");
  EfimDiag out;
  out.lambda = lambda;
  auto matrix_block = [&](std::size_t rows, std::size_t cols) {
    if (s_norm.size() != rows || h_norm.size() != cols)
      throw DimensionError("assemble_efim_diag: factor sizes (" + std::to_string(h_norm.size()) +
                           ", " + std::to_string(s_norm.size()) + ") do not match layer");
    Tensor b({rows, cols});
    for (std::size_t j = 0; j < rows; ++j)
      for (std::size_t k = 0; k < cols; ++k) b(j, k) = s_norm[j] * h_norm[k] + lambda;
    out.blocks.push_back(std::move(b));
  };
  auto norm_blocks = [&](std::size_t channels) {
    if (s_norm.size() != channels || h_norm.size() != channels)
      throw DimensionError("assemble_efim_diag: norm factor sizes do not match channels");
    Tensor scale({channels}), shift({channels});
    for (std::size_t c = 0; c < channels; ++c) {
      scale[c] = s_norm[c] * h_norm[c] + lambda;
      shift[c] = s_norm[c] + lambda;
    }
    out.blocks.push_back(std::move(scale));
    out.blocks.push_back(std::move(shift));
  };
  std::visit(
      [&](const auto& spec) {
        using S = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<S, nn::DenseSpec>)
          matrix_block(spec.out, spec.in + 1);
        else if constexpr (std::is_same_v<S, nn::Conv2DSpec>)
          matrix_block(spec.c_out, spec.c_in * spec.k_h * spec.k_w + 1);
        else if constexpr (std::is_same_v<S, nn::BatchNormSpec>)
          norm_blocks(spec.channels);
        else if constexpr (std::is_same_v<S, nn::LayerNormSpec>)
          norm_blocks(spec.features);
      },
      kind);
  return out;
}

// g / F elementwise. No square root.
inline Tensor precondition(const Tensor& g, const Tensor& efim_block) {
  if (g.shape() != efim_block.shape())
    throw DimensionError("precondition: gradient " + shape_string(g.shape()) +
                         " vs Fisher block " + shape_string(efim_block.shape()));
  Tensor out(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] / efim_block[i];
  return out;
}

// Per-layer EMA'd factor states for a whole network. Layers without
// parameters hold no state.
class KroneckerCurvature {
 public:
  KroneckerCurvature() = default;
  explicit KroneckerCurvature(double gamma) : gamma_(gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw ValidationError("KF decay gamma must lie in (0, 1]");
  }

  double gamma() const { return gamma_; }
  const std::vector<std::optional<KFState>>& states() const { return states_; }

  // This batch's factors for every parametric layer (nullopt elsewhere).
  static std::vector<std::optional<KFactorDiag>> raw_factors(const nn::Network& net) {
    std::vector<std::optional<KFactorDiag>> out(net.size());
    for (std::size_t i = 0; i < net.size(); ++i) {
      const auto& layer = net.layer(i);
      if (has_parameters(layer.kind())) out[i] = layer_kf_diag(layer.kind(), layer.capture());
    }
    return out;
  }

  void update(const std::vector<std::optional<KFactorDiag>>& raw) {
    if (states_.empty()) states_.resize(raw.size());
    if (states_.size() != raw.size()) throw DimensionError("curvature: layer count changed");
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!raw[i]) continue;
      if (!states_[i])
        states_[i] = KFState::initial(raw[i]->H.size(), raw[i]->S.size(), gamma_);
      states_[i] = ema_update(std::move(*states_[i]), raw[i]->H, raw[i]->S);
    }
  }

  // Normalizes the EMA'd factors (read-only) and assembles each layer's EFIM.
  // Layers not yet seen use identity factors.
  std::vector<EfimDiag> efims(const nn::Network& net, double lambda) const {
    std::vector<EfimDiag> out(net.size());
    for (std::size_t i = 0; i < net.size(); ++i) {
      const auto kind = net.layer(i).kind();
      if (!has_parameters(kind)) continue;
      std::vector<double> h, s;
      if (i < states_.size() && states_[i]) {
        h = minmax_normalize(states_[i]->H);
        s = minmax_normalize(states_[i]->S);
      } else {
        const auto sizes = factor_sizes(kind);
        h.assign(sizes.first, 1.0);
        s.assign(sizes.second, 1.0);
      }
      out[i] = assemble_efim_diag(h, s, lambda, kind);
    }
    return out;
  }

  // Unnormalized diag(H) (x) diag(S), flattened in the network's parameter
  // order; the shift of a norm layer uses H = 1. This is the Kronecker estimate
  // of the per-sample Fisher diagonal.
  std::vector<double> fisher_diagonal(const nn::Network& net) const {
    std::vector<double> out;
    for (std::size_t i = 0; i < net.size(); ++i) {
      const auto kind = net.layer(i).kind();
      if (!has_parameters(kind)) continue;
      if (i >= states_.size() || !states_[i])
        throw StateError("fisher_diagonal: layer " + std::to_string(i) + " has no factors yet");
      const auto& st = *states_[i];
      if (is_norm(kind)) {
        for (std::size_t c = 0; c < st.S.size(); ++c) out.push_back(st.S[c] * st.H[c]);
        for (std::size_t c = 0; c < st.S.size(); ++c) out.push_back(st.S[c]);
      } else {
        for (double sj : st.S)
          for (double hk : st.H) out.push_back(sj * hk);
      }
    }
    return out;
  }

  void set_states(std::vector<std::optional<KFState>> states) { states_ = std::move(states); }

  // (H length, S length) for a parametric layer.
  static std::pair<std::size_t, std::size_t> factor_sizes(const nn::LayerKind& kind) {
    return std::visit(
        [](const auto& spec) -> std::pair<std::size_t, std::size_t> {
          using S = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<S, nn::DenseSpec>)
            return {spec.in + 1, spec.out};
          else if constexpr (std::is_same_v<S, nn::Conv2DSpec>)
            return {spec.c_in * spec.k_h * spec.k_w + 1, spec.c_out};
          else if constexpr (std::is_same_v<S, nn::BatchNormSpec>)
            return {spec.channels, spec.channels};
          else if constexpr (std::is_same_v<S, nn::LayerNormSpec>)
            return {spec.features, spec.features};
          else
            return {0, 0};
        },
        kind);
  }

 private:
  double gamma_ = 0.8;
  std::vector<std::optional<KFState>> states_;
};

}  // namespace kronfisher
