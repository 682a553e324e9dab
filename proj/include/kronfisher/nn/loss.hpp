#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "kronfisher/tensor.hpp"

namespace kronfisher::nn {

struct LossResult {
  double loss = 0.0;      // batch mean of -log softmax(logits)[target]
  Tensor dlogits;         // (softmax - onehot) / batch
  std::size_t correct = 0;  // argmax hits, for accuracy bookkeeping
};

inline std::vector<double> softmax_row(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) z += (p[c] = std::exp(logits[c] - mx));
  for (double& v : p) v /= z;
  return p;
}

inline LossResult nll_softmax_loss(const Tensor& logits, std::span<const int> targets) {
  require_matrix(logits, "logits");
  const std::size_t batch = logits.rows(), C = logits.cols();
  if (targets.size() != batch)
    throw DimensionError("loss: " + std::to_string(targets.size()) + " targets for batch of " +
                         std::to_string(batch));
  LossResult out;
  out.dlogits = Tensor({batch, C});
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = targets[b];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw ValidationError("loss: target " + std::to_string(y) + " outside [0, " +
                            std::to_string(C) + ")");
    const std::span<const double> row(&logits.data()[b * C], C);
    double mx = row[0];
    std::size_t arg = 0;
    for (std::size_t c = 0; c < C; ++c)
      if (row[c] > mx) mx = row[c], arg = c;
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    out.loss += (lse - row[y]) * inv_batch;
    for (std::size_t c = 0; c < C; ++c)
      out.dlogits(b, c) = (std::exp(row[c] - lse) - (c == static_cast<std::size_t>(y) ? 1.0 : 0.0)) *
                          inv_batch;
    if (arg == static_cast<std::size_t>(y)) ++out.correct;
  }
  if (!std::isfinite(out.loss)) throw NumericError("loss is not finite");
  return out;
}

}  // namespace kronfisher::nn
