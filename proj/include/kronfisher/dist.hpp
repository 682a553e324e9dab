#pragma once

#include <exception>
#include <span>
#include <thread>
#include <vector>

#include "kronfisher/nn/loss.hpp"
#include "kronfisher/optim.hpp"

namespace kronfisher {

// Mean of per-worker factor diagonals, accumulated in ascending worker order.
// With `weights` the mean is weighted (weights need not be normalized).
inline KFactorDiag aggregate_kfs(std::span<const KFactorDiag> locals,
                                 std::span<const double> weights = {}) {
  if (locals.empty()) throw ValidationError("aggregate_kfs: no worker factors");
  if (!weights.empty() && weights.size() != locals.size())
    throw DimensionError("aggregate_kfs: one weight per worker required");
  const std::size_t nh = locals[0].H.size(), ns = locals[0].S.size();
  for (const auto& l : locals)
    if (l.H.size() != nh || l.S.size() != ns)
      throw DimensionError("aggregate_kfs: worker factors differ in length");
  KFactorDiag out{std::vector<double>(nh, 0.0), std::vector<double>(ns, 0.0)};
  if (weights.empty()) {
    for (const auto& l : locals) {
      for (std::size_t i = 0; i < nh; ++i) out.H[i] += l.H[i];
      for (std::size_t i = 0; i < ns; ++i) out.S[i] += l.S[i];
    }
    const double k = static_cast<double>(locals.size());
    for (double& v : out.H) v /= k;
    for (double& v : out.S) v /= k;
    return out;
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw ValidationError("aggregate_kfs: weights must sum to a positive value");
  for (std::size_t k = 0; k < locals.size(); ++k) {
    const double w = weights[k] / total;
    for (std::size_t i = 0; i < nh; ++i) out.H[i] += w * locals[k].H[i];
    for (std::size_t i = 0; i < ns; ++i) out.S[i] += w * locals[k].S[i];
  }
  return out;
}

struct DistOptions {
  std::size_t workers = 1;
  bool threads = true;   // run worker compute on std::threads
  bool weighted = false; // allow unequal shards, weighting by shard size
};

struct DistStepStats {
  double loss = 0.0;  // batch-mean loss over the global batch
  std::size_t correct = 0;
  std::size_t batch = 0;
  std::vector<std::vector<std::optional<KFactorDiag>>> worker_factors;
  std::vector<std::optional<KFactorDiag>> aggregated;
  std::vector<double> gradient;  // aggregated, flattened
};

// Simulated data-parallel AdaFisher training. The master network doubles as
// worker 0 (so BatchNorm running statistics follow worker 0); workers 1..K-1
// are deep-copied replicas. Each step shards the global batch contiguously,
// runs forward/backward per worker, averages gradients and raw factors in
// worker order, takes one optimizer step on the master and broadcasts the
// parameters.
class DistributedTrainer {
 public:
  DistributedTrainer(nn::Network& master, DistOptions options)
      : master_(master), opt_(options) {
    if (opt_.workers == 0) throw ValidationError("distributed: need at least one worker");
    for (std::size_t k = 1; k < opt_.workers; ++k) replicas_.push_back(master_);
  }

  std::size_t workers() const { return opt_.workers; }
  const nn::Network& replica(std::size_t k) const { return k == 0 ? master_ : replicas_.at(k - 1); }

  // Contiguous shard bounds for a batch of n.
  std::vector<std::pair<std::size_t, std::size_t>> shards(std::size_t n) const {
    const std::size_t K = opt_.workers;
    if (n < K) throw ValidationError("distributed: batch smaller than worker count");
    if (!opt_.weighted && n % K != 0)
      throw ValidationError("distributed: batch of " + std::to_string(n) +
                            " is not divisible by " + std::to_string(K) + " workers");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t start = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t len = n / K + (k < n % K ? 1 : 0);
      out.emplace_back(start, start + len);
      start += len;
    }
    return out;
  }

  DistStepStats step(AdaFisher& optimizer, const Tensor& features, std::span<const int> labels,
                     std::span<const std::size_t> batch, double lr) {
    const auto bounds = shards(batch.size());
    const std::size_t K = opt_.workers;
    std::vector<nn::Network*> nets{&master_};
    for (auto& r : replicas_) nets.push_back(&r);

    std::vector<nn::LossResult> results(K);
    DistStepStats stats;
    stats.batch = batch.size();
    stats.worker_factors.resize(K);
    std::vector<std::exception_ptr> errors(K);
    auto work = [&](std::size_t k) {
      try {
        const auto idx = batch.subspan(bounds[k].first, bounds[k].second - bounds[k].first);
        const Tensor x = gather_rows(features, idx);
        std::vector<int> y;
        for (std::size_t i : idx) y.push_back(labels[i]);
        const Tensor logits = nets[k]->forward(x, true);
        results[k] = nn::nll_softmax_loss(logits, y);
        nets[k]->backward(results[k].dlogits);
        stats.worker_factors[k] = KroneckerCurvature::raw_factors(*nets[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    };
    if (opt_.threads && K > 1) {
      std::vector<std::thread> pool;
      for (std::size_t k = 0; k < K; ++k) pool.emplace_back(work, k);
      for (auto& t : pool) t.join();
    } else {
      for (std::size_t k = 0; k < K; ++k) work(k);
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);

    // Reduction, single-threaded and in worker order.
    std::vector<double> weights;
    if (opt_.weighted)
      for (const auto& b : bounds) weights.push_back(static_cast<double>(b.second - b.first));
    reduce_gradients(nets, weights);
    stats.aggregated.resize(master_.size());
    for (std::size_t l = 0; l < master_.size(); ++l) {
      if (!stats.worker_factors[0][l]) continue;
      std::vector<KFactorDiag> locals;
      for (std::size_t k = 0; k < K; ++k) locals.push_back(*stats.worker_factors[k][l]);
      stats.aggregated[l] = aggregate_kfs(locals, weights);
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double share = static_cast<double>(bounds[k].second - bounds[k].first) /
                           static_cast<double>(batch.size());
      stats.loss += share * results[k].loss;
      stats.correct += results[k].correct;
    }
    stats.gradient = master_.flat_gradients();

    optimizer.apply(master_, stats.aggregated, lr);
    const auto theta = master_.flat_parameters();
    for (auto& r : replicas_) r.set_flat_parameters(theta);
    return stats;
  }

 private:
  void reduce_gradients(const std::vector<nn::Network*>& nets, std::span<const double> weights) {
    const std::size_t K = nets.size();
    if (K == 1) return;
    auto master_params = nets[0]->parameters();
    std::vector<std::vector<nn::ParamRef>> worker_params;
    for (std::size_t k = 1; k < K; ++k) worker_params.push_back(nets[k]->parameters());
    double total = 0.0;
    for (double w : weights) total += w;
    for (std::size_t p = 0; p < master_params.size(); ++p) {
      Tensor& g0 = master_params[p].param->grad;
      if (weights.empty()) {
        for (std::size_t k = 1; k < K; ++k) {
          const Tensor& gk = worker_params[k - 1][p].param->grad;
          for (std::size_t i = 0; i < g0.size(); ++i) g0[i] += gk[i];
        }
        for (double& v : g0.data()) v /= static_cast<double>(K);
      } else {
        for (double& v : g0.data()) v *= weights[0] / total;
        for (std::size_t k = 1; k < K; ++k) {
          const Tensor& gk = worker_params[k - 1][p].param->grad;
          const double w = weights[k] / total;
          for (std::size_t i = 0; i < g0.size(); ++i) g0[i] += w * gk[i];
        }
      }
    }
  }

  nn::Network& master_;
  DistOptions opt_;
  std::vector<nn::Network> replicas_;
};

}  // namespace kronfisher
