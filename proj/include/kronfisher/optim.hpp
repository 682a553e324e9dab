#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kronfisher/kfactor.hpp"
#include "kronfisher/linalg.hpp"

namespace kronfisher {

// ---------------------------------------------------------------------------
// AdaFisher / AdaFisherW
// ---------------------------------------------------------------------------

struct AdaFisherHyper {
  double alpha = 0.001;   // learning rate
  double beta = 0.9;      // first-moment decay
  double gamma = 0.8;     // Kronecker-factor EMA decay
  double lambda = 0.001;  // Tikhonov damping
  double kappa = 0.0;     // weight decay (AdaFisherW only)
};

enum class AdaFisherVariant { Plain, W };

struct AdaFisherState {
  AdaFisherHyper hyper;
  std::vector<Tensor> m;  // one buffer per parameter tensor, zero-initialized
  std::uint64_t t = 0;
};

namespace detail {

inline void ensure_buffers(std::vector<Tensor>& buffers, std::span<const nn::ParamRef> params) {
  if (buffers.empty())
    for (const auto& p : params) buffers.emplace_back(p.param->value.shape());
  if (buffers.size() != params.size())
    throw DimensionError("optimizer state does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (buffers[i].shape() != params[i].param->value.shape())
      throw DimensionError("optimizer state shape mismatch for parameter " + std::to_string(i));
}

inline void guard_finite(std::span<const nn::ParamRef> params, const char* who) {
  for (const auto& p : params)
    if (!p.param->value.all_finite())
      throw NumericError(std::string(who) + ": parameters diverged (NaN/Inf)");
}

}  // namespace detail

// One AdaFisher update. `efims[layer].blocks[index]` must be congruent with each
// parameter. The moment buffer keeps the raw EMA; the bias-corrected value
// m_hat = m / (1 - beta^t) drives the update:
//   plain: theta -= lr * m_hat / F
//   W:     theta -= lr * (m_hat / F + kappa * theta)
inline void adafisher_step(AdaFisherState& state, std::span<const nn::ParamRef> params,
                           const std::vector<EfimDiag>& efims, double lr,
                           AdaFisherVariant variant) {
  detail::ensure_buffers(state.m, params);
  const double beta = state.hyper.beta;
  const double kappa = variant == AdaFisherVariant::W ? state.hyper.kappa : 0.0;
  ++state.t;
  const double correction = 1.0 - std::pow(beta, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& ref = params[i];
    if (ref.layer >= efims.size() || ref.index >= efims[ref.layer].blocks.size())
      throw DimensionError("adafisher_step: no Fisher block for parameter " + ref.param->name);
    const Tensor& F = efims[ref.layer].blocks[ref.index];
    Tensor& theta = ref.param->value;
    const Tensor& g = ref.param->grad;
    if (F.shape() != theta.shape() || g.shape() != theta.shape())
      throw DimensionError("adafisher_step: Fisher block " + shape_string(F.shape()) +
                           " vs parameter " + shape_string(theta.shape()));
    Tensor& m = state.m[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = beta * m[k] + (1.0 - beta) * g[k];
      const double m_hat = m[k] / correction;
      double delta = m_hat / F[k];
      if (variant == AdaFisherVariant::W) delta += kappa * theta[k];
      theta[k] -= lr * delta;
    }
  }
  detail::guard_finite(params, "adafisher");
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, used by adamw_step only
  std::vector<Tensor> m, v;
  std::uint64_t t = 0;
};

namespace detail {

inline void adam_core(AdamState& s, std::span<const nn::ParamRef> params, double lr,
                      bool decoupled) {
  ensure_buffers(s.m, params);
  ensure_buffers(s.v, params);
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = params[i].param->value;
    const Tensor& g = params[i].param->grad;
    if (g.shape() != theta.shape()) throw DimensionError("adam: gradient shape mismatch");
    if (decoupled && s.weight_decay != 0.0)
      for (double& w : theta.data()) w *= 1.0 - lr * s.weight_decay;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      s.m[i][k] = s.beta1 * s.m[i][k] + (1.0 - s.beta1) * g[k];
      s.v[i][k] = s.beta2 * s.v[i][k] + (1.0 - s.beta2) * g[k] * g[k];
      const double m_hat = s.m[i][k] / c1;
      const double v_hat = s.v[i][k] / c2;
      theta[k] -= lr * m_hat / (std::sqrt(v_hat) + s.eps);
    }
  }
  guard_finite(params, decoupled ? "adamw" : "adam");
}

}  // namespace detail

inline void adam_step(AdamState& s, std::span<const nn::ParamRef> params, double lr) {
  detail::adam_core(s, params, lr, false);
}

// theta <- theta * (1 - lr * weight_decay), then the Adam update.
inline void adamw_step(AdamState& s, std::span<const nn::ParamRef> params, double lr) {
  detail::adam_core(s, params, lr, true);
}

struct SgdState {
  double momentum = 0.9;
  std::vector<Tensor> velocity;
};

// velocity <- momentum * velocity + g;  theta <- theta - lr * velocity
inline void sgd_momentum_step(SgdState& s, std::span<const nn::ParamRef> params, double lr) {
  detail::ensure_buffers(s.velocity, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = params[i].param->value;
    const Tensor& g = params[i].param->grad;
    if (g.shape() != theta.shape()) throw DimensionError("sgd: gradient shape mismatch");
    for (std::size_t k = 0; k < theta.size(); ++k) {
      s.velocity[i][k] = s.momentum * s.velocity[i][k] + g[k];
      theta[k] -= lr * s.velocity[i][k];
    }
  }
  detail::guard_finite(params, "sgd");
}

// ---------------------------------------------------------------------------
// Optimizer objects used by the training loop
// ---------------------------------------------------------------------------

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual std::string name() const = 0;
  // Consumes the gradients and captures left by the last backward pass.
  virtual void step(nn::Network& net, double lr) = 0;
};

class AdaFisher final : public Optimizer {
 public:
  explicit AdaFisher(AdaFisherHyper hyper = {}, AdaFisherVariant variant = AdaFisherVariant::Plain)
      : variant_(variant), curvature_(hyper.gamma) {
    state_.hyper = hyper;
    if (!(hyper.lambda > 0.0)) throw ValidationError("adafisher: lambda must be positive");
    if (!(hyper.beta >= 0.0 && hyper.beta < 1.0))
      throw ValidationError("adafisher: beta must lie in [0, 1)");
  }

  std::string name() const override {
    return variant_ == AdaFisherVariant::W ? "adafisherw" : "adafisher";
  }

  void step(nn::Network& net, double lr) override {
    apply(net, KroneckerCurvature::raw_factors(net), lr);
  }

  // Update with externally supplied (e.g. worker-aggregated) raw factors; the
  // gradients already stored in `net` are used as-is.
  void apply(nn::Network& net, const std::vector<std::optional<KFactorDiag>>& raw, double lr) {
    curvature_.update(raw);
    last_efims_ = curvature_.efims(net, state_.hyper.lambda);
    const auto params = net.parameters();
    adafisher_step(state_, params, last_efims_, lr, variant_);
  }

  const KroneckerCurvature& curvature() const { return curvature_; }
  KroneckerCurvature& curvature() { return curvature_; }
  const AdaFisherState& state() const { return state_; }
  const std::vector<EfimDiag>& last_efims() const { return last_efims_; }

 private:
  AdaFisherVariant variant_;
  KroneckerCurvature curvature_;
  AdaFisherState state_;
  std::vector<EfimDiag> last_efims_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(AdamState init = {}, bool decoupled = false)
      : state_(std::move(init)), decoupled_(decoupled) {}

  std::string name() const override { return decoupled_ ? "adamw" : "adam"; }

  void step(nn::Network& net, double lr) override {
    const auto params = net.parameters();
    decoupled_ ? adamw_step(state_, params, lr) : adam_step(state_, params, lr);
  }

  // Bias-corrected second moment per parameter tensor: the quantity Adam
  // uses as its diagonal curvature proxy.
  std::vector<Tensor> v_hat() const {
    std::vector<Tensor> out = state_.v;
    const double c2 = 1.0 - std::pow(state_.beta2, static_cast<double>(state_.t));
    for (auto& t : out)
      for (double& v : t.data()) v /= c2;
    return out;
  }

  const AdamState& state() const { return state_; }

 private:
  AdamState state_;
  bool decoupled_;
};

class SgdMomentum final : public Optimizer {
 public:
  explicit SgdMomentum(double momentum = 0.9) { state_.momentum = momentum; }
  std::string name() const override { return "sgd"; }
  void step(nn::Network& net, double lr) override {
    const auto params = net.parameters();
    sgd_momentum_step(state_, params, lr);
  }

 private:
  SgdState state_;
};

// ---------------------------------------------------------------------------
// Learning-rate schedules
// ---------------------------------------------------------------------------

struct ConstantSchedule {};
struct StepSchedule {
  std::uint64_t period = 10;
  double factor = 0.1;
};
struct CosineSchedule {
  std::uint64_t t_max = 1;
  double alpha_min = 0.0;
};
using Schedule = std::variant<ConstantSchedule, StepSchedule, CosineSchedule>;

inline double schedule_lr(const Schedule& s, std::uint64_t t, double alpha0) {
  return std::visit(
      [&](const auto& sch) -> double {
        using S = std::decay_t<decltype(sch)>;
        if constexpr (std::is_same_v<S, ConstantSchedule>) {
          return alpha0;
        } else if constexpr (std::is_same_v<S, StepSchedule>) {
          if (sch.period == 0) throw ValidationError("step schedule period must be positive");
          return alpha0 * std::pow(sch.factor, static_cast<double>(t / sch.period));
        } else {
          if (sch.t_max == 0) throw ValidationError("cosine schedule t_max must be positive");
          if (t >= sch.t_max) return sch.alpha_min;
          const double frac = static_cast<double>(t) / static_cast<double>(sch.t_max);
          return sch.alpha_min +
                 0.5 * (alpha0 - sch.alpha_min) * (1.0 + std::cos(std::numbers::pi * frac));
        }
      },
      s);
}

// ---------------------------------------------------------------------------
// Preconditioned descent on a convex quadratic
// ---------------------------------------------------------------------------

struct ConvexRun {
  std::vector<std::vector<double>> trajectory;  // theta_0 .. theta_k
  std::vector<double> suboptimality;            // J(theta_i) - J*, i = 0..k
};

// Largest step for which alpha * F^-1 A is guaranteed non-expansive: the
// Fisher diagonal is bounded below by lambda, so the preconditioned gradient
// field is Lipschitz with L = lambda_max(A) / lambda.
inline double preconditioned_lipschitz(const Tensor& A, double lambda) {
  return sym_eig(A).values.front() / lambda;
}

// Minimizes J(theta) = 1/2 (theta - theta*)^T A (theta - theta*) with
//   theta <- theta - alpha * F^-1 grad J,
// where F is the diagonal Fisher approximation built from gradient statistics:
// the parameter vector is treated as one bias-only dense layer (H = [1]) whose
// sensitivity factor S is the EMA of grad^2, min-max normalized, plus lambda.
inline ConvexRun convex_preconditioned_descent(const Tensor& A, std::span<const double> theta_star,
                                               std::span<const double> theta0, double alpha,
                                               std::size_t k, double gamma = 0.8,
                                               double lambda = 0.001) {
  require_matrix(A, "convex descent matrix");
  const std::size_t d = A.rows();
  if (A.cols() != d || theta_star.size() != d || theta0.size() != d)
    throw DimensionError("convex_preconditioned_descent: shape mismatch");
  const auto eig = sym_eig(A);
  if (!(eig.values.back() > 0.0))
    throw ValidationError("convex_preconditioned_descent: A is not positive definite");
  if (!(alpha > 0.0)) throw ValidationError("convex_preconditioned_descent: alpha must be positive");

  const nn::LayerKind layer = nn::DenseSpec{0, d};
  KFState kf = KFState::initial(1, d, gamma);
  const std::vector<double> h_norm = minmax_normalize(kf.H);

  std::vector<double> theta(theta0.begin(), theta0.end());
  std::vector<double> err(d), grad(d), g2(d);
  auto objective = [&] {
    for (std::size_t i = 0; i < d; ++i) err[i] = theta[i] - theta_star[i];
    double j = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      double row = 0.0;
      for (std::size_t c = 0; c < d; ++c) row += A(r, c) * err[c];
      grad[r] = row;
      j += 0.5 * err[r] * row;
    }
    return j;
  };

  ConvexRun run;
  run.trajectory.push_back(theta);
  run.suboptimality.push_back(objective());
  for (std::size_t step = 0; step < k; ++step) {
    for (std::size_t i = 0; i < d; ++i) g2[i] = grad[i] * grad[i];
    kf = ema_update(std::move(kf), std::vector<double>{1.0}, g2);
    const EfimDiag F = assemble_efim_diag(h_norm, minmax_normalize(kf.S), lambda, layer);
    for (std::size_t i = 0; i < d; ++i) theta[i] -= alpha * grad[i] / F.blocks[0][i];
    run.trajectory.push_back(theta);
    run.suboptimality.push_back(objective());
    if (!std::isfinite(run.suboptimality.back()))
      throw NumericError("convex_preconditioned_descent diverged");
  }
  return run;
}

}  // namespace kronfisher
