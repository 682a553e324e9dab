#include "test_util.hpp"

using kf::Tensor;

namespace {

// A single free-standing scalar parameter with a scripted gradient.
struct Scalar {
  nn::Parameter p{"theta", Tensor({1}), Tensor({1})};
  std::vector<nn::ParamRef> refs() { return {nn::ParamRef{0, 0, &p}}; }
  double& value() { return p.value[0]; }
  void set_grad(double g) { p.grad[0] = g; }
};

std::vector<kf::EfimDiag> scalar_efim(double f) {
  kf::EfimDiag e;
  e.blocks.push_back(Tensor({1}, {f}));
  return {e};
}

void forward_backward(nn::Network& net, std::uint64_t seed) {
  const std::vector<int> y{0, 2, 1, 1, 0, 2};
  net.backward(nn::nll_softmax_loss(net.forward(testutil::random_matrix(6, 4, seed), true), y).dlogits);
}

nn::Network mlp(std::uint64_t seed = 1) {
  return testutil::build_net({nn::DenseSpec{4, 8}, nn::ActivationSpec{}, nn::DenseSpec{8, 3}}, seed);
}

}  // namespace

TEST(AdaFisherStep, FirstStepBiasCorrectionCollapses) {
  kf::AdaFisherState st;
  Scalar s;
  s.set_grad(1.0);
  const double lambda = st.hyper.lambda, alpha = st.hyper.alpha;
  kf::adafisher_step(st, s.refs(), scalar_efim(1.0 + lambda), alpha, kf::AdaFisherVariant::Plain);
  EXPECT_NEAR(s.value(), -alpha / (1.0 + lambda), 1e-18);
  EXPECT_EQ(st.t, 1u);
}

TEST(AdaFisherStep, DefaultsAreTheStandardSettings) {
  const kf::AdaFisherHyper h;
  EXPECT_EQ(h.alpha, 0.001);
  EXPECT_EQ(h.lambda, 0.001);
  EXPECT_EQ(h.gamma, 0.8);
  EXPECT_EQ(h.beta, 0.9);
}

TEST(AdaFisherStep, ScriptedThreeStepRunMatchesHandUnrolled) {
  const double beta = 0.9, F = 0.37, lr = 0.05, kappa = 0.1, theta0 = 0.8;
  for (auto variant : {kf::AdaFisherVariant::Plain, kf::AdaFisherVariant::W}) {
    kf::AdaFisherState st;
    st.hyper.kappa = kappa;
    Scalar s;
    s.value() = theta0;
    for (double g : {1.0, -1.0, 2.0}) {
      s.set_grad(g);
      kf::adafisher_step(st, s.refs(), scalar_efim(F), lr, variant);
    }
    const double k = variant == kf::AdaFisherVariant::W ? kappa : 0.0;
    const double m1 = (1 - beta) * 1.0;
    const double m2 = beta * m1 + (1 - beta) * -1.0;
    const double m3 = beta * m2 + (1 - beta) * 2.0;
    double th = theta0;
    th -= lr * (m1 / (1 - beta) / F + k * th);
    th -= lr * (m2 / (1 - beta * beta) / F + k * th);
    th -= lr * (m3 / (1 - beta * beta * beta) / F + k * th);
    EXPECT_NEAR(s.value(), th, 1e-12);
    EXPECT_NEAR(st.m[0][0], m3, 1e-15);
  }
}

TEST(AdaFisherStep, ZeroKappaWVariantIsBitwisePlain) {
  auto a = mlp(), b = mlp();
  kf::AdaFisher plain({}, kf::AdaFisherVariant::Plain), w({}, kf::AdaFisherVariant::W);
  for (std::uint64_t step = 0; step < 5; ++step) {
    forward_backward(a, 10 + step);
    forward_backward(b, 10 + step);
    plain.step(a, 0.01);
    w.step(b, 0.01);
  }
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
}

TEST(AdaFisherStep, WeightDecayIsAdditiveNotMultiplicative) {
  kf::AdaFisherState st;
  st.hyper.kappa = 0.5;
  Scalar s;
  s.value() = 2.0;
  s.set_grad(0.0);
  kf::adafisher_step(st, s.refs(), scalar_efim(1.0), 0.1, kf::AdaFisherVariant::W);
  EXPECT_DOUBLE_EQ(s.value(), 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(AdaFisherStep, ShapeMismatchIsDimensionError) {
  kf::AdaFisherState st;
  Scalar s;
  kf::EfimDiag e;
  e.blocks.push_back(Tensor({2}, {1.0, 1.0}));
  EXPECT_THROW(kf::adafisher_step(st, s.refs(), {e}, 0.1, kf::AdaFisherVariant::Plain),
               kf::DimensionError);
  EXPECT_THROW(kf::adafisher_step(st, s.refs(), {}, 0.1, kf::AdaFisherVariant::Plain),
               kf::DimensionError);
}

TEST(AdaFisherStep, NonFiniteResultIsNumericError) {
  kf::AdaFisherState st;
  Scalar s;
  s.set_grad(1e300);
  EXPECT_THROW(kf::adafisher_step(st, s.refs(), scalar_efim(1e-300), 1e10, kf::AdaFisherVariant::Plain),
               kf::NumericError);
}

TEST(AdaFisherStep, InvalidHyperparametersRejected) {
  kf::AdaFisherHyper h;
  h.lambda = 0.0;
  EXPECT_THROW(kf::AdaFisher{h}, kf::ValidationError);
  h = {};
  h.beta = 1.0;
  EXPECT_THROW(kf::AdaFisher{h}, kf::ValidationError);
}

TEST(AdaFisherInvariants, UpdateSignAndStepBound) {
  auto net = mlp(3);
  kf::AdaFisher opt;
  const double lr = 0.01, beta = opt.state().hyper.beta, lambda = opt.state().hyper.lambda;
  for (std::uint64_t step = 1; step <= 20; ++step) {
    forward_backward(net, 100 + step);
    const auto before = net.flat_parameters();
    opt.step(net, lr);
    const auto after = net.flat_parameters();
    std::vector<double> m;
    for (const auto& t : opt.state().m) m.insert(m.end(), t.values().begin(), t.values().end());
    const double corr = 1.0 - std::pow(beta, static_cast<double>(step));
    double m_inf = 0.0, d_inf = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double m_hat = m[i] / corr, delta = after[i] - before[i];
      if (m_hat != 0.0) {
        EXPECT_TRUE(delta * m_hat < 0.0) << "coordinate " << i;
      }
      m_inf = std::max(m_inf, std::abs(m_hat));
      d_inf = std::max(d_inf, std::abs(delta));
    }
    EXPECT_LE(d_inf, lr * m_inf / lambda * (1 + 1e-12));
  }
}

TEST(AdaFisherInvariants, FrozenIdentityFactorsReduceToMomentumSgd) {
  const double lambda = 1e-14, lr = 0.05, beta = 0.9;
  auto net = mlp(4), ref = mlp(4);
  kf::AdaFisherHyper h;
  h.lambda = lambda;
  kf::AdaFisher opt(h);
  std::vector<double> m(ref.parameter_count(), 0.0);
  for (std::uint64_t step = 1; step <= 10; ++step) {
    forward_backward(net, 200 + step);
    forward_backward(ref, 200 + step);
    // Flat factors normalize to all ones, i.e. the identity.
    std::vector<std::optional<kf::KFactorDiag>> frozen(net.size());
    for (std::size_t l : {0u, 2u}) {
      const auto [nh, ns] = kf::KroneckerCurvature::factor_sizes(net.layer(l).kind());
      frozen[l] = kf::KFactorDiag{std::vector<double>(nh, 1.0), std::vector<double>(ns, 1.0)};
    }
    opt.apply(net, frozen, lr);
    const auto g = ref.flat_gradients();
    auto theta = ref.flat_parameters();
    const double corr = 1.0 - std::pow(beta, static_cast<double>(step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta * m[i] + (1 - beta) * g[i];
      theta[i] -= lr * m[i] / corr;
    }
    ref.set_flat_parameters(theta);
    const auto got = net.flat_parameters();
    for (std::size_t i = 0; i < theta.size(); ++i) ASSERT_NEAR(got[i], theta[i], 1e-12);
  }
}

TEST(Adam, ThreeStepScalarRunMatchesHandUnrolled) {
  kf::AdamState st;
  Scalar s;
  s.value() = 0.3;
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0, th = 0.3;
  int t = 0;
  for (double g : {1.0, -1.0, 2.0}) {
    s.set_grad(g);
    kf::adam_step(st, s.refs(), lr);
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    th -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  EXPECT_NEAR(s.value(), th, 1e-12);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  kf::AdamState st;
  Scalar s;
  const double lr = 0.001;
  double prev = 0.0;
  for (int i = 0; i < 20000; ++i) {
    prev = s.value();
    s.set_grad(-3.7);
    kf::adam_step(st, s.refs(), lr);
  }
  EXPECT_NEAR(s.value() - prev, lr, lr * 1e-6);
}

TEST(Adam, DecoupledWeightDecayShrinksBeforeUpdate) {
  kf::AdamState st;
  st.weight_decay = 0.1;
  Scalar s;
  s.value() = 2.0;
  s.set_grad(1.0);
  kf::adamw_step(st, s.refs(), 0.01);
  const double shrunk = 2.0 * (1.0 - 0.01 * 0.1);
  EXPECT_NEAR(s.value(), shrunk - 0.01 * 1.0 / (1.0 + 1e-8), 1e-15);
}

TEST(Sgd, ZeroMomentumIsPlainGradientDescent) {
  kf::SgdState st;
  st.momentum = 0.0;
  Scalar s;
  s.value() = 1.0;
  for (double g : {0.5, -2.0}) {
    s.set_grad(g);
    kf::sgd_momentum_step(st, s.refs(), 0.1);
  }
  EXPECT_DOUBLE_EQ(s.value(), 1.0 - 0.1 * 0.5 + 0.1 * 2.0);
}

TEST(Sgd, MomentumAccumulatesVelocity) {
  kf::SgdState st;
  Scalar s;
  s.set_grad(1.0);
  kf::sgd_momentum_step(st, s.refs(), 0.1);
  kf::sgd_momentum_step(st, s.refs(), 0.1);
  EXPECT_NEAR(s.value(), -0.1 * 1.0 - 0.1 * 1.9, 1e-15);
}

TEST(Baselines, ShapeMismatchIsDimensionError) {
  kf::AdamState st;
  Scalar s;
  s.p.grad = Tensor({2});
  EXPECT_THROW(kf::adam_step(st, s.refs(), 0.1), kf::DimensionError);
  kf::SgdState sg;
  EXPECT_THROW(kf::sgd_momentum_step(sg, s.refs(), 0.1), kf::DimensionError);
}

TEST(Schedule, CosineEndpointsAndMidpoint) {
  const kf::Schedule s = kf::CosineSchedule{10, 0.1};
  EXPECT_DOUBLE_EQ(kf::schedule_lr(s, 0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(kf::schedule_lr(s, 10, 1.0), 0.1);
  EXPECT_NEAR(kf::schedule_lr(s, 5, 1.0), 0.55, 1e-15);
  EXPECT_DOUBLE_EQ(kf::schedule_lr(s, 25, 1.0), 0.1);
}

TEST(Schedule, StepAndConstant) {
  EXPECT_NEAR(kf::schedule_lr(kf::StepSchedule{10, 0.1}, 25, 0.3), 0.003, 1e-17);
  EXPECT_EQ(kf::schedule_lr(kf::StepSchedule{10, 0.1}, 9, 0.3), 0.3);
  EXPECT_EQ(kf::schedule_lr(kf::ConstantSchedule{}, 1000, 0.3), 0.3);
  EXPECT_THROW(kf::schedule_lr(kf::StepSchedule{0, 0.1}, 1, 0.3), kf::ValidationError);
}

TEST(ConvexDescent, IdentityMatrixDecreasesMonotonically) {
  const auto A = Tensor::identity(4);
  const std::vector<double> star{1, -2, 0.5, 3}, theta0{-1, 4, 2, 0};
  const double alpha = 1.0 / kf::preconditioned_lipschitz(A, 0.001);
  const auto run = kf::convex_preconditioned_descent(A, star, theta0, alpha, 20000);
  for (std::size_t i = 1; i < run.suboptimality.size(); ++i)
    ASSERT_LE(run.suboptimality[i], run.suboptimality[i - 1]);
  EXPECT_LE(run.suboptimality.back(), 1e-6 * run.suboptimality.front());
}

TEST(ConvexDescent, OptimumIsAFixedPoint) {
  const auto q = kf::synth_quadratic(3, 5.0, 2);
  const auto run = kf::convex_preconditioned_descent(q.A, q.theta_star, q.theta_star, 0.01, 50);
  for (const auto& th : run.trajectory) EXPECT_EQ(th, q.theta_star);
  for (double j : run.suboptimality) EXPECT_EQ(j, 0.0);
}

TEST(ConvexDescent, BoundHoldsAtStableStepSize) {
  const Tensor A = Tensor::diagonal(std::vector<double>{1.0, 10.0});
  const std::vector<double> star{0.5, -1.0}, theta0{2.0, 1.0};
  const double L = kf::preconditioned_lipschitz(A, 0.001);
  EXPECT_DOUBLE_EQ(L, 10.0 / 0.001);
  const double alpha = 1.0 / L;
  const auto run = kf::convex_preconditioned_descent(A, star, theta0, alpha, 100);
  const double r2 = std::pow(theta0[0] - star[0], 2) + std::pow(theta0[1] - star[1], 2);
  for (std::size_t k = 1; k <= 100; ++k)
    EXPECT_LE(run.suboptimality[k], r2 / (2 * alpha * static_cast<double>(k))) << "k=" << k;
}

// alpha = 0.1 is only below 1/lambda_max(A); the damped preconditioner can
// amplify a coordinate by up to 1/lambda, so this step size is unstable.
TEST(ConvexDescent, StepSizeAboveOneOverLDiverges) {
  const Tensor A = Tensor::diagonal(std::vector<double>{1.0, 10.0});
  const std::vector<double> star{0.5, -1.0}, theta0{2.0, 1.0};
  bool violated = false;
  try {
    const auto run = kf::convex_preconditioned_descent(A, star, theta0, 0.1, 100);
    const double r2 = std::pow(1.5, 2) + std::pow(2.0, 2);
    for (std::size_t k = 1; k <= 100; ++k)
      violated = violated || run.suboptimality[k] > r2 / (2 * 0.1 * static_cast<double>(k));
  } catch (const kf::NumericError&) {
    violated = true;
  }
  EXPECT_TRUE(violated);
}

TEST(ConvexDescent, RejectsNonPositiveDefinite) {
  const Tensor A = Tensor::diagonal(std::vector<double>{1.0, -1.0});
  const std::vector<double> z{0, 0};
  EXPECT_THROW(kf::convex_preconditioned_descent(A, z, z, 0.1, 1), kf::ValidationError);
}
