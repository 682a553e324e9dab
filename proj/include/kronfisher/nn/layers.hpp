#pragma once

#include <cmath>
#include <memory>

#include "kronfisher/nn/im2col.hpp"
#include "kronfisher/nn/layer.hpp"
#include "kronfisher/rng.hpp"

namespace kronfisher::nn {

// Fully connected layer with weight theta = [W | b] of shape out x (in+1).
// Accepts any input whose trailing dimensions flatten to `in`.
class Dense final : public LayerBase<Dense> {
 public:
  explicit Dense(DenseSpec spec) : spec_(spec) {
    if (spec.in == 0 || spec.out == 0) throw ValidationError("dense: zero-sized layer");
    params_.push_back({"weight", Tensor({spec.out, spec.in + 1}),
                       Tensor({spec.out, spec.in + 1})});
  }

  LayerKind kind() const override { return spec_; }
  Tensor& weight() { return params_[0].value; }

  Tensor forward(const Tensor& x, bool /*training*/) override {
    const std::size_t batch = x.batch();
    if (batch == 0 || x.per_sample() != spec_.in)
      throw DimensionError("dense: expected " + std::to_string(spec_.in) +
                           " input features, got " + shape_string(x.shape()));
    capture_.reset();
    Tensor& h = capture_.h_bar;
    h = Tensor({spec_.in + 1, batch});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < spec_.in; ++k) h(k, b) = x[b * spec_.in + k];
      h(spec_.in, b) = 1.0;
    }
    capture_.batch = batch;
    capture_.spatial_count = 1;
    capture_.has_forward = true;
    input_shape_ = x.shape();
    return transpose(matmul(params_[0].value, h));
  }

  Tensor backward(const Tensor& dy) override {
    require_forward("dense");
    const std::size_t batch = capture_.batch;
    if (dy.batch() != batch || dy.per_sample() != spec_.out)
      throw DimensionError("dense: upstream gradient shape " + shape_string(dy.shape()));
    Tensor da = transpose(dy.reshaped({batch, spec_.out}));
    params_[0].grad = matmul_nt(da, capture_.h_bar);
    capture_.s = da;
    for (double& v : capture_.s.data()) v *= static_cast<double>(batch);
    capture_.has_backward = true;

    Tensor dh = matmul_tn(params_[0].value, da);  // (in+1) x batch
    Tensor dx(input_shape_);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < spec_.in; ++k) dx[b * spec_.in + k] = dh(k, b);
    return dx;
  }

 private:
  DenseSpec spec_;
  Shape input_shape_;
};

// 2-D convolution as a matrix product over im2col patches.
// Weight shape c_out x (c_in*k_h*k_w + 1), last column the bias.
class Conv2D final : public LayerBase<Conv2D> {
 public:
  explicit Conv2D(Conv2DSpec spec) : spec_(spec) {
    if (spec.c_in == 0 || spec.c_out == 0 || spec.k_h == 0 || spec.k_w == 0 ||
        spec.stride == 0)
      throw ValidationError("conv2d: zero-sized layer");
    const std::size_t cols = spec.c_in * spec.k_h * spec.k_w + 1;
    params_.push_back({"weight", Tensor({spec.c_out, cols}), Tensor({spec.c_out, cols})});
  }

  LayerKind kind() const override { return spec_; }

  Tensor forward(const Tensor& x, bool /*training*/) override {
    if (x.rank() != 4 || x.dim(1) != spec_.c_in)
      throw DimensionError("conv2d: expected batch x " + std::to_string(spec_.c_in) +
                           " x H x W input, got " + shape_string(x.shape()));
    geom_ = conv_geometry(x.shape(), spec_.k_h, spec_.k_w, spec_.stride, spec_.padding);
    capture_.reset();
    Tensor patches = im2col(x, spec_.k_h, spec_.k_w, spec_.stride, spec_.padding);
    const std::size_t patch = geom_.patch(), cols = patches.cols();
    Tensor& h = capture_.h_bar;
    h = Tensor({patch + 1, cols});
    std::copy(patches.data().begin(), patches.data().end(), h.data().begin());
    std::fill(h.data().begin() + patch * cols, h.data().end(), 1.0);
    capture_.batch = geom_.batch;
    capture_.spatial_count = geom_.spatial();
    capture_.has_forward = true;

    Tensor a = matmul(params_[0].value, h);  // c_out x (batch*T)
    const std::size_t T = geom_.spatial();
    Tensor y({geom_.batch, spec_.c_out, geom_.out_h, geom_.out_w});
    for (std::size_t co = 0; co < spec_.c_out; ++co)
      for (std::size_t b = 0; b < geom_.batch; ++b)
        std::copy_n(&a.data()[co * cols + b * T], T, &y.data()[(b * spec_.c_out + co) * T]);
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_forward("conv2d");
    const std::size_t T = geom_.spatial(), cols = geom_.batch * T;
    if (dy.size() != spec_.c_out * cols)
      throw DimensionError("conv2d: upstream gradient shape " + shape_string(dy.shape()));
    Tensor da({spec_.c_out, cols});
    for (std::size_t co = 0; co < spec_.c_out; ++co)
      for (std::size_t b = 0; b < geom_.batch; ++b)
        std::copy_n(&dy.data()[(b * spec_.c_out + co) * T], T, &da.data()[co * cols + b * T]);
    params_[0].grad = matmul_nt(da, capture_.h_bar);
    capture_.s = da;
    for (double& v : capture_.s.data()) v *= static_cast<double>(geom_.batch);
    capture_.has_backward = true;

    Tensor dh = matmul_tn(params_[0].value, da);
    Tensor dpatch({geom_.patch(), cols});
    std::copy_n(dh.data().begin(), geom_.patch() * cols, dpatch.data().begin());
    return col2im(dpatch, geom_);
  }

 private:
  Conv2DSpec spec_;
  ConvGeometry geom_{};
};

// Shared scale/shift bookkeeping for the two normalization layers.
inline std::vector<Parameter> scale_shift_parameters(std::size_t n) {
  return {{"scale", Tensor({n}, 1.0), Tensor({n})}, {"shift", Tensor({n}), Tensor({n})}};
}

// Per-channel normalization over batch and spatial positions.
// Input batch x C or batch x C x (spatial...).
class BatchNorm final : public LayerBase<BatchNorm> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit BatchNorm(BatchNormSpec spec)
      : spec_(spec),
        running_mean_(spec.channels, 0.0),
        running_var_(spec.channels, 1.0) {
    if (spec.channels == 0) throw ValidationError("batchnorm: zero channels");
    params_ = scale_shift_parameters(spec.channels);
  }

  LayerKind kind() const override { return spec_; }
  const std::vector<double>& running_mean() const { return running_mean_; }
  const std::vector<double>& running_var() const { return running_var_; }
  void set_running_stats(std::vector<double> mean, std::vector<double> var) {
    running_mean_ = std::move(mean);
    running_var_ = std::move(var);
  }

  Tensor forward(const Tensor& x, bool training) override {
    const std::size_t C = spec_.channels;
    if (x.rank() < 2 || x.dim(1) != C)
      throw DimensionError("batchnorm: expected batch x " + std::to_string(C) +
                           " x ..., got " + shape_string(x.shape()));
    const std::size_t batch = x.batch(), T = x.per_sample() / C, n = batch * T;
    capture_.reset();
    training_ = training;
    input_shape_ = x.shape();
    inv_std_.assign(C, 0.0);
    Tensor& xhat = capture_.h_bar;
    xhat = Tensor({C, n});
    Tensor y(x.shape());
    const auto& nu = params_[0].value;
    const auto& beta = params_[1].value;
    for (std::size_t c = 0; c < C; ++c) {
      double mean, var;
      if (training) {
        double s = 0.0;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < T; ++t) s += x[(b * C + c) * T + t];
        mean = s / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < T; ++t) {
            const double d = x[(b * C + c) * T + t] - mean;
            ss += d * d;
          }
        var = ss / static_cast<double>(n);
        const double unbiased = n > 1 ? ss / static_cast<double>(n - 1) : var;
        running_mean_[c] = (1 - kMomentum) * running_mean_[c] + kMomentum * mean;
        running_var_[c] = (1 - kMomentum) * running_var_[c] + kMomentum * unbiased;
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      inv_std_[c] = 1.0 / std::sqrt(var + kEps);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t idx = (b * C + c) * T + t;
          const double xh = (x[idx] - mean) * inv_std_[c];
          xhat(c, b * T + t) = xh;
          y[idx] = nu[c] * xh + beta[c];
        }
    }
    capture_.batch = batch;
    capture_.spatial_count = T;
    capture_.has_forward = true;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_forward("batchnorm");
    const std::size_t C = spec_.channels, batch = capture_.batch,
                      T = capture_.spatial_count, n = batch * T;
    if (dy.size() != C * n)
      throw DimensionError("batchnorm: upstream gradient shape " + shape_string(dy.shape()));
    const Tensor& xhat = capture_.h_bar;
    const auto& nu = params_[0].value;
    Tensor& gscale = params_[0].grad;
    Tensor& gshift = params_[1].grad;
    gscale.fill(0.0);
    gshift.fill(0.0);
    capture_.s = Tensor({C, n});
    Tensor dx(input_shape_);
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < T; ++t) {
          const double g = dy[(b * C + c) * T + t];
          const double xh = xhat(c, b * T + t);
          gscale[c] += g * xh;
          gshift[c] += g;
          capture_.s(c, b * T + t) = g * static_cast<double>(batch);
          sum_dxh += g * nu[c];
          sum_dxh_xh += g * nu[c] * xh;
        }
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t idx = (b * C + c) * T + t;
          const double dxh = dy[idx] * nu[c];
          if (training_) {
            const double xh = xhat(c, b * T + t);
            dx[idx] = inv_std_[c] / static_cast<double>(n) *
                      (static_cast<double>(n) * dxh - sum_dxh - xh * sum_dxh_xh);
          } else {
            dx[idx] = dxh * inv_std_[c];
          }
        }
    }
    capture_.has_backward = true;
    return dx;
  }

 private:
  BatchNormSpec spec_;
  std::vector<double> running_mean_, running_var_;
  std::vector<double> inv_std_;
  Shape input_shape_;
  bool training_ = false;
};

// Per-sample normalization over the flattened feature vector.
class LayerNorm final : public LayerBase<LayerNorm> {
 public:
  static constexpr double kEps = 1e-5;

  explicit LayerNorm(LayerNormSpec spec) : spec_(spec) {
    if (spec.features == 0) throw ValidationError("layernorm: zero features");
    params_ = scale_shift_parameters(spec.features);
  }

  LayerKind kind() const override { return spec_; }

  Tensor forward(const Tensor& x, bool /*training*/) override {
    const std::size_t F = spec_.features, batch = x.batch();
    if (batch == 0 || x.per_sample() != F)
      throw DimensionError("layernorm: expected " + std::to_string(F) + " features, got " +
                           shape_string(x.shape()));
    capture_.reset();
    input_shape_ = x.shape();
    inv_std_.assign(batch, 0.0);
    Tensor& xhat = capture_.h_bar;
    xhat = Tensor({F, batch});
    Tensor y(x.shape());
    const auto& nu = params_[0].value;
    const auto& beta = params_[1].value;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* row = &x.data()[b * F];
      double s = 0.0;
      for (std::size_t f = 0; f < F; ++f) s += row[f];
      const double mean = s / static_cast<double>(F);
      double ss = 0.0;
      for (std::size_t f = 0; f < F; ++f) ss += (row[f] - mean) * (row[f] - mean);
      inv_std_[b] = 1.0 / std::sqrt(ss / static_cast<double>(F) + kEps);
      for (std::size_t f = 0; f < F; ++f) {
        const double xh = (row[f] - mean) * inv_std_[b];
        xhat(f, b) = xh;
        y[b * F + f] = nu[f] * xh + beta[f];
      }
    }
    capture_.batch = batch;
    capture_.spatial_count = 1;
    capture_.has_forward = true;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_forward("layernorm");
    const std::size_t F = spec_.features, batch = capture_.batch;
    if (dy.size() != F * batch)
      throw DimensionError("layernorm: upstream gradient shape " + shape_string(dy.shape()));
    const Tensor& xhat = capture_.h_bar;
    const auto& nu = params_[0].value;
    Tensor& gscale = params_[0].grad;
    Tensor& gshift = params_[1].grad;
    gscale.fill(0.0);
    gshift.fill(0.0);
    capture_.s = Tensor({F, batch});
    Tensor dx(input_shape_);
    const double nf = static_cast<double>(F);
    for (std::size_t b = 0; b < batch; ++b) {
      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (std::size_t f = 0; f < F; ++f) {
        const double g = dy[b * F + f];
        const double xh = xhat(f, b);
        gscale[f] += g * xh;
        gshift[f] += g;
        capture_.s(f, b) = g * static_cast<double>(batch);
        sum_dxh += g * nu[f];
        sum_dxh_xh += g * nu[f] * xh;
      }
      for (std::size_t f = 0; f < F; ++f) {
        const double dxh = dy[b * F + f] * nu[f];
        dx[b * F + f] = inv_std_[b] / nf * (nf * dxh - sum_dxh - xhat(f, b) * sum_dxh_xh);
      }
    }
    capture_.has_backward = true;
    return dx;
  }

 private:
  LayerNormSpec spec_;
  std::vector<double> inv_std_;
  Shape input_shape_;
};

// Elementwise ReLU / Tanh. Carries no parameters; its capture records the
// augmented input so the identity-factor fallback knows its width.
class Activation final : public LayerBase<Activation> {
 public:
  explicit Activation(ActivationSpec spec) : spec_(spec) {}

  LayerKind kind() const override { return spec_; }

  Tensor forward(const Tensor& x, bool /*training*/) override {
    const std::size_t batch = x.batch(), n = x.per_sample();
    capture_.reset();
    input_ = x;
    Tensor& h = capture_.h_bar;
    h = Tensor({n + 1, batch});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < n; ++k) h(k, b) = x[b * n + k];
      h(n, b) = 1.0;
    }
    capture_.batch = batch;
    capture_.spatial_count = 1;
    capture_.has_forward = true;
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
      y[i] = spec_.fn == ActivationFn::ReLU ? std::max(0.0, x[i]) : std::tanh(x[i]);
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_forward("activation");
    if (dy.size() != input_.size())
      throw DimensionError("activation: upstream gradient shape " + shape_string(dy.shape()));
    const std::size_t batch = capture_.batch, n = input_.per_sample();
    Tensor dx(input_.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double a = input_[i];
      const double d = spec_.fn == ActivationFn::ReLU ? (a > 0.0 ? 1.0 : 0.0)
                                                      : 1.0 - std::tanh(a) * std::tanh(a);
      dx[i] = dy[i] * d;
    }
    capture_.s = Tensor({n, batch});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < n; ++k)
        capture_.s(k, b) = dy[b * n + k] * static_cast<double>(batch);
    capture_.has_backward = true;
    return dx;
  }

 private:
  ActivationSpec spec_;
  Tensor input_;
};

// Builds a layer with PyTorch-style default initialization:
// dense/conv weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
// normalization scale 1 and shift 0.
inline std::unique_ptr<Layer> make_layer(const LayerKind& kind, SeededRng& rng) {
  return std::visit(
      [&](const auto& spec) -> std::unique_ptr<Layer> {
        using S = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<S, DenseSpec>) {
          auto layer = std::make_unique<Dense>(spec);
          const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in));
          for (double& v : layer->parameters()[0].value.data()) v = rng.uniform(-bound, bound);
          return layer;
        } else if constexpr (std::is_same_v<S, Conv2DSpec>) {
          auto layer = std::make_unique<Conv2D>(spec);
          const double bound =
              1.0 / std::sqrt(static_cast<double>(spec.c_in * spec.k_h * spec.k_w));
          for (double& v : layer->parameters()[0].value.data()) v = rng.uniform(-bound, bound);
          return layer;
        } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
          return std::make_unique<BatchNorm>(spec);
        } else if constexpr (std::is_same_v<S, LayerNormSpec>) {
          return std::make_unique<LayerNorm>(spec);
        } else {
          return std::make_unique<Activation>(spec);
        }
      },
      kind);
}

}  // namespace kronfisher::nn
