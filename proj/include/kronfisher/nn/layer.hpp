#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "kronfisher/tensor.hpp"

namespace kronfisher::nn {

struct DenseSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const DenseSpec&, const DenseSpec&) = default;
};

struct Conv2DSpec {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t k_h = 0;
  std::size_t k_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  friend bool operator==(const Conv2DSpec&, const Conv2DSpec&) = default;
};

struct BatchNormSpec {
  std::size_t channels = 0;
  friend bool operator==(const BatchNormSpec&, const BatchNormSpec&) = default;
};

struct LayerNormSpec {
  std::size_t features = 0;
  friend bool operator==(const LayerNormSpec&, const LayerNormSpec&) = default;
};

enum class ActivationFn { ReLU, Tanh };

struct ActivationSpec {
  ActivationFn fn = ActivationFn::ReLU;
  friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;
};

using LayerKind =
    std::variant<DenseSpec, Conv2DSpec, BatchNormSpec, LayerNormSpec, ActivationSpec>;

inline std::string kind_name(const LayerKind& kind) {
  static constexpr const char* names[] = {"dense", "conv2d", "batchnorm", "layernorm",
                                          "activation"};
  return names[kind.index()];
}

inline bool is_norm(const LayerKind& kind) {
  return std::holds_alternative<BatchNormSpec>(kind) ||
         std::holds_alternative<LayerNormSpec>(kind);
}

inline bool has_parameters(const LayerKind& kind) {
  return !std::holds_alternative<ActivationSpec>(kind);
}

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Per-batch quantities the curvature machinery reads after forward/backward.
//
// Layout is feature-major: one column per sample (dense), or per
// (sample, spatial position) pair (conv, batchnorm). `h_bar` is the layer input
// augmented with a trailing row of ones for layers with a bias; for norm layers
// it holds the normalized activations x_hat. `s` holds the per-sample gradient
// of the loss with respect to the layer's pre-activation output, i.e. the
// batch-mean gradient multiplied by the batch size.
struct CaptureBuffer {
  Tensor h_bar;
  Tensor s;
  std::size_t spatial_count = 1;
  std::size_t batch = 0;
  bool has_forward = false;
  bool has_backward = false;

  void reset() {
    s = Tensor();
    has_forward = false;
    has_backward = false;
  }
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;

  // `training` selects batch statistics for BatchNorm; captures are recorded
  // in both modes so probes can differentiate a network in eval mode.
  virtual Tensor forward(const Tensor& x, bool training) = 0;

  // `dy` is the gradient of the batch-mean loss with respect to this layer's
  // output. Fills parameter gradients and the `s` capture; returns dL/dx.
  virtual Tensor backward(const Tensor& dy) = 0;

  virtual std::unique_ptr<Layer> clone() const = 0;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const CaptureBuffer& capture() const { return capture_; }

 protected:
  void require_forward(const char* who) const {
    if (!capture_.has_forward)
      throw StateError(std::string(who) + ": backward called without a forward pass");
  }

  std::vector<Parameter> params_;
  CaptureBuffer capture_;
};

template <class Derived>
class LayerBase : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Derived>(static_cast<const Derived&>(*this));
  }
};

}  // namespace kronfisher::nn
