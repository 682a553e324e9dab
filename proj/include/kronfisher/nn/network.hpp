#pragma once

#include <memory>
#include <span>
#include <vector>

#include "kronfisher/nn/layers.hpp"

namespace kronfisher::nn {

// Handle onto one parameter tensor; `layer` is the stable per-layer id.
struct ParamRef {
  std::size_t layer;
  std::size_t index;
  Parameter* param;
};

// Ordered stack of layers. Copying deep-clones every layer, so replicas share
// nothing mutable.
class Network {
 public:
  Network() = default;

  Network(const Network& other) { *this = other; }
  Network& operator=(const Network& other) {
    if (this == &other) return *this;
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  static Network build(std::span<const LayerKind> kinds, SeededRng& rng) {
    Network net;
    for (const auto& k : kinds) net.add(make_layer(k, rng));
    return net;
  }

  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  std::vector<LayerKind> kinds() const {
    std::vector<LayerKind> out;
    for (const auto& l : layers_) out.push_back(l->kind());
    return out;
  }

  Tensor forward(const Tensor& x, bool training) {
    if (layers_.empty()) throw StateError("forward on an empty network");
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, training);
    require_finite(h, "network output");
    return h.reshaped({h.batch(), h.per_sample()});
  }

  // Back-propagates the batch-mean loss gradient; parameter gradients and
  // per-layer `s` captures are overwritten.
  void backward(const Tensor& dlogits) {
    if (layers_.empty()) throw StateError("backward on an empty network");
    Tensor g = dlogits;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& ps = layers_[i]->parameters();
      for (std::size_t j = 0; j < ps.size(); ++j) refs.push_back({i, j, &ps[j]});
    }
    return refs;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
      for (const auto& p : l->parameters()) n += p.value.size();
    return n;
  }

  // Flattened views in registry order (layer, then parameter index).
  std::vector<double> flat_parameters() const { return flatten(&Parameter::value); }
  std::vector<double> flat_gradients() const { return flatten(&Parameter::grad); }

  void set_flat_parameters(std::span<const double> flat) {
    if (flat.size() != parameter_count())
      throw DimensionError("set_flat_parameters: wrong length");
    std::size_t off = 0;
    for (auto& l : layers_)
      for (auto& p : l->parameters()) {
        std::copy_n(flat.begin() + off, p.value.size(), p.value.data().begin());
        off += p.value.size();
      }
  }

 private:
  std::vector<double> flatten(Tensor Parameter::*field) const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers_)
      for (const auto& p : l->parameters()) {
        const auto d = (p.*field).data();
        out.insert(out.end(), d.begin(), d.end());
      }
    return out;
  }

  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace kronfisher::nn
