#pragma once

#include <gtest/gtest.h>

#include <complex>
#include <filesystem>
#include <numbers>
#include <string>

#include "../common/oracles.hpp"
#include "kronfisher/kronfisher.hpp"

namespace kf = kronfisher;
namespace nn = kronfisher::nn;

namespace testutil {

inline kf::Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  kf::SeededRng rng(seed);
  return kf::gaussian_fill(rng, {r, c}, 0.0, 1.0);
}

inline kf::Tensor random_symmetric(std::size_t n, std::uint64_t seed) {
  kf::Tensor a = random_matrix(n, n, seed);
  kf::Tensor s({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

inline kf::Tensor naive_matmul(const kf::Tensor& a, const kf::Tensor& b) {
  kf::Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

inline std::string data_path(const std::string& rel) {
  return std::string(KRONFISHER_DATA_DIR) + "/" + rel;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("kronfisher_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nn::Network build_net(const std::vector<nn::LayerKind>& kinds, std::uint64_t seed = 1) {
  kf::SeededRng rng(seed);
  return nn::Network::build(kinds, rng);
}

// Loss of a network on a fixed batch, for finite differences.
inline double batch_loss(nn::Network& net, const kf::Tensor& x, const std::vector<int>& y) {
  return nn::nll_softmax_loss(net.forward(x, true), y).loss;
}

}  // namespace testutil
