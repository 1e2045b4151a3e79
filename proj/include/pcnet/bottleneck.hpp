#ifndef PCNET_BOTTLENECK_HPP
#define PCNET_BOTTLENECK_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pcnet {

/// Two-layer rectified projection z = W2 * max(0, W1 * h + b1) + b2.
/// Matrices are row-major; the output layer is not rectified.
struct Bottleneck {
  std::size_t input_dim = 0;   // D_LLM
  std::size_t hidden_dim = 0;  // hidden_mid
  std::size_t output_dim = 0;  // D_PC
  std::vector<double> w1;      // hidden_dim x input_dim
  std::vector<double> b1;
  std::vector<double> w2;      // output_dim x hidden_dim
  std::vector<double> b2;
};

std::vector<double> project(const Bottleneck& b, std::span<const double> h);

/// Glorot-uniform weights, zero biases. hidden_dim must be >= output_dim.
Bottleneck init_bottleneck(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                           std::uint64_t seed);

/// Throws if shapes are inconsistent or any entry is non-finite.
void check_bottleneck(const Bottleneck& b);

}  // namespace pcnet

#endif  // PCNET_BOTTLENECK_HPP
