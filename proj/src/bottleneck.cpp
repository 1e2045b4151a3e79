#include "pcnet/bottleneck.hpp"

#include <cmath>
#include <string>

#include "pcnet/numeric.hpp"
#include "pcnet/rng.hpp"

namespace pcnet {

std::vector<double> project(const Bottleneck& b, std::span<const double> h) {
  if (h.size() != b.input_dim)
    throw Error("shape mismatch: bottleneck expects " + std::to_string(b.input_dim) + " inputs, got " +
                std::to_string(h.size()));
  if (!all_finite(h)) throw Error("non-finite hidden state");
  std::vector<double> mid(b.hidden_dim);
  for (std::size_t r = 0; r < b.hidden_dim; ++r) {
    const double* row = b.w1.data() + r * b.input_dim;
    double acc = b.b1[r];
    for (std::size_t c = 0; c < b.input_dim; ++c) acc += row[c] * h[c];
    mid[r] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> z(b.output_dim);
  for (std::size_t r = 0; r < b.output_dim; ++r) {
    const double* row = b.w2.data() + r * b.hidden_dim;
    double acc = b.b2[r];
    for (std::size_t c = 0; c < b.hidden_dim; ++c) acc += row[c] * mid[c];
    z[r] = acc;
  }
  return z;
}

Bottleneck init_bottleneck(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                           std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) throw Error("bottleneck dimensions must be >= 1");
  if (hidden_dim < output_dim)
    throw Error("bottleneck hidden width " + std::to_string(hidden_dim) + " is below output width " +
                std::to_string(output_dim));
  Rng rng(seed);
  Bottleneck b;
  b.input_dim = input_dim;
  b.hidden_dim = hidden_dim;
  b.output_dim = output_dim;
  const double a1 = std::sqrt(6.0 / static_cast<double>(input_dim + hidden_dim));
  const double a2 = std::sqrt(6.0 / static_cast<double>(hidden_dim + output_dim));
  b.w1.resize(hidden_dim * input_dim);
  for (double& w : b.w1) w = rng.uniform(-a1, a1);
  b.w2.resize(output_dim * hidden_dim);
  for (double& w : b.w2) w = rng.uniform(-a2, a2);
  b.b1.assign(hidden_dim, 0.0);
  b.b2.assign(output_dim, 0.0);
  return b;
}

void check_bottleneck(const Bottleneck& b) {
  if (b.w1.size() != b.hidden_dim * b.input_dim || b.b1.size() != b.hidden_dim ||
      b.w2.size() != b.output_dim * b.hidden_dim || b.b2.size() != b.output_dim)
    throw Error("bottleneck parameter shapes are inconsistent");
  if (b.hidden_dim < b.output_dim) throw Error("bottleneck hidden width is below output width");
  if (!all_finite(b.w1) || !all_finite(b.b1) || !all_finite(b.w2) || !all_finite(b.b2))
    throw Error("bottleneck has non-finite parameters");
}

}  // namespace pcnet
