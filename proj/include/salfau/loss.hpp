#pragma once

#include <array>
#include <span>

#include "salfau/salfaunet.hpp"
#include "salfau/tensor.hpp"

namespace salfau {

inline constexpr double kProbClamp = 1e-7;

struct LossWeights {
  std::array<double, kDecoderLevels> side{1.0, 1.0, 1.0, 1.0};
  double fuse = 1.0;

  // Throws ConfigError on a negative or non-finite weight.
  void validate() const;
};

// -sum(G log P + (1 - G) log(1 - P)) over every pixel of the batch, with P
// clamped to [1e-7, 1 - 1e-7]. The gradient is zero where the clamp is active.
Tensor bce_sum(const Tensor& P, const Tensor& G);

// sum_i weights[i] * terms[i] for [1]-shaped terms, accumulated in extended
// precision so that repeated terms sum exactly.
Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights);

Tensor total_loss(const SaliencyOutputs& outputs, const Tensor& G, const LossWeights& weights = {});

}  // namespace salfau
