#pragma once

#include <cstddef>
#include <random>

#include "salfau/tensor.hpp"

namespace salfau {

enum class Mode { Train, Eval };

// Stride-1 convolution with "same" zero padding (k / 2).
struct Conv2d {
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         Precision precision = Precision::Single);

  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
};

struct BatchNorm2d {
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, Precision precision = Precision::Single);

  std::size_t channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  Tensor gamma;         // [C], starts at 1
  Tensor beta;          // [C], starts at 0
  Tensor running_mean;  // [C], starts at 0
  Tensor running_var;   // [C], starts at 1
};

// out[n,o,i,j] = bias[o] + sum_{c,u,v} weight[o,c,u,v] * x_pad[n,c,i+u,j+v].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor conv2d(const Conv2d& layer, const Tensor& x);

// Train mode normalizes with batch statistics over N,H,W and updates the
// running statistics; eval mode uses the running statistics and mutates nothing.
Tensor batchnorm2d(BatchNorm2d& layer, const Tensor& x, Mode mode);

// 2x2 window, stride 2. Ties resolve to the first element in row-major order.
Tensor maxpool2d(const Tensor& x);

// Bilinear resampling with half-pixel centers:
// src = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1].
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

// weight ~ Normal(0, sqrt(2 / (in * k * k))), bias = 0.
void init_he(Conv2d& layer, std::mt19937_64& rng);

}  // namespace salfau
