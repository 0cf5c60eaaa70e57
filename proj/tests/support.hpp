#pragma once

// Shared helpers for the unit tests: random tensors and independent
// reference implementations used as oracles.

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "salfau/salfaunet.hpp"
#include "salfau/tensor.hpp"

namespace salfau::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0, Precision precision = Precision::Double) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from_values(shape, v, precision);
}

inline Tensor param(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = random_tensor(shape, rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

// sum(f * R) for a fixed random R: a scalar whose gradient exercises every
// output element with a distinct weight.
inline Tensor project(const Tensor& f, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(f, random_tensor(f.shape(), rng, -1.0, 1.0, f.precision())));
}

// Sum of independent projections of all five output maps.
inline Tensor project_outputs(const SaliencyOutputs& out) {
  Tensor total = project(out.fused, 50);
  for (std::size_t m = 0; m < out.side.size(); ++m) total = add(total, project(out.side[m], 51 + m));
  return total;
}

// Fresh networks have zero biases, zero shifts and unit running statistics;
// a dead neighbourhood then puts a pre-activation exactly on the ReLU kink.
// Gradient checks run from a generic point instead.
inline void move_to_generic_point(SalFAUNet& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> shift(-0.1, 0.1), var(0.5, 1.5);
  for (auto& [name, t] : net.state()) {
    const bool is_var = name.ends_with("running_var");
    if (!is_var && !name.ends_with(".bias") && !name.ends_with(".beta") && !name.ends_with("running_mean")) continue;
    auto draw = [&] { return is_var ? var(rng) : shift(rng); };
    if (t.precision() == Precision::Double) {
      for (double& x : t.mutable_data<double>()) x = draw();
    } else {
      for (float& x : t.mutable_data<float>()) x = static_cast<float>(draw());
    }
  }
}

// Conv biases that are immediately batch-normalized (every conv except the
// side and fusion heads).
inline bool feeds_batch_norm(const std::string& name) {
  return name.ends_with(".bias") && name.find("conv") != std::string::npos && !name.starts_with("side") &&
         !name.starts_with("fuse");
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Direct-loop convolution, stride 1, zero padding k / 2.
inline std::vector<double> reference_conv(const std::vector<double>& x, std::size_t N, std::size_t C,
                                          std::size_t H, std::size_t W,
                                          const std::vector<double>& w, const std::vector<double>& b,
                                          std::size_t O, std::size_t k) {
  const long pad = static_cast<long>(k / 2);
  std::vector<double> out(N * O * H * W);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long si = static_cast<long>(i + u) - pad;
                const long sj = static_cast<long>(j + v) - pad;
                if (si < 0 || sj < 0 || si >= static_cast<long>(H) || sj >= static_cast<long>(W)) continue;
                acc += w[((o * C + c) * k + u) * k + v] * x[((n * C + c) * H + si) * W + sj];
              }
          out[((n * O + o) * H + i) * W + j] = acc;
        }
  return out;
}

}  // namespace salfau::testing
