#include "salfau/nn.hpp"

#include <cmath>
#include <memory>

#include "conv_kernels.hpp"
#include "salfau/errors.hpp"
#include "salfau/parallel.hpp"
#include "storage_util.hpp"

namespace salfau {

using detail::dispatch;
using detail::vec;

namespace {

constexpr std::size_t kPixelChunk = 256;

std::size_t chunk_count(std::size_t plane) { return (plane + kPixelChunk - 1) / kPixelChunk; }

template <class T>
std::vector<T> conv_forward(const T* x, std::size_t N, std::size_t C, std::size_t H, std::size_t W,
                            const T* weight, const T* bias, std::size_t O, std::size_t k) {
  const std::size_t plane = H * W;
  const std::size_t K = C * k * k;
  const std::size_t chunks = chunk_count(plane);
  std::vector<T> out(N * O * plane);
  parallel_for(N * chunks, [&](std::size_t task) {
    const std::size_t n = task / chunks;
    const std::size_t p0 = (task % chunks) * kPixelChunk;
    const std::size_t count = std::min(kPixelChunk, plane - p0);
    const T* xb = x + n * C * plane;
    T* ob = out.data() + n * O * plane + p0;
    if (k == 1) {
      detail::gemm_bias(O, count, K, weight, K, xb + p0, plane, bias, ob, plane);
    } else {
      thread_local std::vector<T> col;
      col.resize(K * count);
      detail::im2col_chunk(xb, C, H, W, k, p0, count, col.data());
      detail::gemm_bias(O, count, K, weight, K, col.data(), count, bias, ob, plane);
    }
  });
  return out;
}

// dL/dW[o, (c,u,v)] = sum_n sum_p g[n,o,p] * col_n[(c,u,v), p], accumulated chunk by chunk.
template <class T>
std::vector<T> conv_weight_grad(const T* x, const T* g, std::size_t N, std::size_t C, std::size_t H,
                                std::size_t W, std::size_t O, std::size_t k) {
  const std::size_t plane = H * W;
  const std::size_t K = C * k * k;
  std::vector<T> dw(O * K, T(0));
  std::vector<T> col;
  for (std::size_t n = 0; n < N; ++n) {
    const T* xb = x + n * C * plane;
    for (std::size_t p0 = 0; p0 < plane; p0 += kPixelChunk) {
      const std::size_t count = std::min(kPixelChunk, plane - p0);
      const T* rows = nullptr;
      std::size_t ld = 0;
      if (k == 1) {
        rows = xb + p0;
        ld = plane;
      } else {
        col.resize(K * count);
        detail::im2col_chunk(xb, C, H, W, k, p0, count, col.data());
        rows = col.data();
        ld = count;
      }
      parallel_for(O, [&](std::size_t o) {
        const T* grow = g + (n * O + o) * plane + p0;
        T* drow = dw.data() + o * K;
        for (std::size_t kk = 0; kk < K; ++kk) drow[kk] += detail::dot_lanes(grow, rows + kk * ld, count);
      });
    }
  }
  return dw;
}

}  // namespace

// ---- Conv2d ----

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t k, Precision precision)
    : in_channels(in), out_channels(out), kernel(k) {
  if (in == 0 || out == 0) throw ShapeError("Conv2d: channel counts must be positive");
  if (k != 1 && k != 3) throw ShapeError("Conv2d: kernel must be 1 or 3, got " + std::to_string(k));
  weight = Tensor::zeros({out, in, k, k}, precision);
  weight.set_requires_grad(true);
  bias = Tensor::zeros({out}, precision);
  bias.set_requires_grad(true);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_rank4(x, "conv2d");
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0) {
    throw ShapeError("conv2d: weight must be [out,in,k,k] with odd k, got " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != C) {
    throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, layer expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != O) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(O) + "], got " +
                     shape_to_string(bias.shape()));
  }
  detail::require_same_precision(x, weight, "conv2d");
  detail::require_same_precision(x, bias, "conv2d");

  Storage out = dispatch(x.precision(), [&](auto tag) -> Storage {
    using T = decltype(tag);
    return conv_forward<T>(x.data<T>().data(), N, C, H, W, weight.data<T>().data(),
                           bias.data<T>().data(), O, k);
  });

  return make_op_result(
      {N, O, H, W}, std::move(out), "conv2d", {x, weight, bias},
      [x, weight, N, C, H, W, O, k](const Storage& g, const std::vector<bool>& needs) {
        std::vector<std::optional<Storage>> grads(3);
        dispatch(x.precision(), [&](auto tag) {
          using T = decltype(tag);
          const T* go = vec<T>(g).data();
          const std::size_t plane = H * W;
          if (needs[0]) {
            // Stride-1 same-padded conv: the input gradient is a conv of g with
            // the spatially flipped, channel-transposed kernel.
            auto w = weight.data<T>();
            std::vector<T> flipped(C * O * k * k);
            for (std::size_t o = 0; o < O; ++o)
              for (std::size_t c = 0; c < C; ++c)
                for (std::size_t u = 0; u < k; ++u)
                  for (std::size_t v = 0; v < k; ++v)
                    flipped[((c * O + o) * k + (k - 1 - u)) * k + (k - 1 - v)] =
                        w[((o * C + c) * k + u) * k + v];
            grads[0] = conv_forward<T>(go, N, O, H, W, flipped.data(), nullptr, C, k);
          }
          if (needs[1]) {
            grads[1] = conv_weight_grad<T>(x.data<T>().data(), go, N, C, H, W, O, k);
          }
          if (needs[2]) {
            std::vector<T> db(O);
            for (std::size_t o = 0; o < O; ++o) {
              double acc = 0.0;
              for (std::size_t n = 0; n < N; ++n) {
                const T* row = go + (n * O + o) * plane;
                for (std::size_t p = 0; p < plane; ++p) acc += row[p];
              }
              db[o] = static_cast<T>(acc);
            }
            grads[2] = std::move(db);
          }
        });
        return grads;
      });
}

Tensor conv2d(const Conv2d& layer, const Tensor& x) {
  detail::require_rank4(x, "conv2d");
  if (x.dim(1) != layer.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, layer expects " +
                     std::to_string(layer.in_channels));
  }
  return conv2d(x, layer.weight, layer.bias);
}

void init_he(Conv2d& layer, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(layer.in_channels * layer.kernel * layer.kernel);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  dispatch(layer.weight.precision(), [&](auto tag) {
    using T = decltype(tag);
    for (T& w : layer.weight.mutable_data<T>()) w = static_cast<T>(normal(rng));
    for (T& b : layer.bias.mutable_data<T>()) b = T(0);
  });
}

// ---- BatchNorm2d ----

BatchNorm2d::BatchNorm2d(std::size_t c, Precision precision) : channels(c) {
  if (c == 0) throw ShapeError("BatchNorm2d: channel count must be positive");
  gamma = Tensor::full({c}, 1.0, precision);
  gamma.set_requires_grad(true);
  beta = Tensor::zeros({c}, precision);
  beta.set_requires_grad(true);
  running_mean = Tensor::zeros({c}, precision);
  running_var = Tensor::full({c}, 1.0, precision);
}

Tensor batchnorm2d(BatchNorm2d& layer, const Tensor& x, Mode mode) {
  detail::require_rank4(x, "batchnorm2d");
  if (x.dim(1) != layer.channels) {
    throw ShapeError("batchnorm2d: input has " + std::to_string(x.dim(1)) +
                     " channels, layer expects " + std::to_string(layer.channels));
  }
  detail::require_same_precision(x, layer.gamma, "batchnorm2d");
  const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t M = N * plane;
  const bool train = mode == Mode::Train;

  auto mean = std::make_shared<std::vector<double>>(C);
  auto inv_std = std::make_shared<std::vector<double>>(C);

  Storage out = dispatch(x.precision(), [&](auto tag) -> Storage {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto gamma = layer.gamma.data<T>();
    auto beta = layer.beta.data<T>();
    std::vector<T> r(in.size());
    if (train) {
      auto rm = layer.running_mean.mutable_data<T>();
      auto rv = layer.running_var.mutable_data<T>();
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = in.data() + (n * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
        }
        const double mu = s / static_cast<double>(M);
        double ss = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = in.data() + (n * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double d = p[i] - mu;
            ss += d * d;
          }
        }
        const double var = ss / static_cast<double>(M);
        (*mean)[c] = mu;
        (*inv_std)[c] = 1.0 / std::sqrt(var + layer.eps);
        const double unbiased = M > 1 ? ss / static_cast<double>(M - 1) : var;
        rm[c] = static_cast<T>((1.0 - layer.momentum) * rm[c] + layer.momentum * mu);
        rv[c] = static_cast<T>((1.0 - layer.momentum) * rv[c] + layer.momentum * unbiased);
      }
    } else {
      auto rm = layer.running_mean.data<T>();
      auto rv = layer.running_var.data<T>();
      for (std::size_t c = 0; c < C; ++c) {
        (*mean)[c] = rm[c];
        (*inv_std)[c] = 1.0 / std::sqrt(static_cast<double>(rv[c]) + layer.eps);
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const T scale_c = static_cast<T>(gamma[c] * (*inv_std)[c]);
        const T mean_c = static_cast<T>((*mean)[c]);
        const T* p = in.data() + (n * C + c) * plane;
        T* q = r.data() + (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mean_c) * scale_c + beta[c];
      }
    }
    return r;
  });

  const Tensor gamma = layer.gamma;
  return make_op_result(
      x.shape(), std::move(out), "batchnorm2d", {x, layer.gamma, layer.beta},
      [x, gamma, mean, inv_std, train, N, C, plane, M](const Storage& g,
                                                         const std::vector<bool>& needs) {
        std::vector<std::optional<Storage>> grads(3);
        dispatch(x.precision(), [&](auto tag) {
          using T = decltype(tag);
          const auto& go = vec<T>(g);
          auto in = x.data<T>();
          auto gm = gamma.data<T>();
          std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * C + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (in[base + i] - (*mean)[c]) * (*inv_std)[c];
                sum_g[c] += go[base + i];
                sum_gx[c] += go[base + i] * xhat;
              }
            }
          }
          if (needs[0]) {
            std::vector<T> dx(in.size());
            for (std::size_t c = 0; c < C; ++c) {
              const double istd = (*inv_std)[c];
              const double gam = gm[c];
              for (std::size_t n = 0; n < N; ++n) {
                const std::size_t base = (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                  if (train) {
                    const double xhat = (in[base + i] - (*mean)[c]) * istd;
                    const double md = static_cast<double>(M);
                    dx[base + i] = static_cast<T>(gam * istd / md *
                                                  (md * go[base + i] - sum_g[c] - xhat * sum_gx[c]));
                  } else {
                    dx[base + i] = static_cast<T>(go[base + i] * gam * istd);
                  }
                }
              }
            }
            grads[0] = std::move(dx);
          }
          if (needs[1]) grads[1] = std::vector<T>(sum_gx.begin(), sum_gx.end());
          if (needs[2]) grads[2] = std::vector<T>(sum_g.begin(), sum_g.end());
        });
        return grads;
      });
}

// ---- pooling and resampling ----

Tensor maxpool2d(const Tensor& x) {
  detail::require_rank4(x, "maxpool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("maxpool2d: spatial dims must be even, got " + shape_to_string(x.shape()));
  }
  const std::size_t OH = H / 2, OW = W / 2;
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(N * C * OH * OW);

  Storage out = dispatch(x.precision(), [&](auto tag) -> Storage {
    using T = decltype(tag);
    auto in = x.data<T>();
    std::vector<T> r(N * C * OH * OW);
    parallel_for(N * C, [&](std::size_t nc) {
      const T* p = in.data() + nc * H * W;
      for (std::size_t i = 0; i < OH; ++i) {
        for (std::size_t j = 0; j < OW; ++j) {
          std::size_t best = (2 * i) * W + 2 * j;
          const std::size_t candidates[3] = {best + 1, best + W, best + W + 1};
          for (std::size_t c : candidates) {
            if (p[c] > p[best]) best = c;
          }
          const std::size_t o = nc * OH * OW + i * OW + j;
          r[o] = p[best];
          (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
      }
    });
    return r;
  });

  return make_op_result({N, C, OH, OW}, std::move(out), "maxpool2d", {x},
                        [argmax, N, C, H, W, OH, OW](const Storage& g, const std::vector<bool>&) {
                          std::vector<std::optional<Storage>> grads(1);
                          grads[0] = std::visit(
                              [&](const auto& go) -> Storage {
                                using T = typename std::decay_t<decltype(go)>::value_type;
                                std::vector<T> dx(N * C * H * W, T(0));
                                for (std::size_t nc = 0; nc < N * C; ++nc) {
                                  for (std::size_t q = 0; q < OH * OW; ++q) {
                                    const std::size_t o = nc * OH * OW + q;
                                    dx[nc * H * W + (*argmax)[o]] += go[o];
                                  }
                                }
                                return dx;
                              },
                              g);
                          return grads;
                        });
}

namespace {

struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps axis_taps(std::size_t in, std::size_t out) {
  AxisTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps.lo[d] = lo;
    taps.hi[d] = std::min(lo + 1, in - 1);
    taps.frac[d] = src - static_cast<double>(lo);
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  detail::require_rank4(x, "upsample_bilinear");
  if (out_h == 0 || out_w == 0) throw ShapeError("upsample_bilinear: output size must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto ty = std::make_shared<AxisTaps>(axis_taps(H, out_h));
  auto tx = std::make_shared<AxisTaps>(axis_taps(W, out_w));

  Storage out = dispatch(x.precision(), [&](auto tag) -> Storage {
    using T = decltype(tag);
    auto in = x.data<T>();
    std::vector<T> r(N * C * out_h * out_w);
    parallel_for(N * C, [&](std::size_t nc) {
      const T* p = in.data() + nc * H * W;
      T* q = r.data() + nc * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const T* r0 = p + ty->lo[i] * W;
        const T* r1 = p + ty->hi[i] * W;
        const T fy = static_cast<T>(ty->frac[i]);
        for (std::size_t j = 0; j < out_w; ++j) {
          const T fx = static_cast<T>(tx->frac[j]);
          const T top = std::lerp(r0[tx->lo[j]], r0[tx->hi[j]], fx);
          const T bottom = std::lerp(r1[tx->lo[j]], r1[tx->hi[j]], fx);
          q[i * out_w + j] = std::lerp(top, bottom, fy);
        }
      }
    });
    return r;
  });

  return make_op_result(
      {N, C, out_h, out_w}, std::move(out), "upsample_bilinear", {x},
      [ty, tx, N, C, H, W, out_h, out_w](const Storage& g, const std::vector<bool>&) {
        std::vector<std::optional<Storage>> grads(1);
        grads[0] = std::visit(
            [&](const auto& go) -> Storage {
              using T = typename std::decay_t<decltype(go)>::value_type;
              std::vector<T> dx(N * C * H * W, T(0));
              parallel_for(N * C, [&](std::size_t nc) {
                T* d = dx.data() + nc * H * W;
                const T* q = go.data() + nc * out_h * out_w;
                for (std::size_t i = 0; i < out_h; ++i) {
                  const T fy = static_cast<T>(ty->frac[i]);
                  for (std::size_t j = 0; j < out_w; ++j) {
                    const T fx = static_cast<T>(tx->frac[j]);
                    const T v = q[i * out_w + j];
                    d[ty->lo[i] * W + tx->lo[j]] += v * (T(1) - fy) * (T(1) - fx);
                    d[ty->lo[i] * W + tx->hi[j]] += v * (T(1) - fy) * fx;
                    d[ty->hi[i] * W + tx->lo[j]] += v * fy * (T(1) - fx);
                    d[ty->hi[i] * W + tx->hi[j]] += v * fy * fx;
                  }
                }
              });
              return dx;
            },
            g);
        return grads;
      });
}

}  // namespace salfau
