#include "salfau/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "salfau/errors.hpp"
#include "storage_util.hpp"

namespace salfau {

void LossWeights::validate() const {
  for (std::size_t m = 0; m < side.size(); ++m) {
    if (!(side[m] >= 0.0) || !std::isfinite(side[m])) {
      throw ConfigError("w_side" + std::to_string(m + 1) + " must be a finite nonnegative number");
    }
  }
  if (!(fuse >= 0.0) || !std::isfinite(fuse)) {
    throw ConfigError("w_fuse must be a finite nonnegative number");
  }
}

Tensor bce_sum(const Tensor& P, const Tensor& G) {
  if (P.shape() != G.shape()) {
    throw ShapeError("bce_sum: prediction " + shape_to_string(P.shape()) + " and target " +
                     shape_to_string(G.shape()) + " differ");
  }
  detail::require_same_precision(P, G, "bce_sum");
  return detail::dispatch(P.precision(), [&](auto tag) {
    using T = decltype(tag);
    auto p = P.data<T>();
    auto g = G.data<T>();
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double q = std::clamp<double>(p[i], kProbClamp, 1.0 - kProbClamp);
      const double y = g[i];
      total -= y * std::log(q) + (1.0 - y) * std::log1p(-q);
    }
    BackwardFn backward = [P, G](const Storage& grad_out, const std::vector<bool>& need) {
      std::vector<std::optional<Storage>> grads(2);
      if (!need[0]) return grads;
      const double up = detail::vec<T>(grad_out)[0];
      auto p = P.data<T>();
      auto g = G.data<T>();
      std::vector<T> dp(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = p[i];
        if (q < kProbClamp || q > 1.0 - kProbClamp) {
          dp[i] = T(0);
        } else {
          const double y = g[i];
          dp[i] = static_cast<T>(up * ((1.0 - y) / (1.0 - q) - y / q));
        }
      }
      grads[0] = Storage(std::move(dp));
      return grads;
    };
    return make_op_result({1}, Storage(std::vector<T>{static_cast<T>(total)}), "bce_sum", {P, G},
                          std::move(backward));
  });
}

Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw ContractError("weighted_sum: need one weight per term and at least one term");
  }
  const Precision precision = terms[0].precision();
  for (const Tensor& t : terms) {
    if (t.shape() != Shape{1}) {
      throw ShapeError("weighted_sum: terms must be [1], got " + shape_to_string(t.shape()));
    }
    detail::require_same_precision(terms[0], t, "weighted_sum");
  }
  return detail::dispatch(precision, [&](auto tag) {
    using T = decltype(tag);
    long double total = 0.0L;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      total += static_cast<long double>(weights[i]) * terms[i].data<T>()[0];
    }
    std::vector<double> w(weights.begin(), weights.end());
    BackwardFn backward = [w](const Storage& grad_out, const std::vector<bool>& need) {
      std::vector<std::optional<Storage>> grads(w.size());
      const T up = detail::vec<T>(grad_out)[0];
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (need[i]) grads[i] = Storage(std::vector<T>{static_cast<T>(w[i] * up)});
      }
      return grads;
    };
    return make_op_result({1}, Storage(std::vector<T>{static_cast<T>(total)}), "weighted_sum",
                          std::vector<Tensor>(terms.begin(), terms.end()), std::move(backward));
  });
}

Tensor total_loss(const SaliencyOutputs& outputs, const Tensor& G, const LossWeights& weights) {
  weights.validate();
  std::vector<Tensor> terms;
  std::vector<double> w;
  for (std::size_t m = 0; m < kDecoderLevels; ++m) {
    terms.push_back(bce_sum(outputs.side[m], G));
    w.push_back(weights.side[m]);
  }
  terms.push_back(bce_sum(outputs.fused, G));
  w.push_back(weights.fuse);
  return weighted_sum(terms, w);
}

}  // namespace salfau
