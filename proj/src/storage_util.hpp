#pragma once

// Internal helpers shared by op implementations.

#include <string>
#include <variant>
#include <vector>

#include "salfau/errors.hpp"
#include "salfau/tensor.hpp"

namespace salfau::detail {

template <class T>
std::vector<T>& vec(Storage& s) {
  return std::get<std::vector<T>>(s);
}

template <class T>
const std::vector<T>& vec(const Storage& s) {
  return std::get<std::vector<T>>(s);
}

inline Precision precision_of(const Storage& s) {
  return s.index() == 0 ? Precision::Single : Precision::Double;
}

// Calls f with a value of the scalar type selected by `p`.
template <class F>
decltype(auto) dispatch(Precision p, F&& f) {
  if (p == Precision::Single) return f(float{});
  return f(double{});
}

inline Storage make_storage(Precision p, std::size_t n, double fill = 0.0) {
  if (p == Precision::Single) return std::vector<float>(n, static_cast<float>(fill));
  return std::vector<double>(n, fill);
}

inline void add_into(Storage& dst, const Storage& src) {
  std::visit(
      [&](auto& d) {
        using V = std::decay_t<decltype(d)>;
        const V& s = std::get<V>(src);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
      },
      dst);
}

inline void require_same_precision(const Tensor& a, const Tensor& b, const char* op) {
  if (a.precision() != b.precision()) {
    throw ContractError(std::string(op) + ": mixed precision operands");
  }
}

inline void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 N,C,H,W tensor, got " +
                     shape_to_string(x.shape()));
  }
}

}  // namespace salfau::detail
