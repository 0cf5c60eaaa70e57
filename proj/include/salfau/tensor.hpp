#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace salfau {

enum class Precision { Single, Double };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

using Storage = std::variant<std::vector<float>, std::vector<double>>;

namespace detail {
struct TensorImpl;
struct Access;
}  // namespace detail

// N-dimensional row-major array with optional reverse-mode gradient.
//
// Tensor is a shared handle: copies refer to the same buffer. Results of
// differentiable ops record a node in the autograd graph when any input
// requires grad and grad mode is enabled. Rank-4 tensors use N,C,H,W layout.
class Tensor {
 public:
  Tensor() = default;

  static Tensor full(const Shape& shape, double value, Precision precision = Precision::Single);
  static Tensor zeros(const Shape& shape, Precision precision = Precision::Single) {
    return full(shape, 0.0, precision);
  }
  // Throws ShapeError "expected N elements, got M" when the counts differ.
  static Tensor from_values(const Shape& shape, std::span<const double> values,
                            Precision precision = Precision::Single);
  static Tensor from_values(const Shape& shape, std::initializer_list<double> values,
                            Precision precision = Precision::Single) {
    return from_values(shape, std::span<const double>(values.begin(), values.size()), precision);
  }
  static Tensor from_storage(const Shape& shape, Storage storage);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const;
  Precision precision() const;

  const Storage& storage() const;
  template <class T>
  std::span<const T> data() const;
  // Writable view for leaf tensors only (parameters, inputs). Mutating a
  // tensor produced by a recorded op is rejected.
  template <class T>
  std::span<T> mutable_data();

  double item() const;
  double at(std::size_t flat_index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  // Accumulated gradient as a detached tensor. Throws if none is present.
  Tensor grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar. Gradients add onto existing ones.
  void backward() const;

  Tensor detach() const;
  Tensor to(Precision precision) const;

  // Stable identity of the underlying buffer.
  const void* id() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend struct detail::Access;
};

// Disables graph recording in the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Local gradient rule: receives dL/d(output) and which inputs need grads,
// returns dL/d(input_i) for each input (nullopt when not needed).
using BackwardFn =
    std::function<std::vector<std::optional<Storage>>(const Storage&, const std::vector<bool>&)>;

// Wraps a freshly computed buffer as an op output, recording a graph node
// when required. Used by every differentiable op.
Tensor make_op_result(const Shape& shape, Storage data, std::string op, std::vector<Tensor> inputs,
                      BackwardFn backward);

struct GraphNodeInfo {
  std::uint64_t seq;
  std::string op;
  std::vector<std::uint64_t> input_seqs;  // seq of the producing node; leaves are omitted
};

// Nodes reachable from `root`, in creation order.
std::vector<GraphNodeInfo> trace_graph(const Tensor& root);

// ---- element-wise and structural ops ----

// `b` may have a's shape, be a channel vector [C] (C == a.dim(1)), or have a's
// rank with every dim equal to a's or 1. Broadcast dims are sum-reduced in
// the gradient of b.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Concatenates rank-4 tensors along the channel axis.
Tensor concat_channels(std::span<const Tensor> parts);
inline Tensor concat_channels(std::initializer_list<Tensor> parts) {
  return concat_channels(std::span<const Tensor>(parts.begin(), parts.size()));
}
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);

// Sum of all elements as a [1] tensor.
Tensor sum(const Tensor& x);

// Broadcast result shape of add/sub/mul without executing them.
Shape ewise_shape(const Shape& a, const Shape& b);

// ---- gradient validation ----

struct GradCheckOptions {
  double eps = 1e-6;
  // Elements checked per tensor; 0 checks every element. Larger tensors are
  // subsampled deterministically from `seed`.
  std::size_t max_elements_per_tensor = 0;
  std::uint64_t seed = 0;
};

// Maximum over checked elements of |analytic - central difference| /
// max(1e-12, |analytic| + |numeric|). All tensors must be double precision
// leaves; they are perturbed in place and restored.
double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                  const GradCheckOptions& options = {});

// Same measure for directional derivatives: each tensor is moved along unit
// vectors d (the analytic gradient, then the gradient mixed with random unit
// vectors) and <grad, d> is compared with the central difference. Well
// conditioned even when individual gradient entries are tiny. Each direction
// is differenced with steps eps, eps / 10 and eps / 100 and the closest one
// counts, which sidesteps both round-off (small steps) and ReLU kinks lying
// within a large step of the current point. A single wrong entry is diluted
// roughly by the tensor size, so per-op rules are still best verified with
// grad_check.
double grad_check_directional(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                              std::size_t directions, const GradCheckOptions& options = {});

// Checks d f(x) / dx for a scalar-valued builder f.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace salfau
