#include "salfau/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "salfau/errors.hpp"
#include "storage_util.hpp"

namespace salfau {

namespace detail {

struct Node {
  std::uint64_t seq = 0;
  std::string op;
  std::vector<Tensor> inputs;
  const TensorImpl* output = nullptr;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  Storage data;
  bool requires_grad = false;
  std::optional<Storage> grad;
  std::shared_ptr<Node> grad_fn;
};

struct Access {
  static TensorImpl& impl(const Tensor& t) {
    if (!t.impl_) throw ContractError("use of an undefined tensor");
    return *t.impl_;
  }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
};

}  // namespace detail

using detail::Access;
using detail::dispatch;
using detail::vec;

namespace {

std::atomic<std::uint64_t> g_node_counter{0};
thread_local bool t_grad_enabled = true;

void validate_dims(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_to_string(shape));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ----

Tensor Tensor::full(const Shape& shape, double value, Precision precision) {
  validate_dims(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = detail::make_storage(precision, shape_numel(shape), value);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, Precision precision) {
  validate_dims(shape);
  const std::size_t expected = shape_numel(shape);
  if (values.size() != expected) {
    throw ShapeError("expected " + std::to_string(expected) + " elements, got " +
                     std::to_string(values.size()));
  }
  Storage storage = dispatch(precision, [&](auto tag) -> Storage {
    using T = decltype(tag);
    return std::vector<T>(values.begin(), values.end());
  });
  return from_storage(shape, std::move(storage));
}

Tensor Tensor::from_storage(const Shape& shape, Storage storage) {
  validate_dims(shape);
  const std::size_t n = std::visit([](const auto& v) { return v.size(); }, storage);
  if (n != shape_numel(shape)) {
    throw ShapeError("expected " + std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(n));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(storage);
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const { return Access::impl(*this).shape; }

std::size_t Tensor::numel() const { return shape_numel(shape()); }

Precision Tensor::precision() const { return detail::precision_of(Access::impl(*this).data); }

const Storage& Tensor::storage() const { return Access::impl(*this).data; }

template <class T>
std::span<const T> Tensor::data() const {
  const auto& storage = Access::impl(*this).data;
  if (!std::holds_alternative<std::vector<T>>(storage)) {
    throw ContractError("tensor element type does not match requested view");
  }
  return std::get<std::vector<T>>(storage);
}

template <class T>
std::span<T> Tensor::mutable_data() {
  auto& impl = Access::impl(*this);
  if (impl.grad_fn) throw ContractError("in-place mutation of a tensor recorded in the graph");
  if (!std::holds_alternative<std::vector<T>>(impl.data)) {
    throw ContractError("tensor element type does not match requested view");
  }
  return std::get<std::vector<T>>(impl.data);
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

double Tensor::at(std::size_t flat_index) const {
  return std::visit([&](const auto& v) { return static_cast<double>(v.at(flat_index)); },
                    storage());
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() needs a single-element tensor, got " + shape_to_string(shape()));
  }
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    storage());
}

bool Tensor::requires_grad() const { return Access::impl(*this).requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  auto& impl = Access::impl(*this);
  if (impl.grad_fn && !value) throw ContractError("cannot clear requires_grad on an op result");
  impl.requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return !Access::impl(*this).grad_fn; }

bool Tensor::has_grad() const { return Access::impl(*this).grad.has_value(); }

Tensor Tensor::grad() const {
  const auto& impl = Access::impl(*this);
  if (!impl.grad) throw ContractError("tensor has no gradient");
  return from_storage(impl.shape, *impl.grad);
}

void Tensor::zero_grad() { Access::impl(*this).grad.reset(); }

Tensor Tensor::detach() const { return from_storage(shape(), storage()); }

Tensor Tensor::to(Precision precision) const {
  Storage converted = dispatch(precision, [&](auto tag) -> Storage {
    using T = decltype(tag);
    return std::visit([](const auto& v) { return std::vector<T>(v.begin(), v.end()); }, storage());
  });
  return from_storage(shape(), std::move(converted));
}

void Tensor::backward() const {
  auto& root = Access::impl(*this);
  if (shape_numel(root.shape) != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(root.shape));
  }
  if (!root.requires_grad) {
    throw ContractError("backward() on a tensor that is not connected to any parameter");
  }
  Storage seed = detail::make_storage(precision(), 1, 1.0);
  if (!root.grad_fn) {
    if (root.grad) detail::add_into(*root.grad, seed);
    else root.grad = std::move(seed);
    return;
  }

  // Reachable nodes, visited in exact reverse creation order.
  std::vector<detail::Node*> nodes;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root.grad_fn.get()};
  while (!stack.empty()) {
    detail::Node* node = stack.back();
    stack.pop_back();
    if (!seen.insert(node).second) continue;
    nodes.push_back(node);
    for (const Tensor& in : node->inputs) {
      if (auto& fn = Access::impl(in).grad_fn) stack.push_back(fn.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  std::unordered_map<const detail::TensorImpl*, Storage> pending;
  pending.emplace(&root, std::move(seed));
  for (detail::Node* node : nodes) {
    auto it = pending.find(node->output);
    if (it == pending.end()) continue;
    Storage grad_out = std::move(it->second);
    pending.erase(it);

    std::vector<bool> needs;
    needs.reserve(node->inputs.size());
    for (const Tensor& in : node->inputs) needs.push_back(in.requires_grad());
    auto grads = node->backward(grad_out, needs);

    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (!needs[i] || !grads[i]) continue;
      auto& in = Access::impl(node->inputs[i]);
      if (in.grad_fn) {
        auto [slot, inserted] = pending.try_emplace(&in);
        if (inserted) slot->second = std::move(*grads[i]);
        else detail::add_into(slot->second, *grads[i]);
      } else if (in.grad) {
        detail::add_into(*in.grad, *grads[i]);
      } else {
        in.grad = std::move(*grads[i]);
      }
    }
  }
}

// ---- graph recording ----

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_op_result(const Shape& shape, Storage data, std::string op, std::vector<Tensor> inputs,
                      BackwardFn backward) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(data);
  const bool needs_graph =
      t_grad_enabled &&
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (needs_graph) {
    auto node = std::make_shared<detail::Node>();
    node->seq = g_node_counter.fetch_add(1) + 1;
    node->op = std::move(op);
    node->inputs = std::move(inputs);
    node->output = impl.get();
    node->backward = std::move(backward);
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  return Access::wrap(std::move(impl));
}

std::vector<GraphNodeInfo> trace_graph(const Tensor& root) {
  std::vector<const detail::Node*> nodes;
  std::unordered_set<const detail::Node*> seen;
  std::vector<const detail::Node*> stack;
  if (auto& fn = Access::impl(root).grad_fn) stack.push_back(fn.get());
  while (!stack.empty()) {
    const detail::Node* node = stack.back();
    stack.pop_back();
    if (!seen.insert(node).second) continue;
    nodes.push_back(node);
    for (const Tensor& in : node->inputs) {
      if (auto& fn = Access::impl(in).grad_fn) stack.push_back(fn.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq < b->seq; });
  std::vector<GraphNodeInfo> out;
  out.reserve(nodes.size());
  for (const detail::Node* node : nodes) {
    GraphNodeInfo info{node->seq, node->op, {}};
    for (const Tensor& in : node->inputs) {
      if (auto& fn = Access::impl(in).grad_fn) info.input_seqs.push_back(fn->seq);
    }
    out.push_back(std::move(info));
  }
  return out;
}

// ---- element-wise ops ----

namespace {

struct Broadcast {
  bool same_shape = true;
  std::vector<std::size_t> b_strides;  // per output dim, 0 where b is broadcast
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast plan;
  if (a == b) return plan;
  plan.same_shape = false;
  auto fail = [&] {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                     shape_to_string(b));
  };
  Shape virtual_b;
  if (b.size() == 1 && a.size() >= 2 && b[0] == a[1]) {
    virtual_b.assign(a.size(), 1);
    virtual_b[1] = b[0];
  } else if (b.size() == a.size()) {
    for (std::size_t d = 0; d < a.size(); ++d) {
      if (b[d] != a[d] && b[d] != 1) fail();
    }
    virtual_b = b;
  } else {
    fail();
  }
  plan.b_strides.assign(a.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = a.size(); d-- > 0;) {
    plan.b_strides[d] = (virtual_b[d] == 1 && a[d] != 1) ? 0 : stride;
    stride *= virtual_b[d];
  }
  return plan;
}

// Index into b for every flat index of a.
std::vector<std::size_t> broadcast_index(const Shape& a, const Broadcast& plan) {
  const std::size_t n = shape_numel(a);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(a.size(), 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = offset;
    for (std::size_t d = a.size(); d-- > 0;) {
      ++counter[d];
      offset += plan.b_strides[d];
      if (counter[d] < a[d]) break;
      offset -= plan.b_strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  return index;
}

enum class EwiseKind { Add, Sub, Mul };

Tensor ewise(EwiseKind kind, const Tensor& a, const Tensor& b) {
  static constexpr const char* names[] = {"add", "sub", "mul"};
  const char* name = names[static_cast<int>(kind)];
  detail::require_same_precision(a, b, name);
  const Broadcast plan = plan_broadcast(a.shape(), b.shape(), name);
  auto index = std::make_shared<std::vector<std::size_t>>();
  if (!plan.same_shape) *index = broadcast_index(a.shape(), plan);

  Storage out = dispatch(a.precision(), [&](auto tag) -> Storage {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto y = b.data<T>();
    std::vector<T> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T yv = plan.same_shape ? y[i] : y[(*index)[i]];
      switch (kind) {
        case EwiseKind::Add: r[i] = x[i] + yv; break;
        case EwiseKind::Sub: r[i] = x[i] - yv; break;
        case EwiseKind::Mul: r[i] = x[i] * yv; break;
      }
    }
    return r;
  });

  const bool same = plan.same_shape;
  const std::size_t b_numel = b.numel();
  return make_op_result(
      a.shape(), std::move(out), name, {a, b},
      [kind, a, b, index, same, b_numel](const Storage& g, const std::vector<bool>& needs) {
        std::vector<std::optional<Storage>> grads(2);
        dispatch(a.precision(), [&](auto tag) {
          using T = decltype(tag);
          const auto& go = vec<T>(g);
          auto x = a.data<T>();
          auto y = b.data<T>();
          auto b_at = [&](std::size_t i) { return same ? i : (*index)[i]; };
          if (needs[0]) {
            std::vector<T> ga(go.size());
            for (std::size_t i = 0; i < go.size(); ++i) {
              ga[i] = kind == EwiseKind::Mul ? go[i] * y[b_at(i)] : go[i];
            }
            grads[0] = std::move(ga);
          }
          if (needs[1]) {
            std::vector<double> acc(b_numel, 0.0);
            for (std::size_t i = 0; i < go.size(); ++i) {
              double v = go[i];
              if (kind == EwiseKind::Mul) v = static_cast<double>(go[i] * x[i]);
              else if (kind == EwiseKind::Sub) v = -v;
              acc[b_at(i)] += v;
            }
            grads[1] = std::vector<T>(acc.begin(), acc.end());
          }
        });
        return grads;
      });
}

}  // namespace

Shape ewise_shape(const Shape& a, const Shape& b) {
  plan_broadcast(a, b, "ewise");
  return a;
}

Tensor add(const Tensor& a, const Tensor& b) { return ewise(EwiseKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return ewise(EwiseKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return ewise(EwiseKind::Mul, a, b); }

Tensor scale(const Tensor& x, double factor) {
  Storage out = std::visit(
      [&](const auto& v) -> Storage {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::vector<T> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) r[i] = v[i] * static_cast<T>(factor);
        return r;
      },
      x.storage());
  return make_op_result(x.shape(), std::move(out), "scale", {x},
                        [factor](const Storage& g, const std::vector<bool>&) {
                          std::vector<std::optional<Storage>> grads(1);
                          grads[0] = std::visit(
                              [&](const auto& go) -> Storage {
                                using T = typename std::decay_t<decltype(go)>::value_type;
                                std::vector<T> r(go.size());
                                for (std::size_t i = 0; i < go.size(); ++i) {
                                  r[i] = go[i] * static_cast<T>(factor);
                                }
                                return r;
                              },
                              g);
                          return grads;
                        });
}

Tensor relu(const Tensor& x) {
  Storage out = std::visit(
      [](const auto& v) -> Storage {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::vector<T> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) r[i] = v[i] > T(0) ? v[i] : T(0);
        return r;
      },
      x.storage());
  return make_op_result(x.shape(), std::move(out), "relu", {x},
                        [x](const Storage& g, const std::vector<bool>&) {
                          std::vector<std::optional<Storage>> grads(1);
                          grads[0] = std::visit(
                              [&](const auto& go) -> Storage {
                                using T = typename std::decay_t<decltype(go)>::value_type;
                                auto in = x.data<T>();
                                std::vector<T> r(go.size());
                                for (std::size_t i = 0; i < go.size(); ++i) {
                                  r[i] = in[i] > T(0) ? go[i] : T(0);
                                }
                                return r;
                              },
                              g);
                          return grads;
                        });
}

namespace {

template <class T>
T stable_sigmoid(T v) {
  // Clamped to the representable interior so the output never reaches 0 or 1.
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / 2;
  if (v >= T(0)) return std::min(hi, T(1) / (T(1) + std::exp(-v)));
  const T e = std::exp(v);
  return std::max(lo, e / (T(1) + e));
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  Storage out = std::visit(
      [](const auto& v) -> Storage {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::vector<T> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) r[i] = stable_sigmoid(v[i]);
        return r;
      },
      x.storage());
  return make_op_result(x.shape(), std::move(out), "sigmoid", {x},
                        [x](const Storage& g, const std::vector<bool>&) {
                          std::vector<std::optional<Storage>> grads(1);
                          grads[0] = std::visit(
                              [&](const auto& go) -> Storage {
                                using T = typename std::decay_t<decltype(go)>::value_type;
                                auto in = x.data<T>();
                                std::vector<T> r(go.size());
                                for (std::size_t i = 0; i < go.size(); ++i) {
                                  const T y = stable_sigmoid(in[i]);
                                  r[i] = go[i] * y * (T(1) - y);
                                }
                                return r;
                              },
                              g);
                          return grads;
                        });
}

// ---- structural ops ----

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = parts.front();
  detail::require_rank4(first, "concat_channels");
  const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::size_t channels = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    detail::require_rank4(p, "concat_channels");
    detail::require_same_precision(first, p, "concat_channels");
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_to_string(first.shape()) +
                       " vs " + shape_to_string(p.shape()));
    }
    offsets.push_back(channels);
    channels += p.dim(1);
  }
  const std::size_t plane = h * w;
  const Shape out_shape{n, channels, h, w};

  Storage out = dispatch(first.precision(), [&](auto tag) -> Storage {
    using T = decltype(tag);
    std::vector<T> r(shape_numel(out_shape));
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto src = parts[k].data<T>();
      const std::size_t band = parts[k].dim(1) * plane;
      for (std::size_t b = 0; b < n; ++b) {
        std::copy_n(src.begin() + b * band, band, r.begin() + (b * channels + offsets[k]) * plane);
      }
    }
    return r;
  });

  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> part_channels;
  for (const Tensor& p : parts) part_channels.push_back(p.dim(1));
  return make_op_result(
      out_shape, std::move(out), "concat_channels", inputs,
      [n, channels, plane, offsets, part_channels](const Storage& g, const std::vector<bool>& needs) {
        std::vector<std::optional<Storage>> grads(part_channels.size());
        std::visit(
            [&](const auto& go) {
              using T = typename std::decay_t<decltype(go)>::value_type;
              for (std::size_t k = 0; k < part_channels.size(); ++k) {
                if (!needs[k]) continue;
                const std::size_t band = part_channels[k] * plane;
                std::vector<T> r(n * band);
                for (std::size_t b = 0; b < n; ++b) {
                  std::copy_n(go.begin() + (b * channels + offsets[k]) * plane, band,
                              r.begin() + b * band);
                }
                grads[k] = std::move(r);
              }
            },
            g);
        return grads;
      });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_rank4(x, "slice_channels");
  if (count == 0 || begin + count > x.dim(1)) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Shape out_shape{n, count, x.dim(2), x.dim(3)};
  Storage out = std::visit(
      [&](const auto& v) -> Storage {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::vector<T> r(n * count * plane);
        for (std::size_t b = 0; b < n; ++b) {
          std::copy_n(v.begin() + (b * channels + begin) * plane, count * plane,
                      r.begin() + b * count * plane);
        }
        return r;
      },
      x.storage());
  return make_op_result(out_shape, std::move(out), "slice_channels", {x},
                        [n, channels, plane, begin, count](const Storage& g,
                                                           const std::vector<bool>&) {
                          std::vector<std::optional<Storage>> grads(1);
                          grads[0] = std::visit(
                              [&](const auto& go) -> Storage {
                                using T = typename std::decay_t<decltype(go)>::value_type;
                                std::vector<T> r(n * channels * plane, T(0));
                                for (std::size_t b = 0; b < n; ++b) {
                                  std::copy_n(go.begin() + b * count * plane, count * plane,
                                              r.begin() + (b * channels + begin) * plane);
                                }
                                return r;
                              },
                              g);
                          return grads;
                        });
}

Tensor sum(const Tensor& x) {
  const std::size_t n = x.numel();
  Storage out = std::visit(
      [](const auto& v) -> Storage {
        using T = typename std::decay_t<decltype(v)>::value_type;
        double acc = 0.0;
        for (T e : v) acc += e;
        return std::vector<T>{static_cast<T>(acc)};
      },
      x.storage());
  return make_op_result({1}, std::move(out), "sum", {x},
                        [n](const Storage& g, const std::vector<bool>&) {
                          std::vector<std::optional<Storage>> grads(1);
                          grads[0] = std::visit(
                              [&](const auto& go) -> Storage {
                                using T = typename std::decay_t<decltype(go)>::value_type;
                                return std::vector<T>(n, go[0]);
                              },
                              g);
                          return grads;
                        });
}

// ---- gradient validation ----

namespace {

void prepare_grad_check(std::vector<Tensor>& params, double eps) {
  if (eps < 1e-7 || eps > 1e-3) {
    throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  for (Tensor& p : params) {
    if (p.precision() != Precision::Double) {
      throw ContractError("grad_check requires double precision; single precision noise exceeds "
                          "the finite-difference signal");
    }
    if (!p.is_leaf()) throw ContractError("grad_check: parameters must be leaf tensors");
    p.set_requires_grad(true);
    p.zero_grad();
  }
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

}  // namespace

double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                  const GradCheckOptions& options) {
  prepare_grad_check(params, options.eps);
  Tensor loss = loss_fn();
  loss.backward();

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (Tensor& p : params) {
    const std::vector<double> analytic =
        p.has_grad() ? p.grad().to_vector() : std::vector<double>(p.numel(), 0.0);
    std::vector<std::size_t> indices(p.numel());
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_elements_per_tensor > 0 && indices.size() > options.max_elements_per_tensor) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_elements_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    auto values = p.mutable_data<double>();
    for (std::size_t idx : indices) {
      const double original = values[idx];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard no_grad;
        values[idx] = original + options.eps;
        plus = loss_fn().item();
        values[idx] = original - options.eps;
        minus = loss_fn().item();
      }
      values[idx] = original;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      worst = std::max(worst, relative_error(analytic[idx], numeric));
    }
  }
  return worst;
}

double grad_check_directional(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                              std::size_t directions, const GradCheckOptions& options) {
  prepare_grad_check(params, options.eps);
  Tensor loss = loss_fn();
  loss.backward();

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (Tensor& p : params) {
    const std::vector<double> grad =
        p.has_grad() ? p.grad().to_vector() : std::vector<double>(p.numel(), 0.0);
    auto values = p.mutable_data<double>();
    const std::vector<double> original(values.begin(), values.end());
    double grad_norm = 0.0;
    for (double g : grad) grad_norm += g * g;
    grad_norm = std::sqrt(grad_norm);
    std::vector<double> d(p.numel());
    auto norm_of = [&] {
      double norm = 0.0;
      for (double x : d) norm += x * x;
      return std::sqrt(norm);
    };
    auto normalize = [&] {
      const double norm = norm_of();
      for (double& x : d) x /= norm;
    };
    for (std::size_t k = 0; k < directions; ++k) {
      // The first direction is the gradient itself; later ones mix it with a
      // random unit vector r so that <grad, d> stays near |grad| / sqrt(2).
      for (double& x : d) x = k == 0 && grad_norm > 0.0 ? 0.0 : normal(rng);
      if (k > 0 || grad_norm == 0.0) normalize();
      if (grad_norm > 0.0) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += grad[i] / grad_norm;
        // |g + r|^2 + |g - r|^2 = 4, so one of the two is at least sqrt(2)
        if (norm_of() < 1.0) {
          for (std::size_t i = 0; i < d.size(); ++i) d[i] = 2.0 * grad[i] / grad_norm - d[i];
        }
        normalize();
      }
      double analytic = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) analytic += grad[i] * d[i];
      double best = std::numeric_limits<double>::infinity();
      for (double h : {options.eps, options.eps / 10.0, options.eps / 100.0}) {
        double plus = 0.0, minus = 0.0;
        {
          NoGradGuard no_grad;
          for (std::size_t i = 0; i < d.size(); ++i) values[i] = original[i] + h * d[i];
          plus = loss_fn().item();
          for (std::size_t i = 0; i < d.size(); ++i) values[i] = original[i] - h * d[i];
          minus = loss_fn().item();
        }
        best = std::min(best, relative_error(analytic, (plus - minus) / (2.0 * h)));
      }
      std::copy(original.begin(), original.end(), values.begin());
      worst = std::max(worst, best);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  GradCheckOptions options;
  options.eps = eps;
  return grad_check([&] { return f(leaf); }, {leaf}, options);
}

}  // namespace salfau
