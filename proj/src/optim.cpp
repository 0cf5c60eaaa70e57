#include "salfau/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include "salfau/errors.hpp"
#include "storage_util.hpp"

namespace salfau {

void AdamHyper::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
}

Adam::Adam(NamedTensors params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper) {
  hyper_.validate();
  for (const auto& [name, p] : params_) {
    if (!p.is_leaf()) throw ContractError("Adam: parameter '" + name + "' is not a leaf tensor");
    m_.push_back(detail::make_storage(p.precision(), p.numel()));
    v_.push_back(detail::make_storage(p.precision(), p.numel()));
  }
}

void Adam::step() {
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) throw ContractError("Adam: missing gradient for parameter '" + name + "'");
  }
  ++t_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].second;
    const Tensor grad = p.grad();
    detail::dispatch(p.precision(), [&](auto tag) {
      using T = decltype(tag);
      auto w = p.mutable_data<T>();
      auto g = grad.data<T>();
      auto& m = detail::vec<T>(m_[i]);
      auto& v = detail::vec<T>(v_[i]);
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = static_cast<double>(g[k]) + hyper_.weight_decay * w[k];
        const double mk = b1 * m[k] + (1.0 - b1) * gk;
        const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        const double mhat = static_cast<double>(m[k]) / c1;
        const double vhat = static_cast<double>(v[k]) / c2;
        w[k] = static_cast<T>(w[k] - hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps));
      }
    });
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

CheckpointSection Adam::export_state() const {
  CheckpointSection section;
  auto add = [&](const std::string& name, const Shape& shape, const Storage& s) {
    CheckpointTensor t{name, shape, {}};
    std::visit([&](const auto& v) { t.values.assign(v.begin(), v.end()); }, s);
    section.push_back(std::move(t));
  };
  for (std::size_t i = 0; i < params_.size(); ++i) add("m." + params_[i].first, params_[i].second.shape(), m_[i]);
  for (std::size_t i = 0; i < params_.size(); ++i) add("v." + params_[i].first, params_[i].second.shape(), v_[i]);
  section.push_back({"t", {}, {static_cast<float>(t_)}});
  return section;
}

void Adam::import_state(const CheckpointSection& section) {
  std::unordered_map<std::string, const CheckpointTensor*> by_name;
  for (const CheckpointTensor& t : section) by_name[t.name] = &t;
  auto find = [&](const std::string& name, const Shape& shape) -> const CheckpointTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("optimizer state is missing '" + name + "'", 0);
    if (it->second->shape != shape) {
      throw ParseError("optimizer tensor '" + name + "' has shape " +
                           shape_to_string(it->second->shape) + ", expected " + shape_to_string(shape),
                       0);
    }
    return *it->second;
  };
  const CheckpointTensor& t = find("t", {});
  if (!(t.values[0] >= 0.0f) || t.values[0] != std::floor(t.values[0])) {
    throw ParseError("optimizer step counter is not a nonnegative integer", 0);
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    const CheckpointTensor& m = find("m." + name, p.shape());
    const CheckpointTensor& v = find("v." + name, p.shape());
    m_[i] = detail::dispatch(p.precision(), [&](auto tag) -> Storage {
      return std::vector<decltype(tag)>(m.values.begin(), m.values.end());
    });
    v_[i] = detail::dispatch(p.precision(), [&](auto tag) -> Storage {
      return std::vector<decltype(tag)>(v.values.begin(), v.values.end());
    });
  }
  t_ = static_cast<std::uint64_t>(t.values[0]);
}

Checkpoint snapshot(const SalFAUNet& net, const Adam* adam) {
  Checkpoint c;
  c.model = export_tensors(net.state());
  if (adam) c.optimizer = adam->export_state();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const SalFAUNet& net, const Adam* adam) {
  write_checkpoint(path, snapshot(net, adam));
}

std::vector<double> train_loop(SalFAUNet& net, Adam& adam, const std::vector<Sample>& dataset,
                               const TrainOptions& options) {
  if (options.iters == 0) return {};
  if (dataset.empty()) throw ContractError("train_loop: empty dataset");
  if (options.batch == 0) throw ConfigError("batch must be at least 1");
  options.weights.validate();
  const std::size_t crop = net.config().input_size;

  std::mt19937_64 order_rng(options.seed);
  std::mt19937_64 augment_rng(options.seed ^ 0xA5A5A5A5DEADBEEFull);
  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();

  std::vector<double> history;
  history.reserve(options.iters);
  std::vector<Tensor> images(options.batch), masks(options.batch);
  for (std::size_t it = 1; it <= options.iters; ++it) {
    adam.zero_grad();
    for (std::size_t b = 0; b < options.batch; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      Sample s = preprocess_train(dataset[order[cursor++]], crop, augment_rng);
      images[b] = s.image.to(net.precision());
      masks[b] = s.mask.to(net.precision());
    }
    const Tensor x = stack_batch(images);
    const Tensor g = stack_batch(masks);
    const Tensor loss = total_loss(net.forward(x, Mode::Train), g, options.weights);
    loss.backward();
    adam.step();
    const double value = loss.item();
    history.push_back(value);
    if (options.on_iteration) options.on_iteration(it, value);
    if (options.checkpoint_every != 0 && it % options.checkpoint_every == 0 &&
        !options.checkpoint_path.empty()) {
      save_checkpoint(options.checkpoint_path, net, &adam);
    }
  }
  return history;
}

}  // namespace salfau
