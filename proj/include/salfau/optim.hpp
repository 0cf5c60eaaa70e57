#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "salfau/checkpoint.hpp"
#include "salfau/data.hpp"
#include "salfau/loss.hpp"
#include "salfau/salfaunet.hpp"

namespace salfau {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  // Throws ConfigError on lr <= 0, betas outside [0,1), eps <= 0 or
  // negative weight decay.
  void validate() const;
};

// Bias-corrected Adam. Weight decay, when nonzero, is added to the gradient.
class Adam {
 public:
  explicit Adam(NamedTensors params, AdamHyper hyper = {});

  // Throws ContractError naming the first parameter without a gradient.
  void step();
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  const AdamHyper& hyper() const { return hyper_; }
  const NamedTensors& parameters() const { return params_; }

  // Moments as "m.<name>" / "v.<name>" plus the step counter "t".
  CheckpointSection export_state() const;
  void import_state(const CheckpointSection& section);

 private:
  NamedTensors params_;
  std::vector<Storage> m_;
  std::vector<Storage> v_;
  AdamHyper hyper_;
  std::uint64_t t_ = 0;
};

// Network state, plus the optimizer section when `adam` is given.
Checkpoint snapshot(const SalFAUNet& net, const Adam* adam = nullptr);
void save_checkpoint(const std::filesystem::path& path, const SalFAUNet& net,
                     const Adam* adam = nullptr);

struct TrainOptions {
  std::size_t iters = 500000;
  std::size_t batch = 12;
  std::uint64_t seed = 0;
  LossWeights weights;
  // Writes `checkpoint_path` every this many iterations; 0 disables.
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  // Called after every iteration with the 1-based iteration and its loss.
  std::function<void(std::size_t, double)> on_iteration;
};

// Epoch-shuffled batches (reshuffled on wrap-around), paired train
// augmentation at the network's input size, total loss, backward, Adam step.
// Returns the loss of every iteration.
std::vector<double> train_loop(SalFAUNet& net, Adam& adam, const std::vector<Sample>& dataset,
                               const TrainOptions& options);

}  // namespace salfau
