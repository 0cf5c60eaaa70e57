#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "salfau/loss.hpp"
#include "salfau/metrics.hpp"
#include "salfau/optim.hpp"
#include "salfau/salfaunet.hpp"

namespace salfau {

// Run configuration. Defaults follow the published training recipe:
// 288 crops, width 64, batch 12, Adam(1e-3, 0.9, 0.999, 1e-8).
struct Config {
  NetworkConfig network{3, 64, 288};
  AdamHyper adam;
  std::size_t batch = 12;
  std::size_t iters = 500000;
  std::uint64_t seed = 0;
  LossWeights weights;
  std::size_t checkpoint_every = 0;
  EmThresholdMode em_mode = EmThresholdMode::Adaptive;

  // Throws ConfigError when any value is out of range.
  void validate() const;
  MetricConfig metric_config() const;
};

// Every recognized key, in documentation order.
const std::vector<std::string>& config_keys();

// Sets one key. Throws ConfigError naming the key when it is unknown or the
// value does not parse.
void apply_setting(Config& config, std::string_view key, std::string_view value);

// "key = value" lines; '#' starts a comment; blank lines are ignored.
// Later lines override earlier ones. The result is validated.
Config parse_config(std::string_view text, const Config& base = {});
Config load_config(const std::filesystem::path& path, const Config& base = {});

// Round-trips through parse_config.
std::string format_config(const Config& config);

}  // namespace salfau
