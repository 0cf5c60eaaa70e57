#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "salfau/attention_gate.hpp"
#include "salfau/nn.hpp"
#include "salfau/tensor.hpp"

namespace salfau {

inline constexpr std::size_t kEncoderLevels = 5;
inline constexpr std::size_t kDecoderLevels = kEncoderLevels - 1;
inline constexpr std::size_t kSizeDivisor = std::size_t{1} << kDecoderLevels;  // 16

struct NetworkConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 8;
  std::size_t input_size = 64;

  // Throws ConfigError unless input_size is a positive multiple of 16 and
  // base_channels is positive.
  void validate() const;
  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
};

struct EncoderBlock {
  Conv2d conv1;
  BatchNorm2d bn1;
  Conv2d conv2;
  BatchNorm2d bn2;
};

// Upsample -> attention-gate the skip -> concat -> two conv-bn-relu layers.
struct DecoderBlock {
  AttentionGate gate;
  Conv2d conv1;
  BatchNorm2d bn1;
  Conv2d conv2;
  BatchNorm2d bn2;
};

struct SaliencyOutputs {
  std::array<Tensor, kDecoderLevels> side;         // S(1..4)_side, [N,1,H,W]
  std::array<Tensor, kDecoderLevels> side_logits;  // pre-sigmoid, upsampled to input size
  Tensor fused;                                    // S_fuse, [N,1,H,W]
};

struct StageShape {
  std::string name;
  std::size_t channels;
  std::size_t height;
  std::size_t width;

  bool operator==(const StageShape&) const = default;
};

using ShapeTrace = std::vector<StageShape>;

// Parameters are shared tensor handles, so the network is move-only.
class SalFAUNet {
 public:
  SalFAUNet() = default;
  SalFAUNet(SalFAUNet&&) = default;
  SalFAUNet& operator=(SalFAUNet&&) = default;
  SalFAUNet(const SalFAUNet&) = delete;
  SalFAUNet& operator=(const SalFAUNet&) = delete;

  // All convolutions He-initialized from `seed` in construction order.
  static SalFAUNet build(const NetworkConfig& cfg, std::uint64_t seed,
                         Precision precision = Precision::Single);

  // x: [N, 3, H, W]. Train mode requires H == W == input_size; eval mode
  // accepts any H, W divisible by 16. Wrap inference in NoGradGuard to skip
  // recording the graph.
  SaliencyOutputs forward(const Tensor& x, Mode mode, ShapeTrace* trace = nullptr);

  // Trainable tensors, in checkpoint order.
  NamedTensors parameters() const;
  // Batchnorm running statistics.
  NamedTensors buffers() const;
  // parameters() followed by buffers().
  NamedTensors state() const;

  void zero_grad();

  const NetworkConfig& config() const { return cfg_; }
  Precision precision() const { return precision_; }

  std::array<EncoderBlock, kEncoderLevels> encoders;
  // decoders[0] is decoder 1 (deepest); it gates encoder level 3.
  std::array<DecoderBlock, kDecoderLevels> decoders;
  std::array<Conv2d, kDecoderLevels> side_convs;
  Conv2d fuse_conv;

 private:
  NetworkConfig cfg_;
  Precision precision_ = Precision::Single;
};

// Stage shapes (per sample) of a forward pass at cfg.input_size, computed
// without allocating tensors: enc0..enc4, dec1..dec4, side1..side4, fuse.
ShapeTrace shape_plan(const NetworkConfig& cfg);

std::string format_stage(const StageShape& stage);

}  // namespace salfau
