#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "salfau/nn.hpp"

namespace salfau {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Additive attention gate. The gating signal F_g and the skip feature F_s are
// projected by 1x1 conv + batchnorm + relu into query Q and key K, combined as
// alpha = relu(Q + K), and squeezed by a 1x1 conv + batchnorm + sigmoid into a
// one-channel coefficient map V in (0, 1). The output is V * F_s.
struct AttentionGate {
  AttentionGate() = default;
  AttentionGate(std::size_t gate_channels, std::size_t skip_channels, std::size_t inter_channels,
                Precision precision = Precision::Single);

  std::size_t gate_channels = 0;
  std::size_t skip_channels = 0;
  std::size_t inter_channels = 0;

  Conv2d conv_q;  // F_g -> F_int
  BatchNorm2d bn_q;
  Conv2d conv_k;  // F_l -> F_int, bias b_k
  BatchNorm2d bn_k;
  Conv2d conv_psi;  // F_int -> 1, bias b_psi
  BatchNorm2d bn_psi;
};

// F_int used by the network: half the skip channels, at least 1.
std::size_t default_inter_channels(std::size_t skip_channels);

// Coefficient map V, shape [N, 1, H, W].
Tensor attention_coefficients(AttentionGate& gate, const Tensor& gating, const Tensor& skip,
                              Mode mode);

// V * skip, with V broadcast over the skip channels. Both inputs share N, H, W.
Tensor ag_forward(AttentionGate& gate, const Tensor& gating, const Tensor& skip, Mode mode);

void append_parameters(const Conv2d& conv, const std::string& prefix, NamedTensors& out);
void append_parameters(const BatchNorm2d& bn, const std::string& prefix, NamedTensors& out);
void append_buffers(const BatchNorm2d& bn, const std::string& prefix, NamedTensors& out);
void append_parameters(const AttentionGate& gate, const std::string& prefix, NamedTensors& out);
void append_buffers(const AttentionGate& gate, const std::string& prefix, NamedTensors& out);
void init_he(AttentionGate& gate, std::mt19937_64& rng);

}  // namespace salfau
