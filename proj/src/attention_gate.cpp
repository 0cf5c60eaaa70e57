#include "salfau/attention_gate.hpp"

#include <algorithm>

#include "salfau/errors.hpp"

namespace salfau {

AttentionGate::AttentionGate(std::size_t gate_ch, std::size_t skip_ch, std::size_t inter_ch,
                             Precision precision)
    : gate_channels(gate_ch),
      skip_channels(skip_ch),
      inter_channels(inter_ch),
      conv_q(gate_ch, inter_ch, 1, precision),
      bn_q(inter_ch, precision),
      conv_k(skip_ch, inter_ch, 1, precision),
      bn_k(inter_ch, precision),
      conv_psi(inter_ch, 1, 1, precision),
      bn_psi(1, precision) {}

std::size_t default_inter_channels(std::size_t skip_channels) {
  return std::max<std::size_t>(1, skip_channels / 2);
}

Tensor attention_coefficients(AttentionGate& gate, const Tensor& gating, const Tensor& skip,
                              Mode mode) {
  if (gating.rank() != 4 || skip.rank() != 4) {
    throw ShapeError("ag_forward: inputs must be rank-4 N,C,H,W");
  }
  if (gating.dim(0) != skip.dim(0) || gating.dim(2) != skip.dim(2) ||
      gating.dim(3) != skip.dim(3)) {
    throw ShapeError("ag_forward: gating " + shape_to_string(gating.shape()) + " and skip " +
                     shape_to_string(skip.shape()) + " differ in batch or spatial size");
  }
  Tensor q = relu(batchnorm2d(gate.bn_q, conv2d(gate.conv_q, gating), mode));
  Tensor k = relu(batchnorm2d(gate.bn_k, conv2d(gate.conv_k, skip), mode));
  Tensor alpha = relu(add(q, k));
  return sigmoid(batchnorm2d(gate.bn_psi, conv2d(gate.conv_psi, alpha), mode));
}

Tensor ag_forward(AttentionGate& gate, const Tensor& gating, const Tensor& skip, Mode mode) {
  return mul(skip, attention_coefficients(gate, gating, skip, mode));
}

void append_parameters(const Conv2d& conv, const std::string& prefix, NamedTensors& out) {
  out.emplace_back(prefix + ".weight", conv.weight);
  out.emplace_back(prefix + ".bias", conv.bias);
}

void append_parameters(const BatchNorm2d& bn, const std::string& prefix, NamedTensors& out) {
  out.emplace_back(prefix + ".gamma", bn.gamma);
  out.emplace_back(prefix + ".beta", bn.beta);
}

void append_buffers(const BatchNorm2d& bn, const std::string& prefix, NamedTensors& out) {
  out.emplace_back(prefix + ".running_mean", bn.running_mean);
  out.emplace_back(prefix + ".running_var", bn.running_var);
}

void append_parameters(const AttentionGate& gate, const std::string& prefix, NamedTensors& out) {
  append_parameters(gate.conv_q, prefix + ".conv_q", out);
  append_parameters(gate.bn_q, prefix + ".bn_q", out);
  append_parameters(gate.conv_k, prefix + ".conv_k", out);
  append_parameters(gate.bn_k, prefix + ".bn_k", out);
  append_parameters(gate.conv_psi, prefix + ".conv_psi", out);
  append_parameters(gate.bn_psi, prefix + ".bn_psi", out);
}

void append_buffers(const AttentionGate& gate, const std::string& prefix, NamedTensors& out) {
  append_buffers(gate.bn_q, prefix + ".bn_q", out);
  append_buffers(gate.bn_k, prefix + ".bn_k", out);
  append_buffers(gate.bn_psi, prefix + ".bn_psi", out);
}

void init_he(AttentionGate& gate, std::mt19937_64& rng) {
  init_he(gate.conv_q, rng);
  init_he(gate.conv_k, rng);
  init_he(gate.conv_psi, rng);
}

}  // namespace salfau
