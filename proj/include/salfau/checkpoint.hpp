#pragma once

// SFAU1 checkpoint container.
//
//   "SFAU1\n"
//   u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//               product(dims) x f32 values
//   optional optimizer section: "ADAM1\n" followed by the same layout
//
// All integers and floats are little-endian.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "salfau/attention_gate.hpp"
#include "salfau/salfaunet.hpp"

namespace salfau {

struct CheckpointTensor {
  std::string name;
  Shape shape;  // empty for a scalar
  std::vector<float> values;

  bool operator==(const CheckpointTensor&) const = default;
};

using CheckpointSection = std::vector<CheckpointTensor>;

struct Checkpoint {
  CheckpointSection model;
  std::optional<CheckpointSection> optimizer;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
// Throws ParseError ("not a SFAU1 checkpoint", "truncated tensor '<name>'", ...).
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Snapshot of named tensors (converted to f32).
CheckpointSection export_tensors(const NamedTensors& tensors);
// Copies values into the targets by name. Every target must be present with
// an identical shape.
void import_tensors(const CheckpointSection& section, const NamedTensors& targets);

// Rebuilds a network whose base width is read from the stored enc0 weights.
SalFAUNet network_from_checkpoint(const Checkpoint& checkpoint, std::size_t input_size,
                                  Precision precision = Precision::Single);

}  // namespace salfau
