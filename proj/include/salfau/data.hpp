#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "salfau/tensor.hpp"

namespace salfau {

// 8-bit image, interleaved (H, W, C) like the netpbm payload.
struct Raster {
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Raster&) const = default;
};

// Binary P5/P6 with maxval 255; '#' comments allowed between header fields.
// Throws ParseError with the byte offset of the problem.
Raster decode_pnm(std::string_view bytes);
Raster read_image(const std::filesystem::path& path);

// P5 for one channel, P6 for three. Header "P5\n<w> <h>\n255\n".
std::string encode_pnm(const Raster& raster);
void write_image(const std::filesystem::path& path, const Raster& raster);

// Quantizes a [1,H,W] or [1,1,H,W] map in [0,1] with round(v * 255), halves
// up. Out-of-range or non-finite values throw ContractError.
Raster quantize_map(const Tensor& map);
void write_pgm(const std::filesystem::path& path, const Tensor& map);

// [C,H,W] with values v / 255.
Tensor raster_to_tensor(const Raster& raster, Precision precision = Precision::Single);

struct Sample {
  Tensor image;  // [3,H,W] in [0,1]
  Tensor mask;   // [1,H,W] in [0,1]
  std::string name;
};

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path mask;
};

using DatasetManifest = std::vector<ManifestEntry>;

// One "image<TAB>mask" pair per line; blank lines and '#' comments are
// skipped. Relative paths resolve against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
// Paths are written relative to the manifest's directory when possible.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Decodes every pair. Names are image stems and must be unique.
std::vector<Sample> load_samples(const DatasetManifest& manifest,
                                 Precision precision = Precision::Single);

// Bilinear resize of a [C,H,W] tensor (half-pixel centers).
Tensor resize_image(const Tensor& chw, std::size_t height, std::size_t width);

// Stacks equally shaped [C,H,W] tensors into [N,C,H,W].
Tensor stack_batch(std::span<const Tensor> items);

// Side of the intermediate square before cropping to `crop`: ceil(10 * crop / 9),
// so 288 -> 320.
std::size_t train_resize_size(std::size_t crop);

struct TrainTransform {
  std::size_t resize = 0;
  std::size_t top = 0;
  std::size_t left = 0;
  bool flip = false;
};

TrainTransform draw_train_transform(std::size_t crop, std::mt19937_64& rng);
// Resize both tensors to transform.resize, crop a crop x crop window at
// (top, left), then mirror horizontally when flip is set.
Sample apply_train_transform(const Sample& sample, const TrainTransform& transform,
                             std::size_t crop);
Sample preprocess_train(const Sample& sample, std::size_t crop, std::mt19937_64& rng);

struct TestInput {
  Tensor image;  // [1,3,target,target]
  std::size_t original_height = 0;
  std::size_t original_width = 0;
};

TestInput preprocess_test(const Tensor& image, std::size_t target = 320);
// Resizes an [N,C,h,w] prediction back to height x width.
Tensor restore_size(const Tensor& map, std::size_t height, std::size_t width);

// Writes images/NNNN.ppm, masks/NNNN.pgm and manifest.tsv under out_dir.
// Output bytes depend only on (count, size, seed).
DatasetManifest gen_synthetic(std::size_t count, std::size_t size, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

// The in-memory generator behind gen_synthetic: image (RGB) and mask (gray).
struct SyntheticPair {
  Raster image;
  Raster mask;
};
SyntheticPair synthesize_pair(std::size_t size, std::uint64_t seed, std::size_t index);

}  // namespace salfau
