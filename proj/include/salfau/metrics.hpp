#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "salfau/data.hpp"

namespace salfau {

// Row-major H x W map of doubles.
struct Map {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  static Map filled(std::size_t height, std::size_t width, double value) {
    return {height, width, std::vector<double>(height * width, value)};
  }
  std::size_t size() const { return values.size(); }
  double operator()(std::size_t i, std::size_t j) const { return values[i * width + j]; }
};

enum class EmThresholdMode { Adaptive, Max };

struct MetricConfig {
  double beta2 = 0.3;
  double alpha = 0.5;
  std::size_t thresholds = 256;
  double eps = 1e-12;
  EmThresholdMode em_mode = EmThresholdMode::Adaptive;

  // Throws ConfigError unless beta2 > 0, alpha in [0,1] and thresholds >= 2.
  void validate() const;
};

// Prediction map from 8-bit values: v / 255.
Map prediction_map(const Raster& raster);
// Ground truth from 8-bit values: 1 where v >= 128, else 0.
Map ground_truth_map(const Raster& raster);
// Map view of a [1,H,W] or [1,1,H,W] tensor.
Map tensor_map(const Tensor& t);

double mae(const Map& P, const Map& G);

// Maximum F-beta over thresholds t_i = i / (thresholds - 1), binarizing with
// P > t_i. Precision is 1 when nothing is predicted positive. Returns 0 for
// an all-zero G.
double max_f_beta(const Map& P, const Map& G, const MetricConfig& cfg = {});

double s_measure(const Map& P, const Map& G, const MetricConfig& cfg = {});

// Adaptive mode binarizes with P >= min(1, 2 mean(P)) and P > 0; max mode
// returns the best score over the F-beta threshold grid.
double e_measure(const Map& P, const Map& G, const MetricConfig& cfg = {});

// E-measure of an already binarized prediction.
double e_measure_binary(const std::vector<bool>& B, const Map& G, double eps = 1e-12);

struct ImageScores {
  std::string name;
  double mae = 0;
  double max_f = 0;
  double s_measure = 0;
  double e_measure = 0;
  bool empty_ground_truth = false;  // max_f forced to 0
};

struct SkippedImage {
  std::string name;
  std::string reason;
};

struct MetricReport {
  std::vector<ImageScores> images;
  std::vector<SkippedImage> skipped;
  ImageScores mean;  // unweighted means over `images`, name "MEAN"
};

struct NamedPair {
  std::string name;
  Map prediction;
  Map ground_truth;
};

MetricReport evaluate_dataset(const std::vector<NamedPair>& pairs, const MetricConfig& cfg = {});

// Pairs <stem>.pgm files present in both directories (sorted by name). Pairs
// that cannot be read or differ in size are reported as skipped. Throws
// IoError when the directories share no names.
MetricReport evaluate_directories(const std::filesystem::path& pred_dir,
                                  const std::filesystem::path& gt_dir,
                                  const MetricConfig& cfg = {});

// name<TAB>mae<TAB>maxF<TAB>sm<TAB>em per image with 6 decimals, '#' lines
// for flagged and skipped images, then the MEAN line.
std::string format_report(const MetricReport& report);
void write_report(const std::filesystem::path& path, const MetricReport& report);

}  // namespace salfau
