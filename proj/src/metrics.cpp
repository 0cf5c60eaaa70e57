#include "salfau/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "salfau/errors.hpp"
#include "salfau/parallel.hpp"

namespace salfau {

void MetricConfig::validate() const {
  if (!(beta2 > 0.0)) throw ConfigError("beta2 must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
  if (thresholds < 2) throw ConfigError("thresholds must be at least 2");
}

namespace {

void require_same_size(const Map& P, const Map& G, const char* op) {
  if (P.height != G.height || P.width != G.width || P.size() != P.height * P.width ||
      G.size() != G.height * G.width) {
    throw ShapeError(std::string(op) + ": prediction " + std::to_string(P.height) + "x" +
                     std::to_string(P.width) + " and ground truth " + std::to_string(G.height) +
                     "x" + std::to_string(G.width) + " differ");
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Object similarity of the values x selected by a region.
double object_score(const std::vector<double>& x, double eps) {
  if (x.empty()) return 0.0;
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  const double sigma = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(x.size() - 1, 1)));
  return 2.0 * m / (m * m + 1.0 + sigma + eps);
}

double object_measure(const Map& P, const Map& G, double eps) {
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (G.values[i] > 0.5) {
      fg.push_back(P.values[i]);
    } else {
      bg.push_back(1.0 - P.values[i]);
    }
  }
  const double u = static_cast<double>(fg.size()) / static_cast<double>(P.size());
  return u * object_score(fg, eps) + (1.0 - u) * object_score(bg, eps);
}

// Structural similarity of one rectangular block [r0,r1) x [c0,c1).
double block_ssim(const Map& P, const Map& G, std::size_t r0, std::size_t r1, std::size_t c0,
                  std::size_t c1, double eps) {
  const std::size_t n = (r1 - r0) * (c1 - c0);
  if (n == 0) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = r0; i < r1; ++i) {
    for (std::size_t j = c0; j < c1; ++j) {
      mx += P(i, j);
      my += G(i, j);
    }
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t i = r0; i < r1; ++i) {
    for (std::size_t j = c0; j < c1; ++j) {
      const double dx = P(i, j) - mx, dy = G(i, j) - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  }
  const double denom = static_cast<double>(std::max<std::size_t>(n - 1, 1));
  vx /= denom;
  vy /= denom;
  cxy /= denom;
  const double a = 4.0 * mx * my * cxy;
  const double b = (mx * mx + my * my) * (vx + vy);
  if (a != 0.0) return a / (b + eps);
  return b == 0.0 ? 1.0 : 0.0;
}

double region_measure(const Map& P, const Map& G, double eps) {
  const std::size_t H = G.height, W = G.width;
  double sx = 0.0, sy = 0.0, count = 0.0;
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      if (G(i, j) > 0.5) {
        sy += static_cast<double>(i);
        sx += static_cast<double>(j);
        count += 1.0;
      }
    }
  }
  // Centroid rounded half away from zero, then shifted past it so the first
  // blocks include the centroid row and column.
  const std::size_t cx = static_cast<std::size_t>(std::round(sx / count)) + 1;
  const std::size_t cy = static_cast<std::size_t>(std::round(sy / count)) + 1;
  const double area = static_cast<double>(H * W);
  const double w1 = static_cast<double>(cx * cy) / area;
  const double w2 = static_cast<double>((W - cx) * cy) / area;
  const double w3 = static_cast<double>(cx * (H - cy)) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * block_ssim(P, G, 0, cy, 0, cx, eps) + w2 * block_ssim(P, G, 0, cy, cx, W, eps) +
         w3 * block_ssim(P, G, cy, H, 0, cx, eps) + w4 * block_ssim(P, G, cy, H, cx, W, eps);
}

std::size_t count_positive(const Map& G) {
  std::size_t n = 0;
  for (double v : G.values) n += v > 0.5 ? 1 : 0;
  return n;
}

double fraction_positive(const Map& G) {
  return static_cast<double>(count_positive(G)) / static_cast<double>(G.size());
}

}  // namespace

Map prediction_map(const Raster& raster) {
  if (raster.channels != 1) throw ShapeError("prediction map must have one channel");
  Map m{raster.height, raster.width, {}};
  m.values.reserve(raster.pixels.size());
  for (std::uint8_t v : raster.pixels) m.values.push_back(v / 255.0);
  return m;
}

Map ground_truth_map(const Raster& raster) {
  if (raster.channels != 1) throw ShapeError("ground truth map must have one channel");
  Map m{raster.height, raster.width, {}};
  m.values.reserve(raster.pixels.size());
  for (std::uint8_t v : raster.pixels) m.values.push_back(v >= 128 ? 1.0 : 0.0);
  return m;
}

Map tensor_map(const Tensor& t) {
  const Shape& s = t.shape();
  const bool ok = (s.size() == 3 && s[0] == 1) || (s.size() == 4 && s[0] == 1 && s[1] == 1);
  if (!ok) throw ShapeError("expected a [1,H,W] map, got " + shape_to_string(s));
  return {s[s.size() - 2], s[s.size() - 1], t.to_vector()};
}

double mae(const Map& P, const Map& G) {
  require_same_size(P, G, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) s += std::abs(P.values[i] - G.values[i]);
  return s / static_cast<double>(P.size());
}

double max_f_beta(const Map& P, const Map& G, const MetricConfig& cfg) {
  require_same_size(P, G, "max_f_beta");
  const std::size_t positives = count_positive(G);
  if (positives == 0) return 0.0;
  double best = 0.0;
  for (std::size_t k = 0; k < cfg.thresholds; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(cfg.thresholds - 1);
    std::size_t tp = 0, predicted = 0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      if (P.values[i] > t) {
        ++predicted;
        if (G.values[i] > 0.5) ++tp;
      }
    }
    const double precision = predicted == 0 ? 1.0 : static_cast<double>(tp) / predicted;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double denom = cfg.beta2 * precision + recall;
    const double f = denom == 0.0 ? 0.0 : (1.0 + cfg.beta2) * precision * recall / denom;
    best = std::max(best, f);
  }
  return best;
}

double s_measure(const Map& P, const Map& G, const MetricConfig& cfg) {
  require_same_size(P, G, "s_measure");
  const double y = fraction_positive(G);
  if (y == 0.0) return 1.0 - mean_of(P.values);
  if (y == 1.0) return mean_of(P.values);
  const double s = cfg.alpha * object_measure(P, G, cfg.eps) +
                   (1.0 - cfg.alpha) * region_measure(P, G, cfg.eps);
  return std::max(0.0, s);
}

double e_measure_binary(const std::vector<bool>& B, const Map& G, double eps) {
  const std::size_t n = G.size();
  const double y = fraction_positive(G);
  double total = 0.0;
  if (y == 0.0 || y == 1.0) {
    for (std::size_t i = 0; i < n; ++i) total += (B[i] == (y == 1.0)) ? 1.0 : 0.0;
  } else {
    double mb = 0.0;
    for (bool b : B) mb += b ? 1.0 : 0.0;
    mb /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = (G.values[i] > 0.5 ? 1.0 : 0.0) - y;
      const double b = (B[i] ? 1.0 : 0.0) - mb;
      const double xi = 2.0 * g * b / (g * g + b * b + eps);
      total += (xi + 1.0) * (xi + 1.0) / 4.0;
    }
  }
  return total / static_cast<double>(n);
}

double e_measure(const Map& P, const Map& G, const MetricConfig& cfg) {
  require_same_size(P, G, "e_measure");
  std::vector<bool> B(P.size());
  if (cfg.em_mode == EmThresholdMode::Adaptive) {
    const double t = std::min(1.0, 2.0 * mean_of(P.values));
    for (std::size_t i = 0; i < P.size(); ++i) B[i] = P.values[i] >= t && P.values[i] > 0.0;
    return e_measure_binary(B, G, cfg.eps);
  }
  double best = 0.0;
  for (std::size_t k = 0; k < cfg.thresholds; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(cfg.thresholds - 1);
    for (std::size_t i = 0; i < P.size(); ++i) B[i] = P.values[i] > t;
    best = std::max(best, e_measure_binary(B, G, cfg.eps));
  }
  return best;
}

MetricReport evaluate_dataset(const std::vector<NamedPair>& pairs, const MetricConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw ContractError("evaluate_dataset: no image pairs");
  std::vector<ImageScores> scores(pairs.size());
  std::vector<std::string> errors(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const NamedPair& p = pairs[i];
    ImageScores& s = scores[i];
    s.name = p.name;
    try {
      s.mae = mae(p.prediction, p.ground_truth);
      s.max_f = max_f_beta(p.prediction, p.ground_truth, cfg);
      s.s_measure = s_measure(p.prediction, p.ground_truth, cfg);
      s.e_measure = e_measure(p.prediction, p.ground_truth, cfg);
      s.empty_ground_truth = fraction_positive(p.ground_truth) == 0.0;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  MetricReport report;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (errors[i].empty()) {
      report.images.push_back(scores[i]);
    } else {
      report.skipped.push_back({pairs[i].name, errors[i]});
    }
  }
  report.mean.name = "MEAN";
  for (const ImageScores& s : report.images) {
    report.mean.mae += s.mae;
    report.mean.max_f += s.max_f;
    report.mean.s_measure += s.s_measure;
    report.mean.e_measure += s.e_measure;
  }
  if (!report.images.empty()) {
    const double n = static_cast<double>(report.images.size());
    report.mean.mae /= n;
    report.mean.max_f /= n;
    report.mean.s_measure /= n;
    report.mean.e_measure /= n;
  }
  return report;
}

MetricReport evaluate_directories(const std::filesystem::path& pred_dir,
                                  const std::filesystem::path& gt_dir, const MetricConfig& cfg) {
  auto list = [](const std::filesystem::path& dir) {
    std::map<std::string, std::filesystem::path> files;
    std::error_code ec;
    std::filesystem::directory_iterator it(dir, ec);
    if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
    for (const auto& entry : it) {
      if (entry.path().extension() == ".pgm") files[entry.path().stem().string()] = entry.path();
    }
    return files;
  };
  const auto preds = list(pred_dir);
  const auto gts = list(gt_dir);
  std::vector<NamedPair> pairs;
  std::vector<SkippedImage> unreadable;
  for (const auto& [name, pred_path] : preds) {
    auto it = gts.find(name);
    if (it == gts.end()) continue;
    try {
      NamedPair p{name, prediction_map(read_image(pred_path)), ground_truth_map(read_image(it->second))};
      pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      unreadable.push_back({name, e.what()});
    }
  }
  if (pairs.empty() && unreadable.empty()) {
    throw IoError("no common .pgm names in " + pred_dir.string() + " and " + gt_dir.string());
  }
  MetricReport report;
  if (!pairs.empty()) {
    report = evaluate_dataset(pairs, cfg);
  } else {
    report.mean.name = "MEAN";
  }
  report.skipped.insert(report.skipped.end(), unreadable.begin(), unreadable.end());
  std::sort(report.skipped.begin(), report.skipped.end(),
            [](const SkippedImage& a, const SkippedImage& b) { return a.name < b.name; });
  return report;
}

std::string format_report(const MetricReport& report) {
  std::string out;
  auto line = [&](const ImageScores& s) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "\t%.6f\t%.6f\t%.6f\t%.6f\n", s.mae, s.max_f, s.s_measure,
                  s.e_measure);
    out += s.name + buf;
  };
  for (const ImageScores& s : report.images) line(s);
  for (const ImageScores& s : report.images) {
    if (s.empty_ground_truth) out += "# flagged\t" + s.name + "\tempty ground truth, maxF set to 0\n";
  }
  for (const SkippedImage& s : report.skipped) {
    std::string reason = s.reason;
    std::replace(reason.begin(), reason.end(), '\n', ' ');
    out += "# skipped\t" + s.name + "\t" + reason + "\n";
  }
  line(report.mean);
  return out;
}

void write_report(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string text = format_report(report);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace salfau
