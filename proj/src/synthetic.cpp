#include <algorithm>
#include <array>
#include <cmath>

#include "salfau/data.hpp"
#include "salfau/errors.hpp"

namespace salfau {

namespace {

constexpr double kMinForeground = 0.05;
constexpr double kMaxForeground = 0.6;
constexpr int kNoiseGrid = 5;

using Color = std::array<double, 3>;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double color_distance(const Color& a, const Color& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

// Smooth background: a coarse random grid per channel, bilinearly spread.
std::vector<double> noise_background(std::size_t size, const Color& base, std::mt19937_64& rng) {
  std::vector<double> grid(3 * kNoiseGrid * kNoiseGrid);
  for (double& g : grid) g = uniform(rng, -40.0, 40.0);
  std::vector<double> out(size * size * 3);
  const double step = static_cast<double>(kNoiseGrid - 1) / static_cast<double>(size - 1);
  for (std::size_t i = 0; i < size; ++i) {
    const double gy = i * step;
    const int y0 = std::min(static_cast<int>(gy), kNoiseGrid - 2);
    const double fy = gy - y0;
    for (std::size_t j = 0; j < size; ++j) {
      const double gx = j * step;
      const int x0 = std::min(static_cast<int>(gx), kNoiseGrid - 2);
      const double fx = gx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double* g = grid.data() + c * kNoiseGrid * kNoiseGrid;
        const double top = g[y0 * kNoiseGrid + x0] * (1 - fx) + g[y0 * kNoiseGrid + x0 + 1] * fx;
        const double bot =
            g[(y0 + 1) * kNoiseGrid + x0] * (1 - fx) + g[(y0 + 1) * kNoiseGrid + x0 + 1] * fx;
        out[(i * size + j) * 3 + c] = base[c] + top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

// Rasterizes one random shape inside a random box; returns its pixel mask.
std::vector<std::uint8_t> random_shape(std::size_t size, std::mt19937_64& rng) {
  const double s = static_cast<double>(size);
  const double bw = uniform(rng, 0.2 * s, 0.55 * s);
  const double bh = uniform(rng, 0.2 * s, 0.55 * s);
  const double x0 = uniform(rng, 0.0, s - bw);
  const double y0 = uniform(rng, 0.0, s - bh);
  const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
  std::array<double, 6> tri{};
  if (kind == 2) {
    tri = {x0 + uniform(rng, 0, bw), y0, x0, y0 + bh, x0 + bw, y0 + uniform(rng, 0.5 * bh, bh)};
  }
  std::vector<std::uint8_t> m(size * size, 0);
  for (std::size_t i = 0; i < size; ++i) {
    const double py = i + 0.5;
    for (std::size_t j = 0; j < size; ++j) {
      const double px = j + 0.5;
      bool inside = false;
      if (kind == 0) {
        inside = px >= x0 && px < x0 + bw && py >= y0 && py < y0 + bh;
      } else if (kind == 1) {
        const double dx = (px - (x0 + bw / 2)) / (bw / 2);
        const double dy = (py - (y0 + bh / 2)) / (bh / 2);
        inside = dx * dx + dy * dy <= 1.0;
      } else {
        auto edge = [&](int a, int b) {
          return (tri[2 * b] - tri[2 * a]) * (py - tri[2 * a + 1]) -
                 (tri[2 * b + 1] - tri[2 * a + 1]) * (px - tri[2 * a]);
        };
        const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
        inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
      }
      m[i * size + j] = inside ? 1 : 0;
    }
  }
  return m;
}

// True when the shape touches an existing one, including 8-neighbours.
bool overlaps(const std::vector<std::uint8_t>& shape, const std::vector<std::uint8_t>& taken,
              std::size_t size) {
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      if (!shape[i * size + j]) continue;
      for (std::size_t a = i ? i - 1 : 0; a <= std::min(size - 1, i + 1); ++a) {
        for (std::size_t b = j ? j - 1 : 0; b <= std::min(size - 1, j + 1); ++b) {
          if (taken[a * size + b]) return true;
        }
      }
    }
  }
  return false;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

}  // namespace

SyntheticPair synthesize_pair(std::size_t size, std::uint64_t seed, std::size_t index) {
  if (size < 16) throw ContractError("gen_synthetic: size must be at least 16");
  std::mt19937_64 rng(mix_seed(seed, index));
  const double total = static_cast<double>(size * size);
  for (;;) {
    const Color background{uniform(rng, 50, 205), uniform(rng, 50, 205), uniform(rng, 50, 205)};
    std::vector<double> rgb = noise_background(size, background, rng);
    std::vector<std::uint8_t> taken(size * size, 0);
    std::vector<Color> used{background};
    const int wanted = std::uniform_int_distribution<int>(1, 3)(rng);
    int placed = 0;
    for (int attempt = 0; attempt < 40 && placed < wanted; ++attempt) {
      std::vector<std::uint8_t> shape = random_shape(size, rng);
      const auto area = std::count(shape.begin(), shape.end(), 1);
      if (area < static_cast<long>(0.01 * total) || overlaps(shape, taken, size)) continue;
      Color color;
      bool distinct = false;
      for (int tries = 0; tries < 50 && !distinct; ++tries) {
        color = {uniform(rng, 0, 255), uniform(rng, 0, 255), uniform(rng, 0, 255)};
        distinct = std::all_of(used.begin(), used.end(),
                               [&](const Color& u) { return color_distance(color, u) >= 150.0; });
      }
      if (!distinct) continue;
      used.push_back(color);
      for (std::size_t p = 0; p < shape.size(); ++p) {
        if (!shape[p]) continue;
        taken[p] = 1;
        for (std::size_t c = 0; c < 3; ++c) rgb[p * 3 + c] = color[c] + uniform(rng, -10, 10);
      }
      ++placed;
    }
    const double fraction = std::count(taken.begin(), taken.end(), 1) / total;
    if (placed == 0 || fraction < kMinForeground || fraction > kMaxForeground) continue;

    SyntheticPair pair{{3, size, size, {}}, {1, size, size, {}}};
    pair.image.pixels.resize(rgb.size());
    std::transform(rgb.begin(), rgb.end(), pair.image.pixels.begin(), to_byte);
    pair.mask.pixels.resize(taken.size());
    std::transform(taken.begin(), taken.end(), pair.mask.pixels.begin(),
                   [](std::uint8_t t) { return static_cast<std::uint8_t>(t ? 255 : 0); });
    return pair;
  }
}

DatasetManifest gen_synthetic(std::size_t count, std::size_t size, std::uint64_t seed,
                              const std::filesystem::path& out_dir) {
  if (count == 0) throw ContractError("gen_synthetic: count must be at least 1");
  if (size < 16) throw ContractError("gen_synthetic: size must be at least 16");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const std::size_t digits = std::max<std::size_t>(4, std::to_string(count - 1).size());
  DatasetManifest manifest;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name = std::to_string(i);
    name.insert(0, digits - name.size(), '0');
    SyntheticPair pair = synthesize_pair(size, seed, i);
    ManifestEntry e{out_dir / "images" / (name + ".ppm"),
                    out_dir / "masks" / (name + ".pgm")};
    write_image(e.image, pair.image);
    write_image(e.mask, pair.mask);
    manifest.push_back(std::move(e));
  }
  write_manifest(out_dir / "manifest.tsv", manifest);
  return manifest;
}

}  // namespace salfau
