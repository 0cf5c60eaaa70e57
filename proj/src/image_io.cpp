#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "salfau/data.hpp"
#include "salfau/errors.hpp"
#include "storage_util.hpp"

namespace salfau {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t integer(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) throw ParseError(std::string(field) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      if (pos_ >= bytes_.size()) throw ParseError(std::string("truncated header reading ") + field, pos_);
      throw ParseError(std::string("expected integer for ") + field, pos_);
    }
    return value;
  }

  std::size_t pos_ = 0;
  std::string_view bytes_;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void dump(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

Raster decode_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("unsupported magic '" + std::string(bytes.substr(0, 2)) + "'", 0);
  }
  Raster r;
  r.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader h(bytes);
  h.pos_ = 2;
  if (h.pos_ < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[h.pos_])) &&
      bytes[h.pos_] != '#') {
    throw ParseError("unsupported magic '" + std::string(bytes.substr(0, 3)) + "'", 0);
  }
  r.width = h.integer("width");
  r.height = h.integer("height");
  const std::size_t maxval_at = (h.skip_space_and_comments(), h.pos_);
  const std::size_t maxval = h.integer("maxval");
  if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval), maxval_at);
  if (r.width == 0 || r.height == 0) throw ParseError("empty image", maxval_at);
  if (h.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[h.pos_]))) {
    throw ParseError("missing whitespace after maxval", h.pos_);
  }
  ++h.pos_;
  const std::size_t need = r.width * r.height * r.channels;
  const std::size_t have = bytes.size() - h.pos_;
  if (have < need) {
    throw ParseError("truncated payload: expected " + std::to_string(need) + " bytes, got " +
                         std::to_string(have),
                     bytes.size());
  }
  const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data() + h.pos_);
  r.pixels.assign(p, p + need);
  return r;
}

Raster read_image(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  try {
    return decode_pnm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

std::string encode_pnm(const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) {
    throw ContractError("encode_pnm: channels must be 1 or 3");
  }
  if (raster.pixels.size() != raster.width * raster.height * raster.channels) {
    throw ContractError("encode_pnm: pixel count does not match dimensions");
  }
  std::string out = raster.channels == 1 ? "P5\n" : "P6\n";
  out += std::to_string(raster.width) + " " + std::to_string(raster.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(raster.pixels.data()), raster.pixels.size());
  return out;
}

void write_image(const std::filesystem::path& path, const Raster& raster) {
  dump(path, encode_pnm(raster));
}

Raster quantize_map(const Tensor& map) {
  const Shape& s = map.shape();
  const bool ok = (s.size() == 3 && s[0] == 1) || (s.size() == 4 && s[0] == 1 && s[1] == 1);
  if (!ok) throw ShapeError("write_pgm: expected [1,H,W] map, got " + shape_to_string(s));
  Raster r{1, s[s.size() - 2], s[s.size() - 1], {}};
  r.pixels.reserve(map.numel());
  for (double v : map.to_vector()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError("write_pgm: value " + std::to_string(v) + " outside [0,1]");
    }
    r.pixels.push_back(static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5)));
  }
  return r;
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  write_image(path, quantize_map(map));
}

Tensor raster_to_tensor(const Raster& raster, Precision precision) {
  const std::size_t C = raster.channels, H = raster.height, W = raster.width;
  return detail::dispatch(precision, [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> v(C * H * W);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < H * W; ++i) {
        v[c * H * W + i] = static_cast<T>(raster.pixels[i * C + c] / 255.0);
      }
    }
    return Tensor::from_storage({C, H, W}, Storage(std::move(v)));
  });
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const std::string text = slurp(path);
  const std::filesystem::path base = path.parent_path();
  DatasetManifest manifest;
  std::size_t line_start = 0;
  while (line_start < text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) line_end = text.size();
    std::string line = text.substr(line_start, line_end - line_start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t offset = line_start;
    line_start = line_end + 1;
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos || tab == 0 ||
        tab + 1 == line.size()) {
      throw ParseError(path.string() + ": expected 'image<TAB>mask'", offset);
    }
    std::filesystem::path image = line.substr(0, tab);
    std::filesystem::path mask = line.substr(tab + 1);
    if (image.is_relative()) image = base / image;
    if (mask.is_relative()) mask = base / mask;
    manifest.push_back({image, mask});
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  const std::filesystem::path base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    const std::filesystem::path r = p.lexically_relative(base.empty() ? "." : base);
    return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
  };
  std::string out;
  for (const ManifestEntry& e : manifest) out += rel(e.image) + "\t" + rel(e.mask) + "\n";
  dump(path, out);
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, Precision precision) {
  std::vector<Sample> samples;
  std::set<std::string> names;
  for (const ManifestEntry& e : manifest) {
    Sample s{raster_to_tensor(read_image(e.image), precision),
             raster_to_tensor(read_image(e.mask), precision), e.image.stem().string()};
    if (!names.insert(s.name).second) throw ParseError("duplicate sample name '" + s.name + "'", 0);
    if (s.image.dim(0) != 3) throw ParseError(e.image.string() + ": expected an RGB (P6) image", 0);
    if (s.mask.dim(0) != 1) throw ParseError(e.mask.string() + ": expected a gray (P5) mask", 0);
    if (s.image.dim(1) != s.mask.dim(1) || s.image.dim(2) != s.mask.dim(2)) {
      throw ShapeError("sample '" + s.name + "': image and mask sizes differ");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace salfau
