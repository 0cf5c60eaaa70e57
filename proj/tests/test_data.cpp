#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "salfau/data.hpp"
#include "salfau/errors.hpp"
#include "support.hpp"

using namespace salfau;
namespace fs = std::filesystem;
using salfau::testing::random_tensor;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class F>
std::string parse_error_of(F f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

// Value at channel c, row i, column j of a [C,H,W] tensor.
double at(const Tensor& t, std::size_t c, std::size_t i, std::size_t j) {
  const Shape& s = t.shape();
  return t.to_vector()[(c * s[1] + i) * s[2] + j];
}

}  // namespace

TEST_CASE("P5 decode hand example") {
  const std::string bytes = std::string("P5\n2 2\n255\n") + std::string("\x00\xff\x80\x40", 4);
  const Raster r = decode_pnm(bytes);
  CHECK(r.channels == 1);
  CHECK(r.height == 2);
  CHECK(r.width == 2);
  CHECK(r.pixels == std::vector<std::uint8_t>{0, 255, 128, 64});
  const auto v = raster_to_tensor(r, Precision::Double).to_vector();
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 1.0);
  CHECK(v[2] == doctest::Approx(0.50196).epsilon(1e-4));
  CHECK(v[3] == doctest::Approx(0.25098).epsilon(1e-4));
}

TEST_CASE("header comments and P6 layout") {
  const std::string bytes = std::string("P6 # rgb\n# size follows\n1 2\n# depth\n255\n") + "abcdef";
  const Raster r = decode_pnm(bytes);
  CHECK(r.channels == 3);
  CHECK(r.height == 2);
  CHECK(r.width == 1);
  const Tensor t = raster_to_tensor(r, Precision::Double);
  CHECK(t.shape() == Shape{3, 2, 1});
  CHECK(at(t, 1, 0, 0) * 255 == doctest::Approx('b'));
  CHECK(at(t, 0, 1, 0) * 255 == doctest::Approx('d'));
}

TEST_CASE("malformed files report what went wrong") {
  CHECK(parse_error_of([] { decode_pnm("P3\n1 1\n255\n0 0 0\n"); }).find("unsupported magic") != std::string::npos);
  CHECK(parse_error_of([] { decode_pnm("P5\n1 1\n65535\n\x00\x00"); }).find("maxval") != std::string::npos);
  const std::string truncated = parse_error_of([] { decode_pnm("P5\n2 2\n255\nabc"); });
  CHECK(truncated.find("truncated") != std::string::npos);
  CHECK(truncated.find("at byte 14") != std::string::npos);
  try {
    decode_pnm("P5\n2 2\n255\nabc");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 14);
  }
  CHECK_THROWS_AS(read_image("/nonexistent/salfau.pgm"), IoError);
}

TEST_CASE("encode and decode round-trip") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> byte(0, 255);
  for (std::size_t channels : {1, 3}) {
    Raster r{channels, 5, 7, {}};
    for (std::size_t i = 0; i < channels * 35; ++i) r.pixels.push_back(static_cast<std::uint8_t>(byte(rng)));
    const std::string bytes = encode_pnm(r);
    CHECK(bytes.starts_with(channels == 1 ? "P5\n7 5\n255\n" : "P6\n7 5\n255\n"));
    CHECK(decode_pnm(bytes) == r);
  }
}

TEST_CASE("map quantization") {
  CHECK(quantize_map(Tensor::full({1, 2, 2}, 1.0)).pixels == std::vector<std::uint8_t>(4, 255));
  CHECK(quantize_map(Tensor::full({1, 2, 2}, 0.5)).pixels == std::vector<std::uint8_t>(4, 128));
  CHECK(quantize_map(Tensor::full({1, 1, 2, 2}, 0.0)).pixels == std::vector<std::uint8_t>(4, 0));
  CHECK_THROWS_AS(quantize_map(Tensor::full({1, 2, 2}, 1.01)), ContractError);
  CHECK_THROWS_AS(quantize_map(Tensor::full({1, 2, 2}, -0.01)), ContractError);
  CHECK_THROWS_AS(quantize_map(Tensor::full({2, 2, 2}, 0.5)), ShapeError);
}

TEST_CASE("write_pgm then read_image is the identity on quantized maps") {
  TempDir dir("salfau_test_pgm");
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<double> v(6 * 9);
  for (double& x : v) x = byte(rng) / 255.0;
  const Tensor map = Tensor::from_values({1, 6, 9}, v, Precision::Double);
  write_pgm(dir.path / "m.pgm", map);
  const Raster r = read_image(dir.path / "m.pgm");
  CHECK(r.width == 9);
  CHECK(r.height == 6);
  CHECK(raster_to_tensor(r, Precision::Double).to_vector() == v);
  CHECK(slurp(dir.path / "m.pgm").starts_with("P5\n9 6\n255\n"));
}

TEST_CASE("manifest round-trip and loading") {
  TempDir dir("salfau_test_manifest");
  fs::create_directories(dir.path / "img");
  write_image(dir.path / "img" / "a.ppm", Raster{3, 2, 2, std::vector<std::uint8_t>(12, 10)});
  write_image(dir.path / "img" / "a.pgm", Raster{1, 2, 2, {0, 255, 0, 255}});
  const DatasetManifest m{{dir.path / "img" / "a.ppm", dir.path / "img" / "a.pgm"}};
  write_manifest(dir.path / "list.tsv", m);
  CHECK(slurp(dir.path / "list.tsv").find("img/a.ppm\timg/a.pgm") != std::string::npos);

  std::ofstream(dir.path / "list.tsv", std::ios::app) << "# a comment\n\n";
  const DatasetManifest back = read_manifest(dir.path / "list.tsv");
  REQUIRE(back.size() == 1);
  CHECK(fs::equivalent(back[0].image, m[0].image));

  const auto samples = load_samples(back);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].name == "a");
  CHECK(samples[0].image.shape() == Shape{3, 2, 2});
  CHECK(samples[0].mask.to_vector() == std::vector<double>{0, 1, 0, 1});

  CHECK_THROWS(load_samples({m[0], m[0]}));
  CHECK_THROWS_AS(load_samples({{dir.path / "missing.ppm", m[0].mask}}), IoError);
}

TEST_CASE("resize scale for training crops") {
  CHECK(train_resize_size(288) == 320);
  CHECK(train_resize_size(64) == 72);
  CHECK(train_resize_size(16) == 18);
}

TEST_CASE("forced transform returns the top-left window") {
  std::mt19937_64 rng(3);
  const Sample s{random_tensor({3, 320, 320}, rng, 0, 1, Precision::Single),
                 random_tensor({1, 320, 320}, rng, 0, 1, Precision::Single), "x"};
  const Sample out = apply_train_transform(s, {320, 0, 0, false}, 288);
  REQUIRE(out.image.shape() == Shape{3, 288, 288});
  REQUIRE(out.mask.shape() == Shape{1, 288, 288});
  const auto in = s.image.to_vector(), got = out.image.to_vector();
  bool window = true;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 288; ++i)
      for (std::size_t j = 0; j < 288; ++j) window = window && got[(c * 288 + i) * 288 + j] == in[(c * 320 + i) * 320 + j];
  CHECK(window);
}

TEST_CASE("flipping twice restores the crop") {
  std::mt19937_64 rng(4);
  const Sample s{random_tensor({3, 20, 20}, rng, 0, 1, Precision::Single),
                 random_tensor({1, 20, 20}, rng, 0, 1, Precision::Single), "x"};
  const TrainTransform t{20, 1, 2, true};
  const Sample once = apply_train_transform(s, t, 18);
  const Sample twice = apply_train_transform(once, {18, 0, 0, true}, 18);
  CHECK(twice.image.to_vector() == apply_train_transform(s, {20, 1, 2, false}, 18).image.to_vector());
  CHECK(twice.mask.to_vector() == apply_train_transform(s, {20, 1, 2, false}, 18).mask.to_vector());
}

TEST_CASE("image and mask share one geometric transform") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pos(0, 63);
  std::mt19937_64 draw_rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = pos(rng), c = pos(rng);
    std::vector<double> img(3 * 64 * 64, 0.0), mask(64 * 64, 0.0);
    img[(1 * 64 + r) * 64 + c] = 1.0;
    mask[r * 64 + c] = 1.0;
    const Sample s{Tensor::from_values({3, 64, 64}, img), Tensor::from_values({1, 64, 64}, mask), "d"};
    const Sample out = preprocess_train(s, 64, draw_rng);
    const auto oi = out.image.to_vector(), om = out.mask.to_vector();
    bool same = true;
    for (std::size_t k = 0; k < om.size(); ++k) same = same && oi[64 * 64 + k] == om[k];
    CHECK(same);
  }
}

TEST_CASE("transform draws stay inside the resized frame") {
  std::mt19937_64 rng(7);
  std::set<bool> flips;
  for (int i = 0; i < 200; ++i) {
    const TrainTransform t = draw_train_transform(288, rng);
    CHECK(t.resize == 320);
    CHECK(t.top <= 32);
    CHECK(t.left <= 32);
    flips.insert(t.flip);
  }
  CHECK(flips.size() == 2);
}

TEST_CASE("test-time resizing and restoration") {
  std::mt19937_64 rng(8);
  const Tensor square = random_tensor({3, 320, 320}, rng, 0, 1, Precision::Single);
  const TestInput same = preprocess_test(square);
  CHECK(same.image.shape() == Shape{1, 3, 320, 320});
  CHECK(same.image.to_vector() == square.to_vector());

  const TestInput big = preprocess_test(random_tensor({3, 480, 640}, rng, 0, 1, Precision::Single));
  CHECK(big.image.shape() == Shape{1, 3, 320, 320});
  CHECK(big.original_height == 480);
  CHECK(big.original_width == 640);
  const Tensor back = restore_size(Tensor::full({1, 1, 320, 320}, 0.25), 480, 640);
  CHECK(back.shape() == Shape{1, 1, 480, 640});
  for (double v : back.to_vector()) REQUIRE(v == doctest::Approx(0.25));
}

TEST_CASE("synthetic data generator") {
  TempDir a("salfau_test_syn_a"), b("salfau_test_syn_b");
  const DatasetManifest ma = gen_synthetic(10, 48, 7, a.path);
  gen_synthetic(10, 48, 7, b.path);
  REQUIRE(ma.size() == 10);
  CHECK(read_manifest(a.path / "manifest.tsv").size() == 10);
  for (const ManifestEntry& e : ma) {
    REQUIRE(fs::exists(e.image));
    REQUIRE(fs::exists(e.mask));
    const auto rel_img = fs::relative(e.image, a.path), rel_mask = fs::relative(e.mask, a.path);
    CHECK(slurp(e.image) == slurp(b.path / rel_img));
    CHECK(slurp(e.mask) == slurp(b.path / rel_mask));

    const Raster mask = read_image(e.mask);
    const Raster img = read_image(e.image);
    CHECK(img.channels == 3);
    CHECK(mask.width == 48);
    std::size_t fg = 0;
    bool binary = true;
    for (auto v : mask.pixels) {
      binary = binary && (v == 0 || v == 255);
      fg += v >= 128;
    }
    CHECK(binary);
    const double frac = static_cast<double>(fg) / mask.pixels.size();
    CHECK(frac >= 0.05);
    CHECK(frac <= 0.6);
  }
  CHECK(synthesize_pair(32, 1, 0).image != synthesize_pair(32, 2, 0).image);
  CHECK(synthesize_pair(32, 1, 3).image == synthesize_pair(32, 1, 3).image);
  CHECK_THROWS(gen_synthetic(0, 48, 1, a.path));
  CHECK_THROWS(gen_synthetic(1, 8, 1, a.path));
}
