#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli_app.hpp"
#include "salfau/checkpoint.hpp"
#include "salfau/data.hpp"
#include "salfau/salfaunet.hpp"

using namespace salfau;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Shared scratch area with a tiny dataset and a short training run.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "salfau_test_cli";
  fs::path data = root / "data";
  fs::path config = root / "toy.cfg";
  fs::path model = root / "model.sfau";

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    spit(config, "base_channels = 2\ninput_size = 16\nbatch = 2\nseed = 5\n");
    REQUIRE(run({"gen-data", "--out", data.string(), "--count", "4", "--size", "24", "--seed", "3"}).code == 0);
    REQUIRE(run({"train", "--data", (data / "manifest.tsv").string(), "--config", config.string(), "--out",
                 model.string(), "--iters", "3"})
                .code == 0);
  }
  ~Workspace() { fs::remove_all(root); }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"nonsense"}).code == 2);
  CHECK(run({"gen-data", "--out", "x", "--count", "0"}).code == 2);
  CHECK(run({"train", "--data", "m.tsv"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("shapes prints the stage plan") {
  const fs::path dir = fs::temp_directory_path() / "salfau_test_shapes";
  fs::create_directories(dir);
  const Result full = run({"shapes"});
  CHECK(full.code == 0);
  CHECK(full.out.find("enc4: 1024×18×18\n") != std::string::npos);

  spit(dir / "toy.cfg", "base_channels = 8\ninput_size = 64\n");
  CHECK(run({"shapes", "--config", (dir / "toy.cfg").string()}).out.find("enc4: 128×4×4\n") != std::string::npos);

  spit(dir / "bad.cfg", "input_size = 100\n");
  CHECK(run({"shapes", "--config", (dir / "bad.cfg").string()}).code == 2);

  spit(dir / "unknown.cfg", "learning_rate = 0.1\n");
  const Result unknown = run({"shapes", "--config", (dir / "unknown.cfg").string()});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("learning_rate") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("gen-data is reproducible") {
  Workspace& w = workspace();
  const fs::path again = w.root / "again";
  REQUIRE(run({"gen-data", "--out", again.string(), "--count", "4", "--size", "24", "--seed", "3"}).code == 0);
  for (const char* f : {"images/0000.ppm", "masks/0003.pgm", "manifest.tsv"}) {
    CHECK(slurp(w.data / f) == slurp(again / f));
  }
}

TEST_CASE("train writes a checkpoint and a loss log") {
  Workspace& w = workspace();
  const std::string log = slurp(w.model.string() + ".log");
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);
  CHECK(log.starts_with("1\t"));
  const Checkpoint ck = read_checkpoint(w.model);
  CHECK(ck.optimizer.has_value());

  const fs::path second = w.root / "second.sfau";
  REQUIRE(run({"train", "--data", (w.data / "manifest.tsv").string(), "--config", w.config.string(), "--out",
               second.string(), "--iters", "3"})
              .code == 0);
  CHECK(slurp(second.string() + ".log") == log);
  CHECK(slurp(second) == slurp(w.model));
}

TEST_CASE("zero iterations stores the initialization") {
  Workspace& w = workspace();
  const fs::path init = w.root / "init.sfau";
  REQUIRE(run({"train", "--data", (w.data / "manifest.tsv").string(), "--config", w.config.string(), "--out",
               init.string(), "--iters", "0"})
              .code == 0);
  CHECK(slurp(init.string() + ".log").empty());
  const SalFAUNet net = SalFAUNet::build({3, 2, 16}, 5);
  CHECK(read_checkpoint(init).model == export_tensors(net.state()));
}

TEST_CASE("predict restores the input size and is deterministic") {
  Workspace& w = workspace();
  const fs::path img = w.root / "wide.ppm";
  write_image(img, Raster{3, 20, 36, std::vector<std::uint8_t>(3 * 20 * 36, 90)});
  const fs::path a = w.root / "a.pgm", b = w.root / "b.pgm";
  REQUIRE(run({"predict", "--model", w.model.string(), "--input", img.string(), "--output", a.string(), "--size",
               "32"})
              .code == 0);
  REQUIRE(run({"predict", "--model", w.model.string(), "--input", img.string(), "--output", b.string(), "--size",
               "32"})
              .code == 0);
  const Raster out = read_image(a);
  CHECK(out.width == 36);
  CHECK(out.height == 20);
  CHECK(slurp(a) == slurp(b));
  CHECK(run({"predict", "--model", w.model.string(), "--input", img.string(), "--output", a.string(), "--size",
             "30"})
            .code == 2);
}

TEST_CASE("predict rejects damaged checkpoints") {
  Workspace& w = workspace();
  const fs::path img = w.data / "images" / "0000.ppm";
  const fs::path bad = w.root / "bad.sfau";
  spit(bad, "NOTSFAU");
  Result r = run({"predict", "--model", bad.string(), "--input", img.string(), "--output",
                  (w.root / "x.pgm").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("not a SFAU1 checkpoint") != std::string::npos);

  const std::string bytes = slurp(w.model);
  spit(bad, bytes.substr(0, 200));
  r = run({"predict", "--model", bad.string(), "--input", img.string(), "--output", (w.root / "x.pgm").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("truncated tensor 'enc0.conv1.weight'") != std::string::npos);
}

TEST_CASE("eval of ground truth against itself") {
  Workspace& w = workspace();
  const fs::path report = w.root / "report.tsv";
  const Result r = run({"eval", "--pred", (w.data / "masks").string(), "--gt", (w.data / "masks").string(),
                        "--report", report.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.starts_with("MEAN\t0.000000\t1.000000\t1.000000\t"));
  const std::string first = slurp(report);
  CHECK(std::count(first.begin(), first.end(), '\n') == 5);

  // an unreadable prediction is skipped, not fatal
  const fs::path preds = w.root / "preds";
  fs::create_directories(preds);
  fs::copy_file(w.data / "masks" / "0000.pgm", preds / "0000.pgm", fs::copy_options::overwrite_existing);
  spit(preds / "0001.pgm", "P5\n24 24\n255\nshort");
  const Result partial = run({"eval", "--pred", preds.string(), "--gt", (w.data / "masks").string(), "--report",
                              report.string()});
  CHECK(partial.code == 0);
  CHECK(slurp(report).find("# skipped\t0001\t") != std::string::npos);
  CHECK(run({"eval", "--pred", preds.string(), "--gt", (w.data / "masks").string(), "--report",
             (w.root / "again.tsv").string()})
            .code == 0);
  CHECK(slurp(report) == slurp(w.root / "again.tsv"));

  const fs::path empty = w.root / "empty";
  fs::create_directories(empty);
  CHECK(run({"eval", "--pred", empty.string(), "--gt", (w.data / "masks").string(), "--report", report.string()})
            .code == 1);
}
