#include "cli_app.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>

#include "salfau/checkpoint.hpp"
#include "salfau/config.hpp"
#include "salfau/data.hpp"
#include "salfau/errors.hpp"
#include "salfau/metrics.hpp"
#include "salfau/optim.hpp"
#include "salfau/parallel.hpp"
#include "salfau/salfaunet.hpp"

namespace salfau {

namespace {

constexpr const char* kPrecedence =
    "Settings resolve as: command-line flags, then the --config file, then built-in defaults.";

struct GenDataArgs {
  std::string out;
  std::size_t count = 0;
  std::size_t size = 64;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string data, config, out, log;
  std::optional<std::size_t> iters, batch;
  std::optional<std::uint64_t> seed;
};

struct PredictArgs {
  std::string model, input, output;
  std::size_t size = 320;
};

struct EvalArgs {
  std::string pred, gt, report, config;
};

Config config_or_default(const std::string& path) {
  return path.empty() ? Config{} : load_config(path);
}

void cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const DatasetManifest manifest = gen_synthetic(a.count, a.size, a.seed, a.out);
  out << "wrote " << manifest.size() << " pairs to " << a.out << "\n";
}

void cmd_train(const TrainArgs& a, std::ostream& out) {
  Config cfg = config_or_default(a.config);
  if (a.iters) cfg.iters = *a.iters;
  if (a.batch) cfg.batch = *a.batch;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();

  const std::vector<Sample> samples = load_samples(read_manifest(a.data));
  SalFAUNet net = SalFAUNet::build(cfg.network, cfg.seed);
  Adam adam(net.parameters(), cfg.adam);

  const std::string log_path = a.log.empty() ? a.out + ".log" : a.log;
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path + " for writing");

  TrainOptions options;
  options.iters = cfg.iters;
  options.batch = cfg.batch;
  options.seed = cfg.seed;
  options.weights = cfg.weights;
  options.checkpoint_every = cfg.checkpoint_every;
  options.checkpoint_path = a.out;
  options.on_iteration = [&](std::size_t it, double loss) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu\t%.9g\n", it, loss);
    log << buf;
  };
  const std::vector<double> history = train_loop(net, adam, samples, options);
  log.close();
  if (!log) throw IoError("failed writing " + log_path);
  save_checkpoint(a.out, net, &adam);
  out << "trained " << history.size() << " iterations; checkpoint " << a.out << ", log "
      << log_path << "\n";
}

void cmd_predict(const PredictArgs& a, std::ostream& out) {
  if (a.size == 0 || a.size % kSizeDivisor != 0) {
    throw ConfigError("--size must be a positive multiple of " + std::to_string(kSizeDivisor));
  }
  SalFAUNet net = network_from_checkpoint(read_checkpoint(a.model), a.size);
  const Raster image = read_image(a.input);
  if (image.channels != 3) throw ParseError(a.input + ": expected an RGB (P6) image", 0);
  const TestInput in = preprocess_test(raster_to_tensor(image), a.size);
  NoGradGuard no_grad;
  const SaliencyOutputs pred = net.forward(in.image, Mode::Eval);
  write_pgm(a.output, restore_size(pred.fused, in.original_height, in.original_width));
  out << "wrote " << a.output << " (" << in.original_width << "x" << in.original_height << ")\n";
}

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Config cfg = config_or_default(a.config);
  const MetricReport report = evaluate_directories(a.pred, a.gt, cfg.metric_config());
  write_report(a.report, report);
  const std::string text = format_report(report);
  const auto last = text.rfind('\n', text.size() - 2);
  out << (last == std::string::npos ? text : text.substr(last + 1));
}

void cmd_shapes(const std::string& config_path, std::ostream& out) {
  const Config cfg = config_or_default(config_path);
  for (const StageShape& s : shape_plan(cfg.network)) out << format_stage(s) << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Saliency detection with attention-gated U-Net"};
  app.footer(kPrecedence);
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: SALFAU_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic shapes dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of image/mask pairs")
      ->required()
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--size", gen.size, "Square image side")->check(CLI::Range(16, 1 << 14));
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a network on a manifest");
  train_cmd->footer(kPrecedence);
  train_cmd->add_option("--data", train.data, "Manifest file (image<TAB>mask per line)")->required();
  train_cmd->add_option("--config", train.config, "Config file of key = value lines");
  train_cmd->add_option("--out", train.out, "Checkpoint to write")->required();
  train_cmd->add_option("--iters", train.iters, "Override iters");
  train_cmd->add_option("--batch", train.batch, "Override batch")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train.seed, "Override seed");
  train_cmd->add_option("--log", train.log, "Loss log path (default: <out>.log)");

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "Predict a saliency map for one image");
  predict_cmd->add_option("--model", predict.model, "Checkpoint")->required();
  predict_cmd->add_option("--input", predict.input, "Input PPM image")->required();
  predict_cmd->add_option("--output", predict.output, "Output PGM map")->required();
  predict_cmd->add_option("--size", predict.size, "Network input side")->capture_default_str();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted maps against ground truth");
  eval_cmd->add_option("--pred", eval.pred, "Directory of predicted PGM maps")->required();
  eval_cmd->add_option("--gt", eval.gt, "Directory of ground-truth PGM masks")->required();
  eval_cmd->add_option("--report", eval.report, "Report file to write")->required();
  eval_cmd->add_option("--config", eval.config, "Config file (em_threshold_mode)");

  std::string shapes_config;
  auto* shapes_cmd = app.add_subcommand("shapes", "Print the stage shapes of a configuration");
  shapes_cmd->add_option("--config", shapes_config, "Config file of key = value lines");

  std::vector<const char*> argv{"salfau"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (threads > 0) set_num_threads(threads);
    if (*gen_cmd) {
      cmd_gen_data(gen, out);
    } else if (*train_cmd) {
      cmd_train(train, out);
    } else if (*predict_cmd) {
      cmd_predict(predict, out);
    } else if (*eval_cmd) {
      cmd_eval(eval, out);
    } else if (*shapes_cmd) {
      cmd_shapes(shapes_config, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace salfau
