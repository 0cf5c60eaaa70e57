#include "salfau/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "salfau/errors.hpp"

namespace salfau {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for key '" + std::string(key) +
                    "': expected " + expected);
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    bad_value(key, value, "a nonnegative integer");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size() || !std::isfinite(out)) {
    bad_value(key, value, "a finite number");
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void Config::validate() const {
  network.validate();
  adam.validate();
  weights.validate();
  if (batch == 0) throw ConfigError("batch must be at least 1");
}

MetricConfig Config::metric_config() const {
  MetricConfig m;
  m.em_mode = em_mode;
  return m;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "base_channels", "input_size", "lr",      "beta1",   "beta2",   "eps",
      "weight_decay",  "batch",      "iters",   "seed",    "w_side1", "w_side2",
      "w_side3",       "w_side4",    "w_fuse",  "checkpoint_every", "em_threshold_mode"};
  return keys;
}

void apply_setting(Config& c, std::string_view key, std::string_view value) {
  if (key == "base_channels") {
    c.network.base_channels = parse_uint(key, value);
  } else if (key == "input_size") {
    c.network.input_size = parse_uint(key, value);
  } else if (key == "lr") {
    c.adam.lr = parse_double(key, value);
  } else if (key == "beta1") {
    c.adam.beta1 = parse_double(key, value);
  } else if (key == "beta2") {
    c.adam.beta2 = parse_double(key, value);
  } else if (key == "eps") {
    c.adam.eps = parse_double(key, value);
  } else if (key == "weight_decay") {
    c.adam.weight_decay = parse_double(key, value);
  } else if (key == "batch") {
    c.batch = parse_uint(key, value);
  } else if (key == "iters") {
    c.iters = parse_uint(key, value);
  } else if (key == "seed") {
    c.seed = parse_uint(key, value);
  } else if (key.size() == 7 && key.starts_with("w_side") && key[6] >= '1' && key[6] <= '4') {
    c.weights.side[static_cast<std::size_t>(key[6] - '1')] = parse_double(key, value);
  } else if (key == "w_fuse") {
    c.weights.fuse = parse_double(key, value);
  } else if (key == "checkpoint_every") {
    c.checkpoint_every = parse_uint(key, value);
  } else if (key == "em_threshold_mode") {
    if (value == "adaptive") {
      c.em_mode = EmThresholdMode::Adaptive;
    } else if (value == "max") {
      c.em_mode = EmThresholdMode::Max;
    } else {
      bad_value(key, value, "'adaptive' or 'max'");
    }
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

Config parse_config(std::string_view text, const Config& base) {
  Config c = base;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_setting(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path, const Config& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, base);
}

std::string format_config(const Config& c) {
  std::string out;
  auto put = [&](const char* key, const std::string& value) {
    out += std::string(key) + " = " + value + "\n";
  };
  put("base_channels", std::to_string(c.network.base_channels));
  put("input_size", std::to_string(c.network.input_size));
  put("lr", format_double(c.adam.lr));
  put("beta1", format_double(c.adam.beta1));
  put("beta2", format_double(c.adam.beta2));
  put("eps", format_double(c.adam.eps));
  put("weight_decay", format_double(c.adam.weight_decay));
  put("batch", std::to_string(c.batch));
  put("iters", std::to_string(c.iters));
  put("seed", std::to_string(c.seed));
  for (std::size_t m = 0; m < c.weights.side.size(); ++m) {
    const std::string key = "w_side" + std::to_string(m + 1);
    put(key.c_str(), format_double(c.weights.side[m]));
  }
  put("w_fuse", format_double(c.weights.fuse));
  put("checkpoint_every", std::to_string(c.checkpoint_every));
  put("em_threshold_mode", c.em_mode == EmThresholdMode::Adaptive ? "adaptive" : "max");
  return out;
}

}  // namespace salfau
