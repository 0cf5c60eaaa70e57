#include "salfau/salfaunet.hpp"

#include <random>

#include "salfau/errors.hpp"

namespace salfau {

void NetworkConfig::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (base_channels == 0) throw ConfigError("base_channels must be positive");
  if (input_size == 0 || input_size % kSizeDivisor != 0) {
    throw ConfigError("input_size must be a positive multiple of " + std::to_string(kSizeDivisor) +
                      ", got " + std::to_string(input_size));
  }
}

namespace {

EncoderBlock make_encoder(std::size_t in, std::size_t out, Precision p) {
  return {Conv2d(in, out, 3, p), BatchNorm2d(out, p), Conv2d(out, out, 3, p), BatchNorm2d(out, p)};
}

// deep_ch: channels arriving from below; skip_ch: channels of the gated skip.
DecoderBlock make_decoder(std::size_t deep_ch, std::size_t skip_ch, Precision p) {
  return {AttentionGate(deep_ch, skip_ch, default_inter_channels(skip_ch), p),
          Conv2d(deep_ch + skip_ch, skip_ch, 3, p), BatchNorm2d(skip_ch, p),
          Conv2d(skip_ch, skip_ch, 3, p), BatchNorm2d(skip_ch, p)};
}

Tensor conv_bn_relu(const Conv2d& conv, BatchNorm2d& bn, const Tensor& x, Mode mode) {
  return relu(batchnorm2d(bn, conv2d(conv, x), mode));
}

void record(ShapeTrace* trace, const std::string& name, const Tensor& t) {
  if (trace) trace->push_back({name, t.dim(1), t.dim(2), t.dim(3)});
}

}  // namespace

SalFAUNet SalFAUNet::build(const NetworkConfig& cfg, std::uint64_t seed, Precision precision) {
  cfg.validate();
  SalFAUNet net;
  net.cfg_ = cfg;
  net.precision_ = precision;
  std::size_t in = cfg.in_channels;
  for (std::size_t level = 0; level < kEncoderLevels; ++level) {
    net.encoders[level] = make_encoder(in, cfg.channels_at(level), precision);
    in = cfg.channels_at(level);
  }
  for (std::size_t m = 0; m < kDecoderLevels; ++m) {
    const std::size_t skip_level = kDecoderLevels - 1 - m;
    net.decoders[m] =
        make_decoder(cfg.channels_at(skip_level + 1), cfg.channels_at(skip_level), precision);
    net.side_convs[m] = Conv2d(cfg.channels_at(skip_level), 1, 3, precision);
  }
  net.fuse_conv = Conv2d(kDecoderLevels, 1, 1, precision);

  std::mt19937_64 rng(seed);
  for (auto& enc : net.encoders) {
    init_he(enc.conv1, rng);
    init_he(enc.conv2, rng);
  }
  for (auto& dec : net.decoders) {
    init_he(dec.gate, rng);
    init_he(dec.conv1, rng);
    init_he(dec.conv2, rng);
  }
  for (auto& side : net.side_convs) init_he(side, rng);
  init_he(net.fuse_conv, rng);
  return net;
}

SaliencyOutputs SalFAUNet::forward(const Tensor& x, Mode mode, ShapeTrace* trace) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw ShapeError("forward: expected [N," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                     shape_to_string(x.shape()));
  }
  if (x.precision() != precision_) throw ContractError("forward: input precision differs from network");
  const std::size_t H = x.dim(2), W = x.dim(3);
  if (mode == Mode::Train && (H != cfg_.input_size || W != cfg_.input_size)) {
    throw ShapeError("forward: training input must be " + std::to_string(cfg_.input_size) + "x" +
                     std::to_string(cfg_.input_size) + ", got " + shape_to_string(x.shape()));
  }
  if (H % kSizeDivisor != 0 || W % kSizeDivisor != 0) {
    throw ShapeError("forward: spatial size must be divisible by " + std::to_string(kSizeDivisor) +
                     ", got " + shape_to_string(x.shape()));
  }

  std::array<Tensor, kEncoderLevels> features;
  Tensor h = x;
  for (std::size_t level = 0; level < kEncoderLevels; ++level) {
    if (level > 0) h = maxpool2d(h);
    EncoderBlock& enc = encoders[level];
    h = conv_bn_relu(enc.conv2, enc.bn2, conv_bn_relu(enc.conv1, enc.bn1, h, mode), mode);
    features[level] = h;
    record(trace, "enc" + std::to_string(level), h);
  }

  SaliencyOutputs out;
  std::array<Tensor, kDecoderLevels> upsampled_logits;
  for (std::size_t m = 0; m < kDecoderLevels; ++m) {
    const Tensor& skip = features[kDecoderLevels - 1 - m];
    DecoderBlock& dec = decoders[m];
    Tensor up = upsample_bilinear(h, skip.dim(2), skip.dim(3));
    Tensor gated = ag_forward(dec.gate, up, skip, mode);
    Tensor merged = concat_channels({up, gated});
    h = conv_bn_relu(dec.conv2, dec.bn2, conv_bn_relu(dec.conv1, dec.bn1, merged, mode), mode);
    record(trace, "dec" + std::to_string(m + 1), h);

    upsampled_logits[m] = upsample_bilinear(conv2d(side_convs[m], h), H, W);
    out.side_logits[m] = upsampled_logits[m];
    out.side[m] = sigmoid(upsampled_logits[m]);
  }
  for (std::size_t m = 0; m < kDecoderLevels; ++m) {
    record(trace, "side" + std::to_string(m + 1), out.side[m]);
  }
  out.fused = sigmoid(conv2d(fuse_conv, concat_channels(upsampled_logits)));
  record(trace, "fuse", out.fused);
  return out;
}

NamedTensors SalFAUNet::parameters() const {
  NamedTensors out;
  for (std::size_t level = 0; level < kEncoderLevels; ++level) {
    const std::string p = "enc" + std::to_string(level);
    append_parameters(encoders[level].conv1, p + ".conv1", out);
    append_parameters(encoders[level].bn1, p + ".bn1", out);
    append_parameters(encoders[level].conv2, p + ".conv2", out);
    append_parameters(encoders[level].bn2, p + ".bn2", out);
  }
  for (std::size_t m = 0; m < kDecoderLevels; ++m) {
    const std::string p = "dec" + std::to_string(m + 1);
    append_parameters(decoders[m].gate, p + ".gate", out);
    append_parameters(decoders[m].conv1, p + ".conv1", out);
    append_parameters(decoders[m].bn1, p + ".bn1", out);
    append_parameters(decoders[m].conv2, p + ".conv2", out);
    append_parameters(decoders[m].bn2, p + ".bn2", out);
  }
  for (std::size_t m = 0; m < kDecoderLevels; ++m) {
    append_parameters(side_convs[m], "side" + std::to_string(m + 1), out);
  }
  append_parameters(fuse_conv, "fuse", out);
  return out;
}

NamedTensors SalFAUNet::buffers() const {
  NamedTensors out;
  for (std::size_t level = 0; level < kEncoderLevels; ++level) {
    const std::string p = "enc" + std::to_string(level);
    append_buffers(encoders[level].bn1, p + ".bn1", out);
    append_buffers(encoders[level].bn2, p + ".bn2", out);
  }
  for (std::size_t m = 0; m < kDecoderLevels; ++m) {
    const std::string p = "dec" + std::to_string(m + 1);
    append_buffers(decoders[m].gate, p + ".gate", out);
    append_buffers(decoders[m].bn1, p + ".bn1", out);
    append_buffers(decoders[m].bn2, p + ".bn2", out);
  }
  return out;
}

NamedTensors SalFAUNet::state() const {
  NamedTensors out = parameters();
  NamedTensors extra = buffers();
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

void SalFAUNet::zero_grad() {
  for (auto& [name, t] : parameters()) t.zero_grad();
}

ShapeTrace shape_plan(const NetworkConfig& cfg) {
  cfg.validate();
  ShapeTrace plan;
  const std::size_t S = cfg.input_size;
  for (std::size_t level = 0; level < kEncoderLevels; ++level) {
    plan.push_back({"enc" + std::to_string(level), cfg.channels_at(level), S >> level, S >> level});
  }
  for (std::size_t m = 0; m < kDecoderLevels; ++m) {
    const std::size_t level = kDecoderLevels - 1 - m;
    plan.push_back({"dec" + std::to_string(m + 1), cfg.channels_at(level), S >> level, S >> level});
  }
  for (std::size_t m = 0; m < kDecoderLevels; ++m) {
    plan.push_back({"side" + std::to_string(m + 1), 1, S, S});
  }
  plan.push_back({"fuse", 1, S, S});
  return plan;
}

std::string format_stage(const StageShape& stage) {
  return stage.name + ": " + std::to_string(stage.channels) + "×" +
         std::to_string(stage.height) + "×" + std::to_string(stage.width);
}

}  // namespace salfau
