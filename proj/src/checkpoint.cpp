#include "salfau/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "salfau/errors.hpp"
#include "storage_util.hpp"

namespace salfau {

namespace {

constexpr std::string_view kModelMagic = "SFAU1\n";
constexpr std::string_view kOptimizerMagic = "ADAM1\n";

template <class U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

void encode_section(std::string& out, const CheckpointSection& section) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(section.size()));
  for (const CheckpointTensor& t : section) {
    if (t.name.size() > 0xFFFF) throw ContractError("checkpoint tensor name too long: " + t.name);
    if (t.shape.size() > 0xFF) throw ContractError("checkpoint tensor rank too large: " + t.name);
    if (t.values.size() != shape_numel(t.shape)) {
      throw ContractError("checkpoint tensor '" + t.name + "' value count does not match shape");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.append(t.name);
    out.push_back(static_cast<char>(t.shape.size()));
    for (std::size_t d : t.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : t.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }

  bool consume(std::string_view literal) {
    if (bytes_.substr(pos_, literal.size()) != literal) return false;
    pos_ += literal.size();
    return true;
  }

  template <class U>
  U get(const std::string& context) {
    if (!has(sizeof(U))) throw ParseError("truncated " + context, pos_);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string take(std::size_t n, const std::string& context) {
    if (!has(n)) throw ParseError("truncated " + context, pos_);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

CheckpointSection decode_section(Reader& in) {
  const std::uint32_t count = in.get<std::uint32_t>("tensor count");
  CheckpointSection section;
  section.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string index_ctx = "tensor #" + std::to_string(i);
    const std::uint16_t name_len = in.get<std::uint16_t>(index_ctx + " name length");
    CheckpointTensor t;
    t.name = in.take(name_len, index_ctx + " name");
    const std::string ctx = "tensor '" + t.name + "'";
    const std::uint8_t rank = in.get<std::uint8_t>(ctx);
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = in.get<std::uint32_t>(ctx);
      if (dim == 0) throw ParseError("zero dimension in " + ctx, in.offset());
      t.shape.push_back(dim);
    }
    const std::size_t n = shape_numel(t.shape);
    if (!in.has(n * 4)) throw ParseError("truncated " + ctx, in.offset());
    t.values.resize(n);
    for (float& v : t.values) v = std::bit_cast<float>(in.get<std::uint32_t>(ctx));
    section.push_back(std::move(t));
  }
  return section;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kModelMagic);
  encode_section(out, checkpoint.model);
  if (checkpoint.optimizer) {
    out.append(kOptimizerMagic);
    encode_section(out, *checkpoint.optimizer);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (!in.consume(kModelMagic)) throw ParseError("not a SFAU1 checkpoint", 0);
  Checkpoint checkpoint;
  checkpoint.model = decode_section(in);
  if (!in.at_end()) {
    const std::size_t at = in.offset();
    if (!in.consume(kOptimizerMagic)) throw ParseError("unexpected bytes after model section", at);
    checkpoint.optimizer = decode_section(in);
    if (!in.at_end()) throw ParseError("unexpected bytes after optimizer section", in.offset());
  }
  return checkpoint;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

CheckpointSection export_tensors(const NamedTensors& tensors) {
  CheckpointSection section;
  section.reserve(tensors.size());
  for (const auto& [name, t] : tensors) {
    CheckpointTensor entry{name, t.shape(), {}};
    std::visit([&](const auto& v) { entry.values.assign(v.begin(), v.end()); }, t.storage());
    section.push_back(std::move(entry));
  }
  return section;
}

void import_tensors(const CheckpointSection& section, const NamedTensors& targets) {
  std::unordered_map<std::string, const CheckpointTensor*> by_name;
  for (const CheckpointTensor& t : section) by_name[t.name] = &t;
  for (const auto& [name, target] : targets) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint is missing tensor '" + name + "'", 0);
    const CheckpointTensor& src = *it->second;
    if (src.shape != target.shape()) {
      throw ParseError("tensor '" + name + "' has shape " + shape_to_string(src.shape) +
                           ", expected " + shape_to_string(target.shape()),
                       0);
    }
    Tensor dst = target;
    detail::dispatch(dst.precision(), [&](auto tag) {
      using T = decltype(tag);
      auto out = dst.mutable_data<T>();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src.values[i]);
    });
  }
}

SalFAUNet network_from_checkpoint(const Checkpoint& checkpoint, std::size_t input_size,
                                  Precision precision) {
  const CheckpointTensor* first = nullptr;
  for (const CheckpointTensor& t : checkpoint.model) {
    if (t.name == "enc0.conv1.weight") first = &t;
  }
  if (!first || first->shape.size() != 4) {
    throw ParseError("checkpoint is missing tensor 'enc0.conv1.weight'", 0);
  }
  NetworkConfig cfg;
  cfg.base_channels = first->shape[0];
  cfg.in_channels = first->shape[1];
  cfg.input_size = input_size;
  SalFAUNet net = SalFAUNet::build(cfg, 0, precision);
  import_tensors(checkpoint.model, net.state());
  return net;
}

}  // namespace salfau
