#pragma once

// `LASO` model checkpoints.
//
// Layout (little-endian):
//   "LASO" | version u32 | d u64 | L u64 |
//   four parameter blobs in order M_int, M_uni, M_sub, C.
// A blob is a u32 tensor count followed by named tensors:
//   name length u16 | UTF-8 name | rank u8 | extents u64×rank | f64 values.
// Network blobs also carry per-block scalar tensors describing the block
// (activation, dropout rate, leaky slope) so a net can be rebuilt from the
// blob alone.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "laso/binary_io.hpp"
#include "laso/errors.hpp"
#include "laso/nets.hpp"

namespace laso {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

struct NamedTensor {
  std::string name;
  Tensor value;
};

inline void write_tensor(io::ByteWriter& w, const std::string& name, const Tensor& t) {
  if (name.size() > UINT16_MAX) throw ConfigError("checkpoint: tensor name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.magic(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) w.u64(e);
  for (double v : t.data()) w.f64(v);
}

inline void write_blob(io::ByteWriter& w, const std::vector<NamedTensor>& tensors) {
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) write_tensor(w, t.name, t.value);
}

inline std::map<std::string, Tensor> read_blob(io::ByteReader& r, const char* which) {
  std::map<std::string, Tensor> out;
  const auto count = r.u32("blob tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16("tensor name length");
    auto nb = r.bytes(len, "tensor name");
    std::string name(nb.begin(), nb.end());
    const auto rank = r.u8("tensor rank");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& e : shape) {
      e = r.u64("tensor extent");
      numel = io::checked_mul(numel, e, "tensor size");
    }
    r.require(io::checked_mul(numel, 8, "tensor bytes"), "tensor values");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f64("tensor values");
    if (!out.emplace(name, Tensor(shape, std::move(values))).second) {
      throw FormatError(std::string("checkpoint: duplicate tensor '") + name + "' in " + which);
    }
  }
  return out;
}

inline Tensor take(std::map<std::string, Tensor>& blob, const std::string& name,
                   const char* which, bool trainable) {
  auto it = blob.find(name);
  if (it == blob.end()) {
    throw FormatError(std::string("checkpoint: missing tensor '") + name + "' in " + which);
  }
  Tensor t = std::move(it->second);
  blob.erase(it);
  t.set_requires_grad(trainable);
  return t;
}

inline double take_scalar(std::map<std::string, Tensor>& blob, const std::string& name,
                          const char* which) {
  Tensor t = take(blob, name, which, false);
  if (t.numel() != 1) throw FormatError("checkpoint: '" + name + "' is not a scalar");
  return t[0];
}

inline std::vector<NamedTensor> net_tensors(const LasoOperatorNet& net) {
  std::vector<NamedTensor> out;
  out.push_back({"final_relu", Tensor::scalar(net.final_relu() ? 1.0 : 0.0)});
  for (std::size_t i = 0; i < net.blocks().size(); ++i) {
    const auto& b = net.blocks()[i];
    const std::string p = "block" + std::to_string(i) + ".";
    out.push_back({p + "weight", b.weight});
    out.push_back({p + "bias", b.bias});
    out.push_back({p + "bn_gamma", b.bn_gamma});
    out.push_back({p + "bn_beta", b.bn_beta});
    out.push_back({p + "running_mean", b.running_mean});
    out.push_back({p + "running_var", b.running_var});
    out.push_back({p + "activation",
                   Tensor::scalar(b.activation == Activation::kRelu ? 1.0 : 0.0)});
    out.push_back({p + "dropout_rate", Tensor::scalar(b.dropout_rate)});
    out.push_back({p + "leaky_slope", Tensor::scalar(b.leaky_slope)});
  }
  return out;
}

inline LasoOperatorNet net_from_blob(std::map<std::string, Tensor> blob, const char* which) {
  const bool final_relu = take_scalar(blob, "final_relu", which) != 0.0;
  std::vector<MlpBlock> blocks;
  for (std::size_t i = 0;; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    if (!blob.count(p + "weight")) break;
    MlpBlock b;
    b.weight = take(blob, p + "weight", which, true);
    b.bias = take(blob, p + "bias", which, true);
    b.bn_gamma = take(blob, p + "bn_gamma", which, true);
    b.bn_beta = take(blob, p + "bn_beta", which, true);
    b.running_mean = take(blob, p + "running_mean", which, false);
    b.running_var = take(blob, p + "running_var", which, false);
    b.activation = take_scalar(blob, p + "activation", which) != 0.0 ? Activation::kRelu
                                                                      : Activation::kLeakyRelu;
    b.dropout_rate = take_scalar(blob, p + "dropout_rate", which);
    b.leaky_slope = take_scalar(blob, p + "leaky_slope", which);
    if (b.weight.rank() != 2) throw FormatError(std::string("checkpoint: weight not a matrix in ") + which);
    blocks.push_back(std::move(b));
  }
  if (!blob.empty()) {
    throw FormatError(std::string("checkpoint: unexpected tensor '") + blob.begin()->first +
                      "' in " + which);
  }
  return LasoOperatorNet::from_blocks(std::move(blocks), final_relu);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_model(const LasoModel& m) {
  io::ByteWriter w;
  w.magic("LASO");
  w.u32(kCheckpointVersion);
  w.u64(m.feature_dim);
  w.u64(m.label_count);
  detail::write_blob(w, detail::net_tensors(m.inter));
  detail::write_blob(w, detail::net_tensors(m.uni));
  detail::write_blob(w, detail::net_tensors(m.sub));
  detail::write_blob(w, {{"weight", m.classifier.weight}, {"bias", m.classifier.bias}});
  return w.buffer();
}

inline LasoModel decode_model(std::span<const std::uint8_t> data) {
  io::ByteReader r(data);
  if (data.size() < 4) throw TruncationError("LASO: file shorter than its magic");
  if (r.magic(4) != "LASO") throw FormatError("LASO: bad magic, not a model checkpoint");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw VersionError("LASO: unsupported version " + std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  LasoModel m;
  m.feature_dim = r.u64("d");
  m.label_count = r.u64("L");
  m.inter = detail::net_from_blob(detail::read_blob(r, "M_int"), "M_int");
  m.uni = detail::net_from_blob(detail::read_blob(r, "M_uni"), "M_uni");
  m.sub = detail::net_from_blob(detail::read_blob(r, "M_sub"), "M_sub");
  auto cblob = detail::read_blob(r, "C");
  m.classifier.weight = detail::take(cblob, "weight", "C", true);
  m.classifier.bias = detail::take(cblob, "bias", "C", true);
  if (r.remaining() != 0) throw FormatError("LASO: trailing bytes after classifier blob");
  for (const auto* net : {&m.inter, &m.uni, &m.sub}) {
    if (net->feature_dim() != m.feature_dim) {
      throw FormatError("LASO: operator net dimension disagrees with header d");
    }
  }
  if (m.classifier.weight.shape() != Shape{m.label_count, m.feature_dim} ||
      m.classifier.bias.numel() != m.label_count) {
    throw FormatError("LASO: classifier shape disagrees with header d/L");
  }
  return m;
}

inline void save_model(const LasoModel& m, const std::filesystem::path& path) {
  io::write_file(path, encode_model(m));
}

inline LasoModel load_model(const std::filesystem::path& path) {
  return decode_model(io::read_file(path));
}

}  // namespace laso
