#pragma once

// Model checkpoint container. Byte layout (all integers u32 little-endian):
//
//   "SBCIMODL"                         8-byte magic
//   version                            currently 1
//   descriptor_len, descriptor         JSON text: layer kinds + hyperparameters
//                                      and a free-form "extra" object
//   tensor_count
//   repeated tensor_count times:
//     name_len, name                   e.g. "3.batchnorm.running_var"
//     rank, dims[rank]
//     values                           prod(dims) f32 little-endian, row-major
//
// Tensors appear in layer order; for each trainable layer: weights, bias,
// then running_mean, running_var for batchnorm.

#include <json.hpp>
#include <string>

#include "sbci/binary_io.hpp"
#include "sbci/nn/network.hpp"

namespace sbci::nn {

inline constexpr char kCheckpointMagic[] = "SBCIMODL";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint64_t kSettledStatUpdates = 1u << 20;

template <typename T>
nlohmann::json architecture_descriptor(const Network<T>& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json d{{"kind", to_string(l.params.kind)}};
    switch (l.params.kind) {
      case LayerKind::conv2d:
        d["shape"] = l.params.weights.shape;
        d["padding"] = l.params.padding;
        d["stride"] = 1;
        break;
      case LayerKind::dense: d["shape"] = l.params.weights.shape; break;
      case LayerKind::batchnorm:
        d["features"] = l.params.weights.size();
        d["epsilon"] = static_cast<double>(l.params.epsilon);
        d["momentum"] = static_cast<double>(l.params.momentum);
        break;
      case LayerKind::dropout: d["rate"] = static_cast<double>(l.params.rate); break;
      default: break;
    }
    layers.push_back(std::move(d));
  }
  return layers;
}

namespace detail {

template <typename T>
void put_tensor(io::Bytes& out, const std::string& name, const Tensor<T>& t) {
  io::put_u32(out, static_cast<std::uint32_t>(name.size()));
  io::put_bytes(out, name);
  io::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape) io::put_u32(out, static_cast<std::uint32_t>(d));
  for (auto v : t.data) io::put_f32(out, static_cast<float>(v));
}

template <typename T>
void get_tensor(io::Reader& r, const std::string& expected_name, Tensor<T>& t) {
  const auto name = r.bytes(r.u32());
  if (name != expected_name)
    throw FormatError("checkpoint: expected tensor '" + expected_name + "', found '" + name + "'");
  const auto rank = r.u32();
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  if (shape != t.shape)
    throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                      ", architecture expects " + shape_str(t.shape));
  for (auto& v : t.data) v = static_cast<T>(r.f32());
}

template <typename Net, typename Fn>
void for_each_tensor(Net& net, Fn&& fn) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& p = net.layers[i].params;
    const std::string base = std::to_string(i) + "." + to_string(p.kind);
    if (!net.layers[i].trainable()) continue;
    fn(base + ".weights", p.weights);
    fn(base + ".bias", p.bias);
    if (p.kind == LayerKind::batchnorm) {
      fn(base + ".running_mean", p.running_mean);
      fn(base + ".running_var", p.running_var);
    }
  }
}

}  // namespace detail

template <typename T>
io::Bytes save_checkpoint(const Network<T>& net, const nlohmann::json& extra = nlohmann::json::object()) {
  io::Bytes out;
  io::put_bytes(out, std::string_view(kCheckpointMagic, 8));
  io::put_u32(out, kCheckpointVersion);
  const nlohmann::json desc{{"layers", architecture_descriptor(net)}, {"extra", extra}};
  const std::string text = desc.dump();
  io::put_u32(out, static_cast<std::uint32_t>(text.size()));
  io::put_bytes(out, text);
  std::uint32_t count = 0;
  detail::for_each_tensor(net, [&](const std::string&, const Tensor<T>&) { ++count; });
  io::put_u32(out, count);
  detail::for_each_tensor(net, [&](const std::string& name, const Tensor<T>& t) {
    detail::put_tensor(out, name, t);
  });
  return out;
}

/// Reads the descriptor only.
inline nlohmann::json checkpoint_descriptor(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  if (r.bytes(8) != std::string_view(kCheckpointMagic, 8)) throw FormatError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto text = r.bytes(r.u32());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed descriptor: ") + e.what());
  }
}

/// Fills `net`, whose layer structure must match the checkpoint descriptor.
template <typename T>
void load_checkpoint(std::span<const std::uint8_t> bytes, Network<T>& net) {
  const auto desc = checkpoint_descriptor(bytes);
  if (desc.at("layers") != architecture_descriptor(net))
    throw FormatError("checkpoint: architecture descriptor does not match the model");
  io::Reader r(bytes);
  r.bytes(12);
  r.bytes(r.u32());
  const auto count = r.u32();
  std::uint32_t expected = 0;
  detail::for_each_tensor(net, [&](const std::string&, Tensor<T>&) { ++expected; });
  if (count != expected)
    throw FormatError("checkpoint: " + std::to_string(count) + " tensors, expected " +
                      std::to_string(expected));
  detail::for_each_tensor(net, [&](const std::string& name, Tensor<T>& t) { detail::get_tensor(r, name, t); });
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  // Loaded running statistics count as settled: further training blends
  // them at the plain momentum rate.
  for (auto& l : net.layers)
    if (l.params.kind == LayerKind::batchnorm) l.params.stat_updates = kSettledStatUpdates;
}

}  // namespace sbci::nn
