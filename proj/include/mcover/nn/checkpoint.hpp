#ifndef MCOVER_NN_CHECKPOINT_HPP
#define MCOVER_NN_CHECKPOINT_HPP

// Parameter checkpoint file (little-endian):
//   "CVNW" | u32 version=1 | u32 K | u32 E | u32 tensor_count
//   | tensor_count x { u16 name_len | name | u32 rank | u32 dims[rank] | f32 values }
//   | u8 has_adam
//   | if has_adam: u64 step | f64 lr | f64 beta1 | f64 beta2 | f64 eps | u32 moment_count
//                  | moment_count x { u16 name_len | name | f32 first[] | f32 second[] }
// Moment tensors take the shape of the parameter with the same name.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mcover/binary_io.hpp"
#include "mcover/nn/tensor.hpp"

namespace mcover::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
  bool operator==(const NamedTensor&) const = default;
};

struct AdamMoments {
  std::string name;
  Tensor<float> first;
  Tensor<float> second;
  bool operator==(const AdamMoments&) const = default;
};

struct AdamSnapshot {
  std::uint64_t step = 0;
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<AdamMoments> moments;
  bool operator==(const AdamSnapshot&) const = default;
};

struct Checkpoint {
  std::uint32_t k = 0;
  std::uint32_t e = 0;
  std::vector<NamedTensor> tensors;
  std::optional<AdamSnapshot> adam;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  bool operator==(const Checkpoint&) const = default;
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.put_magic("CVNW");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(ckpt.k);
  w.put<std::uint32_t>(ckpt.e);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.put_string16(t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_array<float>(t.value.span());
  }
  w.put<std::uint8_t>(ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    const auto& a = *ckpt.adam;
    w.put<std::uint64_t>(a.step);
    w.put<double>(a.lr);
    w.put<double>(a.beta1);
    w.put<double>(a.beta2);
    w.put<double>(a.eps);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(a.moments.size()));
    for (const auto& m : a.moments) {
      const auto* param = ckpt.find(m.name);
      require(param != nullptr, ErrorKind::kInvalidInput, "adam moment for unknown tensor " + m.name);
      require_shape(m.first.shape(), param->value.shape(), "adam first moment " + m.name);
      require_shape(m.second.shape(), param->value.shape(), "adam second moment " + m.name);
      w.put_string16(m.name);
      w.put_array<float>(m.first.span());
      w.put_array<float>(m.second.span());
    }
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context = "checkpoint") {
  io::ByteReader r(bytes, context);
  r.expect_magic("CVNW");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.corrupt("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.k = r.get<std::uint32_t>();
  ckpt.e = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_string16();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.corrupt("tensor " + t.name + " has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    const auto n = element_count(shape);
    if (n * sizeof(float) > r.remaining()) r.corrupt("tensor " + t.name + " payload truncated");
    std::vector<float> values(n);
    r.get_array<float>(values);
    t.value = Tensor<float>(std::move(shape), std::move(values));
    ckpt.tensors.push_back(std::move(t));
  }
  const auto has_adam = r.get<std::uint8_t>();
  if (has_adam > 1) r.corrupt("bad optimizer-state flag");
  if (has_adam) {
    AdamSnapshot a;
    a.step = r.get<std::uint64_t>();
    a.lr = r.get<double>();
    a.beta1 = r.get<double>();
    a.beta2 = r.get<double>();
    a.eps = r.get<double>();
    const auto moments = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < moments; ++i) {
      AdamMoments m;
      m.name = r.get_string16();
      const auto* param = ckpt.find(m.name);
      if (!param) r.corrupt("optimizer state for unknown tensor " + m.name);
      m.first = Tensor<float>(param->value.shape());
      m.second = Tensor<float>(param->value.shape());
      r.get_array<float>(m.first.span());
      r.get_array<float>(m.second.span());
      a.moments.push_back(std::move(m));
    }
    ckpt.adam = std::move(a);
  }
  r.expect_end();
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace mcover::nn

#endif  // MCOVER_NN_CHECKPOINT_HPP
