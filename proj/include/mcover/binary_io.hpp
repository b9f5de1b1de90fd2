#ifndef MCOVER_BINARY_IO_HPP
#define MCOVER_BINARY_IO_HPP

// Little-endian binary encoding shared by every on-disk format.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "mcover/error.hpp"

namespace mcover::io {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts need byte swapping");

class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  void put_magic(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }

  void put_string16(std::string_view s) {
    require(s.size() <= 0xFFFF, ErrorKind::kInvalidInput, "string longer than 65535 bytes: " + std::string(s.substr(0, 32)));
    put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked cursor; every overrun is a format error.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string context)
      : data_(data), context_(std::move(context)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
      fail(ErrorKind::kFormat, context_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
    pos_ += magic.size();
  }

  std::string get_string16() {
    const auto n = get<std::uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_array(std::span<T> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void expect_end() const {
    if (remaining() != 0) {
      fail(ErrorKind::kFormat, context_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }
  }

  [[noreturn]] void corrupt(const std::string& what) const { fail(ErrorKind::kFormat, context_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      fail(ErrorKind::kFormat, context_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                                   std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
    }
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kData, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  require(static_cast<bool>(in), ErrorKind::kData, "failed reading " + path.string());
  return bytes;
}

// Writes through a sibling temp file so readers never observe a half-written artifact.
inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::kData, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::kData, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// 64-bit FNV-1a; used as a content fingerprint, not for security.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mcover::io

#endif  // MCOVER_BINARY_IO_HPP
