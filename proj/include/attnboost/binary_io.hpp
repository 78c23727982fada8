#pragma once

// Little-endian primitives shared by the ATNF/ATNH/ATNA file formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "attnboost/error.hpp"

namespace attnboost::io {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename T>
T byteswap_if_needed(T value) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&value, bytes.data(), sizeof(T));
  }
  return value;
}

class Writer {
public:
  explicit Writer(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error("cannot open for writing: " + path.string());
  }

  void magic(std::string_view tag) { out_.write(tag.data(), 4); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    value = byteswap_if_needed(value);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  void finish() {
    out_.flush();
    if (!out_) throw Error("write failed: " + path_.string());
  }

private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
public:
  explicit Reader(const std::filesystem::path& path)
      : in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open for reading: " + path.string());
  }

  void expect_magic(std::string_view tag) {
    char buf[4] = {};
    in_.read(buf, 4);
    if (in_.gcount() != 4 || std::string_view(buf, 4) != tag)
      throw FormatError("bad magic");
  }

  void expect_version(std::uint32_t version) {
    if (get<std::uint32_t>() != version)
      throw FormatError("unsupported version");
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(T)))
      throw FormatError("truncated payload");
    return byteswap_if_needed(value);
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
  std::ifstream in_;
};

} // namespace attnboost::io
