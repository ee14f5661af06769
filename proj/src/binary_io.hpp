#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "avca/errors.hpp"

namespace avca::io {

// Little-endian append-only byte buffer.
class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<char>& bytes() const { return bytes_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> bytes_;
};

// Bounds-checked little-endian reader; errors carry path and byte offset.
class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path_);
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void expect_magic(std::string_view m) {
    if (remaining() < m.size() || std::string_view(bytes_.data() + pos_, m.size()) != m) {
      throw BadMagicError(where() + ": bad magic, expected \"" + std::string(m) + "\"");
    }
    pos_ += m.size();
  }

  void expect_version(std::uint32_t version) {
    const std::size_t at = pos_;
    const std::uint32_t v = u32();
    if (v != version) {
      throw VersionMismatchError(path_ + " @" + std::to_string(at) + ": version " + std::to_string(v) +
                                 ", expected " + std::to_string(version));
    }
  }

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void f32_block(float* dst, std::size_t n) {
    need(4 * n);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, bytes_.data() + pos_, 4 * n);
      pos_ += 4 * n;
    } else {
      for (std::size_t i = 0; i < n; ++i) dst[i] = f32();
    }
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }
  const std::string& path() const { return path_; }
  std::string where() const { return path_ + " @" + std::to_string(pos_); }

  void expect_end() const {
    if (remaining() != 0) {
      throw TruncatedFileError(where() + ": " + std::to_string(remaining()) +
                               " bytes beyond the declared record count");
    }
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw TruncatedFileError(where() + ": truncated, needed " + std::to_string(n) + " more bytes, " +
                               std::to_string(remaining()) + " left");
    }
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace avca::io
