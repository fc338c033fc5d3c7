#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcl::serial {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// little-endian writers
inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(std::uint8_t((std::make_unsigned_t<T>(v) >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_le(out, bits);
}

// bounds-checked little-endian reader over an in-memory buffer
class Cursor {
 public:
  Cursor(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  explicit Cursor(const std::vector<std::uint8_t>& buf) : Cursor(buf.data(), buf.size()) {}

  std::size_t remaining() const { return size_ - pos_; }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (remaining() < n)
      throw ParseError(std::string("truncated input: need ") + std::to_string(n) + " bytes for " +
                       what + ", have " + std::to_string(remaining()));
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  template <class T>
  T get_le(const char* what) {
    static_assert(std::is_integral_v<T>);
    const std::uint8_t* p = take(sizeof(T), what);
    std::make_unsigned_t<T> v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= std::make_unsigned_t<T>(p[i]) << (8 * i);
    return T(v);
  }

  float get_f32(const char* what) {
    const std::uint32_t bits = get_le<std::uint32_t>(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  in.seekg(0, std::ios::end);
  const auto len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) throw IoError("failed reading '" + path + "'");
  return buf;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace hcl::serial
