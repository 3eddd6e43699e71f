#pragma once

// Binary tensor files.
//
//   VXT1: "VXT1", u32 rank, rank x u32 extents, f32 data (row-major)
//   VXF1: "VXF1", u32 steps, u32 H, u32 W, u plane then v plane as f32
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "motion3d/tensor.hpp"

namespace motion3d {

namespace io_detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated " + what + " header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <class T>
void put_f32(std::ostream& os, std::span<const T> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int k = 0; k < 4; ++k) buf[i * 4 + k] = static_cast<char>((bits >> (8 * k)) & 0xff);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <class T>
void get_f32(std::istream& is, std::span<T> out, const std::string& what) {
  std::vector<unsigned char> buf(out.size() * 4);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw FormatError("truncated " + what + " payload");
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[i * 4 + k]) << (8 * k);
    out[i] = static_cast<T>(std::bit_cast<float>(bits));
  }
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
  char m[4];
  if (!is.read(m, 4)) throw FormatError("truncated " + what + ": missing magic");
  if (std::memcmp(m, magic, 4) != 0) throw FormatError("bad magic in " + what);
}

inline void expect_end(std::istream& is, const std::string& what) {
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + what);
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + p.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw FormatError("cannot open " + p.string());
  return is;
}

}  // namespace io_detail

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("VXT1", 4);
  io_detail::put_u32(os, static_cast<std::uint32_t>(t.shape().rank()));
  for (Index e : t.shape().extents()) io_detail::put_u32(os, static_cast<std::uint32_t>(e));
  io_detail::put_f32(os, t.data());
}

template <class T>
Tensor<T> read_tensor(std::istream& is, const std::string& what = "tensor file") {
  io_detail::expect_magic(is, "VXT1", what);
  const std::uint32_t rank = io_detail::get_u32(is, what);
  if (rank > Shape::kMaxRank) throw FormatError(what + ": rank " + std::to_string(rank) + " > 5");
  std::vector<Index> ext;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = io_detail::get_u32(is, what);
    if (e == 0) throw FormatError(what + ": zero extent");
    ext.push_back(e);
  }
  Tensor<T> t{Shape(std::span<const Index>(ext))};
  io_detail::get_f32(is, t.data(), what);
  io_detail::expect_end(is, what);
  return t;
}

template <class T>
void save_tensor(const std::filesystem::path& p, const Tensor<T>& t) {
  auto os = io_detail::open_out(p);
  write_tensor(os, t);
  if (!os) throw Error("write failed: " + p.string());
}

template <class T>
Tensor<T> load_tensor(const std::filesystem::path& p) {
  auto is = io_detail::open_in(p);
  return read_tensor<T>(is, p.string());
}

/// Flow tensor (2, steps, H, W) in the VXF1 layout.
template <class T>
void write_flow(std::ostream& os, const Tensor<T>& flow) {
  const Shape& s = flow.shape();
  if (s.rank() != 4 || s[0] != 2) throw ShapeError("flow must be (2, steps, H, W), got " + s.str());
  os.write("VXF1", 4);
  for (std::size_t a = 1; a < 4; ++a) io_detail::put_u32(os, static_cast<std::uint32_t>(s[a]));
  io_detail::put_f32(os, flow.data());
}

template <class T>
Tensor<T> read_flow(std::istream& is, const std::string& what = "flow file") {
  io_detail::expect_magic(is, "VXF1", what);
  Index d[3];
  for (auto& e : d) {
    e = io_detail::get_u32(is, what);
    if (e == 0) throw FormatError(what + ": zero extent");
  }
  Tensor<T> t(Shape{2, d[0], d[1], d[2]});
  io_detail::get_f32(is, t.data(), what);
  io_detail::expect_end(is, what);
  return t;
}

template <class T>
void save_flow(const std::filesystem::path& p, const Tensor<T>& flow) {
  auto os = io_detail::open_out(p);
  write_flow(os, flow);
  if (!os) throw Error("write failed: " + p.string());
}

template <class T>
Tensor<T> load_flow(const std::filesystem::path& p) {
  auto is = io_detail::open_in(p);
  return read_flow<T>(is, p.string());
}

}  // namespace motion3d
