#include "remar/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace remar {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw std::runtime_error("tensor record truncated in header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::size_t tensor_record_size(const Shape& shape) {
  return 4 + 4 + 4 + 4 * shape.size() + 4 * shape_numel(shape);
}

void write_tensor(std::ostream& out, const Shape& shape, std::span<const double> values) {
  if (values.size() != shape_numel(shape)) {
    throw std::invalid_argument("write_tensor: value count does not match shape " +
                                shape_to_string(shape));
  }
  out.write(kTensorMagic, 4);
  put_u32(out, kTensorFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw std::runtime_error("write_tensor: stream failure");
}

TensorRecord read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw std::runtime_error("tensor record: bad magic (expected RMDS)");
  }
  const auto version = get_u32(in);
  if (version != kTensorFormatVersion) {
    throw std::runtime_error("tensor record: unsupported version " + std::to_string(version));
  }
  const auto rank = get_u32(in);
  if (rank == 0 || rank > 8) {
    throw std::runtime_error("tensor record: implausible rank " + std::to_string(rank));
  }
  TensorRecord rec;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = get_u32(in);
    if (d == 0) throw std::runtime_error("tensor record: zero dimension");
    rec.shape.push_back(d);
  }
  const std::size_t n = shape_numel(rec.shape);
  rec.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    rec.values[i] = static_cast<double>(std::bit_cast<float>(get_u32(in)));
  }
  return rec;
}

void save_tensor(const std::filesystem::path& path, const Shape& shape,
                 std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(out, shape, values);
}

TensorRecord load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace remar
