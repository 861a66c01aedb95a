#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "remar/tensor.hpp"

namespace remar {

// Record layout, all integers little-endian:
//   "RMDS" | version u32 | rank u32 | dims u32 x rank | f32 x prod(dims)
inline constexpr char kTensorMagic[4] = {'R', 'M', 'D', 'S'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

struct TensorRecord {
  Shape shape;
  std::vector<double> values;
};

std::size_t tensor_record_size(const Shape& shape);

void write_tensor(std::ostream& out, const Shape& shape, std::span<const double> values);
TensorRecord read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Shape& shape,
                 std::span<const double> values);
TensorRecord load_tensor(const std::filesystem::path& path);

}  // namespace remar
