#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nnprobe {

enum class DType { f32, i32, i64 };

std::string_view to_string(DType dtype);
/// Throws FormatError("unknown dtype: <tag>").
DType parse_dtype(std::string_view tag);
std::size_t element_size(DType dtype);

using Shape = std::vector<std::int64_t>;

/// Product of the dimensions; 1 for a rank-0 shape.
std::int64_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Location and layout of a tensor blob on disk.
struct TensorRef {
  DType dtype = DType::f32;
  Shape shape;
  std::filesystem::path blob;

  std::uint64_t byte_length() const;
};

/// A decoded tensor. Values are widened to double in row-major order
/// regardless of the storage dtype.
struct Tensor {
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::int64_t dim(std::size_t axis) const { return shape.at(axis); }

  double at(std::initializer_list<std::int64_t> index) const;
};

/// Decodes little-endian row-major bytes. Throws FormatError("length mismatch ...")
/// when the byte count disagrees with dtype and shape.
Tensor decode_tensor(DType dtype, const Shape& shape, std::span<const std::byte> bytes);
std::vector<std::byte> encode_tensor(const Tensor& tensor);

Tensor read_tensor(const TensorRef& ref);
void write_tensor(const Tensor& tensor, const std::filesystem::path& path);

}  // namespace nnprobe
