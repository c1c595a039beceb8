#include "nnprobe/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nnprobe/error.hpp"

namespace nnprobe {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T load_le(const std::byte* src) {
  T out;
  std::memcpy(&out, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* raw = reinterpret_cast<unsigned char*>(&out);
    std::reverse(raw, raw + sizeof(T));
  }
  return out;
}

template <typename T>
void store_le(T value, std::byte* dst) {
  std::memcpy(dst, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* raw = reinterpret_cast<unsigned char*>(dst);
    std::reverse(raw, raw + sizeof(T));
  }
}

}  // namespace

std::string_view to_string(DType dtype) {
  switch (dtype) {
    case DType::f32: return "f32";
    case DType::i32: return "i32";
    case DType::i64: return "i64";
  }
  return "?";
}

DType parse_dtype(std::string_view tag) {
  if (tag == "f32") return DType::f32;
  if (tag == "i32") return DType::i32;
  if (tag == "i64") return DType::i64;
  throw FormatError("unknown dtype: " + std::string(tag));
}

std::size_t element_size(DType dtype) {
  switch (dtype) {
    case DType::f32: return 4;
    case DType::i32: return 4;
    case DType::i64: return 8;
  }
  return 0;
}

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::uint64_t TensorRef::byte_length() const {
  return static_cast<std::uint64_t>(element_count(shape)) * element_size(dtype);
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != shape.size()) throw InvalidArgument("index rank mismatch");
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape[axis]) throw InvalidArgument("index out of range");
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return values[static_cast<std::size_t>(flat)];
}

Tensor decode_tensor(DType dtype, const Shape& shape, std::span<const std::byte> bytes) {
  for (auto d : shape) {
    if (d <= 0) throw FormatError("invalid shape " + shape_string(shape));
  }
  const auto n = static_cast<std::size_t>(element_count(shape));
  const auto width = element_size(dtype);
  if (bytes.size() != n * width) {
    throw FormatError("length mismatch: shape " + shape_string(shape) + " of " +
                      std::string(to_string(dtype)) + " needs " + std::to_string(n * width) +
                      " bytes, blob has " + std::to_string(bytes.size()));
  }
  Tensor t{dtype, shape, std::vector<double>(n)};
  const std::byte* p = bytes.data();
  for (std::size_t i = 0; i < n; ++i, p += width) {
    switch (dtype) {
      case DType::f32: t.values[i] = load_le<float>(p); break;
      case DType::i32: t.values[i] = load_le<std::int32_t>(p); break;
      case DType::i64: t.values[i] = static_cast<double>(load_le<std::int64_t>(p)); break;
    }
  }
  return t;
}

std::vector<std::byte> encode_tensor(const Tensor& tensor) {
  const auto n = static_cast<std::size_t>(element_count(tensor.shape));
  if (n != tensor.values.size()) {
    throw InvalidArgument("tensor holds " + std::to_string(tensor.values.size()) +
                          " values for shape " + shape_string(tensor.shape));
  }
  const auto width = element_size(tensor.dtype);
  std::vector<std::byte> out(n * width);
  std::byte* p = out.data();
  for (double v : tensor.values) {
    switch (tensor.dtype) {
      case DType::f32: store_le(static_cast<float>(v), p); break;
      case DType::i32: store_le(static_cast<std::int32_t>(v), p); break;
      case DType::i64: store_le(static_cast<std::int64_t>(v), p); break;
    }
    p += width;
  }
  return out;
}

Tensor read_tensor(const TensorRef& ref) {
  std::ifstream in(ref.blob, std::ios::binary);
  if (!in) throw FormatError("cannot open blob " + ref.blob.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(ref.dtype, ref.shape,
                         std::as_bytes(std::span<const char>(raw.data(), raw.size())));
  } catch (const FormatError& e) {
    throw FormatError(std::string(e.what()) + " (" + ref.blob.string() + ")");
  }
}

void write_tensor(const Tensor& tensor, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(tensor);
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace nnprobe
