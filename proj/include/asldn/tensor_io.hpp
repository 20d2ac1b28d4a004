#pragma once

// ASLT tensor container:
//   "ASLT" | u8 version (1) | u8 dtype (0 = f32, 1 = f64) | u8 ndim |
//   ndim x u32 dims (little endian) | raw little-endian payload

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>

#include "asldn/error.hpp"
#include "asldn/tensor.hpp"

namespace asldn {

inline constexpr std::array<char, 4> kTensorMagic{'A', 'S', 'L', 'T'};
inline constexpr std::uint8_t kTensorVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::F32;
  else return DType::F64;
}

namespace detail {

template <typename U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(U));
  require(is.gcount() == static_cast<std::streamsize>(sizeof(U)), ErrorCode::CorruptFile,
          std::string("truncated ") + what);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

template <typename T>
using bits_of = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
  std::vector<T> data(element_count(shape));
  for (auto& v : data) v = std::bit_cast<T>(get_le<bits_of<T>>(is, "tensor payload"));
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  require(t.rank() <= 255, ErrorCode::InvalidArgument, "rank exceeds 255");
  os.write(kTensorMagic.data(), kTensorMagic.size());
  detail::put_le<std::uint8_t>(os, kTensorVersion);
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    require(d <= 0xFFFFFFFFu, ErrorCode::InvalidArgument, "dimension exceeds u32");
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  for (T v : t.values()) detail::put_le(os, std::bit_cast<detail::bits_of<T>>(v));
}

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

inline AnyTensor read_any_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  require(is.gcount() == 4 && magic == kTensorMagic, ErrorCode::CorruptFile, "bad ASLT magic");
  const auto version = detail::get_le<std::uint8_t>(is, "version");
  require(version == kTensorVersion, ErrorCode::CorruptFile,
          "unsupported ASLT version " + std::to_string(version));
  const auto dtype = detail::get_le<std::uint8_t>(is, "dtype");
  const auto ndim = detail::get_le<std::uint8_t>(is, "ndim");
  Shape shape(ndim);
  for (auto& d : shape) {
    d = detail::get_le<std::uint32_t>(is, "dims");
    require(d > 0, ErrorCode::CorruptFile, "zero dimension");
  }
  if (ndim == 0) shape = {1};
  switch (static_cast<DType>(dtype)) {
    case DType::F32: return detail::read_payload<float>(is, std::move(shape));
    case DType::F64: return detail::read_payload<double>(is, std::move(shape));
  }
  throw Error(ErrorCode::CorruptFile, "unknown dtype " + std::to_string(dtype));
}

// Reads a tensor, converting from the stored dtype when it differs from T.
template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  return std::visit(
      [](auto&& t) -> Tensor<T> {
        using Stored = typename std::decay_t<decltype(t)>::value_type;
        if constexpr (std::is_same_v<Stored, T>) return std::move(t);
        else return tensor_cast<T>(t);
      },
      read_any_tensor(is));
}

// Writes `path` through a sibling temp file and a rename.
template <typename Writer>
void write_file_atomic(const std::filesystem::path& path, Writer&& writer) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), ErrorCode::Io, "cannot open " + tmp.string());
    writer(os);
    os.flush();
    require(static_cast<bool>(os), ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::Io, "rename " + tmp.string() + ": " + ec.message());
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  write_file_atomic(path, [&](std::ostream& os) { write_tensor(os, t); });
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::Io, "cannot open " + path.string());
  try {
    return read_tensor<T>(is);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace asldn
