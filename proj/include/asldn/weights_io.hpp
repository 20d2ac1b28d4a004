#pragma once

// ASLW weight file:
//   "ASLW" | u32 record count | count x (u32 name length | name bytes | ASLT tensor)
// All integers little endian.

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "asldn/network.hpp"
#include "asldn/tensor_io.hpp"

namespace asldn {

inline constexpr std::array<char, 4> kWeightsMagic{'A', 'S', 'L', 'W'};

template <typename T>
void write_parameters(std::ostream& os, const NetworkParameters<T>& params) {
  os.write(kWeightsMagic.data(), kWeightsMagic.size());
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_tensor(os, e.tensor);
  }
}

template <typename T>
NetworkParameters<T> read_parameters(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  require(is.gcount() == 4 && magic == kWeightsMagic, ErrorCode::CorruptFile, "bad ASLW magic");
  const auto count = detail::get_le<std::uint32_t>(is, "record count");
  NetworkParameters<T> params;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = detail::get_le<std::uint32_t>(is, "name length");
    require(len > 0 && len < 4096, ErrorCode::CorruptFile, "implausible name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    require(is.gcount() == static_cast<std::streamsize>(len), ErrorCode::CorruptFile,
            "truncated parameter name");
    params.add(std::move(name), read_tensor<T>(is));
  }
  require(is.peek() == std::char_traits<char>::eof(), ErrorCode::CorruptFile,
          "trailing bytes after last record");
  return params;
}

template <typename T>
void save_parameters(const std::filesystem::path& path, const NetworkParameters<T>& params) {
  write_file_atomic(path, [&](std::ostream& os) { write_parameters(os, params); });
}

// Either returns the complete parameter set or throws; nothing partial escapes.
template <typename T>
NetworkParameters<T> load_parameters(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::Io, "cannot open " + path.string());
  return read_parameters<T>(is);
}

}  // namespace asldn
