#include "gcr/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gcr::io {
namespace {

template <typename T>
void to_little_endian(std::vector<unsigned char>& bytes) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += sizeof(T)) std::reverse(bytes.begin() + i, bytes.begin() + i + sizeof(T));
  }
}

}  // namespace

template <typename T>
void write_le(const std::filesystem::path& path, std::span<const T> values) {
  std::vector<unsigned char> bytes(values.size_bytes());
  if (!bytes.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  to_little_endian<T>(bytes);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

template <typename T>
std::vector<T> read_le(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto expected = count * sizeof(T);
  const auto actual = std::filesystem::file_size(path);
  if (actual != expected) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                             std::to_string(actual));
  }
  std::vector<unsigned char> bytes(expected);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  to_little_endian<T>(bytes);
  std::vector<T> values(count);
  if (expected) std::memcpy(values.data(), bytes.data(), expected);
  return values;
}

template void write_le<float>(const std::filesystem::path&, std::span<const float>);
template void write_le<double>(const std::filesystem::path&, std::span<const double>);
template void write_le<std::uint8_t>(const std::filesystem::path&, std::span<const std::uint8_t>);
template std::vector<float> read_le<float>(const std::filesystem::path&, std::size_t);
template std::vector<double> read_le<double>(const std::filesystem::path&, std::size_t);
template std::vector<std::uint8_t> read_le<std::uint8_t>(const std::filesystem::path&, std::size_t);

}  // namespace gcr::io
