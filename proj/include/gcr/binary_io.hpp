#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace gcr::io {

/// Writes `values` as a flat little-endian array, whatever the host order.
template <typename T>
void write_le(const std::filesystem::path& path, std::span<const T> values);

/// Reads exactly `count` little-endian values; throws if the file size differs.
template <typename T>
std::vector<T> read_le(const std::filesystem::path& path, std::size_t count);

}  // namespace gcr::io
