#pragma once

#include "gcr/config_map.hpp"
#include "gcr/network.hpp"

#include <filesystem>
#include <vector>

namespace gcr {

/// On-disk checkpoint: `manifest.txt` plus one little-endian array file per
/// named tensor.
///
/// manifest.txt is a ConfigMap with
///   format      = gcr-checkpoint-1
///   precision   = float32 | float64
///   byte_order  = little_endian
///   arrays      = comma-separated names, in save order
///   array.NAME  = SHAPE FILE      (SHAPE is "d0xd1x...")
///   field.KEY   = VALUE           (caller-provided metadata)
template <typename T>
struct CheckpointContents {
  ConfigMap fields;
  std::vector<NamedTensor<T>> arrays;

  /// Throws if `name` is absent.
  const Tensor<T>& array(const std::string& name) const;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const CheckpointContents<T>& contents);

/// Throws std::runtime_error on a missing/corrupt file or a precision mismatch.
template <typename T>
CheckpointContents<T> load_checkpoint(const std::filesystem::path& dir);

/// "float32" or "float64" as recorded in a checkpoint manifest.
std::string checkpoint_precision(const std::filesystem::path& dir);

}  // namespace gcr
