#pragma once

#include "gcr/config_map.hpp"
#include "gcr/evaluation.hpp"
#include "gcr/network.hpp"
#include "gcr/synthetic.hpp"
#include "gcr/training.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gcr {

enum class Precision { float32, float64 };

/// Everything a command needs. Keys in the flat text form:
///   data_dir, output_dir, precision, repeats, split.fraction, split.seed,
///   gen.<GeneratorConfig key>, net.<NetworkConfig key>,
///   train.<TrainConfig key>, eval.max_frames, eval.threads
/// The network input extents follow train.crop_height/crop_width and are not
/// set directly.
struct RunConfig {
  GeneratorConfig generator;
  NetworkConfig network;
  TrainConfig train;
  EvalConfig eval;
  std::filesystem::path data_dir = "data";
  std::filesystem::path output_dir = "runs";
  Precision precision = Precision::float32;
  std::size_t repeats = 1;
  double split_fraction = 0.5;
  std::uint64_t split_seed = 0;

  RunConfig() {
    network.frame_height = train.crop_height;
    network.frame_width = train.crop_width;
  }

  ConfigMap to_map() const;
  /// Applies `map` on top of this configuration. Throws std::invalid_argument
  /// on unknown keys or unparsable values.
  void apply(const ConfigMap& map);
  /// Validates every field and their cross-constraints.
  void validate() const;
};

/// Layering, later wins: defaults, the config file, environment
/// (GCR_OUTPUT_DIR, GCR_THREADS), then `key=value` overrides.
RunConfig resolve_run_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides);

/// Parses "key=value"; throws std::invalid_argument otherwise.
std::pair<std::string, std::string> parse_override(const std::string& text);

}  // namespace gcr
