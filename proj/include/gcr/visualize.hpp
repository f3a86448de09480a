#pragma once

#include "gcr/training.hpp"
#include "gcr/video.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace gcr {

/// Binary 8-bit grayscale PGM (P5).
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};
GrayImage read_pgm(const std::filesystem::path& path);

/// round(255 * (v - lo) / (hi - lo)), clamped to [0, 255].
std::vector<std::uint8_t> to_gray(std::span<const double> values, double lo, double hi);

/// Gate values of one frame, row-major [H/2, W/2]; empty when the network
/// configuration has no such gate.
struct FrameGateValues {
  std::vector<double> luminance;  // input frame, [H, W], Rec. 601 weights
  std::vector<double> color;
  std::vector<double> flow;
  std::vector<double> fused;
};

/// Runs the network over a clip whose extents equal the network input and
/// collects every frame's gates.
template <typename T>
std::vector<FrameGateValues> collect_gates(const VideoClip& clip, const Model<T>& model);

struct GateImageSummary {
  std::size_t frames = 0;
  std::size_t gate_height = 0;
  std::size_t gate_width = 0;
  // Mean over frames of gate_overlap(fused gate, ground-truth gate), when the
  // clip carries a person mask.
  std::optional<double> mean_overlap;
  // Fraction of gate cells covered by the person, the overlap of a uniform gate.
  std::optional<double> person_fraction;
};

/// Writes frame_TTT_{input,color,flow,fused}.pgm and gate_ranges.txt into
/// `dir`. Gates map from their valid range ([0, 1], or [0, 2] for the f1
/// fused gate) onto 0..255; the input maps from [0, 1].
GateImageSummary write_gate_images(const std::filesystem::path& dir, const VideoClip& clip,
                                   std::span<const FrameGateValues> gates, const NetworkConfig& config);

}  // namespace gcr
