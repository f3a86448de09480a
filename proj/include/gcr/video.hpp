#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace gcr {

/// One person seen by one camera. Frames are [T, H, W, 3] and flow is
/// [T, H, W, 2] (u = horizontal, v = vertical displacement in pixels), both
/// row-major. flow[t] maps frame t-1 to frame t: a pixel x of frame t came
/// from x - flow[t](x). flow[0] is zero.
struct VideoClip {
  int person_id = 0;
  int camera_id = 0;
  int clip_index = 0;
  std::size_t frame_count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> frames;
  std::vector<float> flow;
  // [T, H, W], 1 where the person is visible; empty when unknown.
  std::vector<std::uint8_t> person_mask;

  static constexpr std::size_t kColorChannels = 3;
  static constexpr std::size_t kFlowChannels = 2;

  std::size_t pixels() const { return height * width; }
  std::span<const float> frame(std::size_t t) const {
    return std::span<const float>(frames).subspan(t * pixels() * kColorChannels, pixels() * kColorChannels);
  }
  std::span<const float> flow_at(std::size_t t) const {
    return std::span<const float>(flow).subspan(t * pixels() * kFlowChannels, pixels() * kFlowChannels);
  }
  std::span<const std::uint8_t> mask_at(std::size_t t) const {
    return std::span<const std::uint8_t>(person_mask).subspan(t * pixels(), pixels());
  }
  bool has_mask() const { return !person_mask.empty(); }

  /// Throws std::invalid_argument if array lengths disagree with the extents.
  void validate() const;
};

/// Frames [first, first + count).
VideoClip slice_clip(const VideoClip& clip, std::size_t first, std::size_t count);

/// Spatial window of every frame, flow field and mask.
VideoClip crop_clip(const VideoClip& clip, std::size_t top, std::size_t left, std::size_t height, std::size_t width);

/// Mirrors every frame left-right; the horizontal flow component changes sign.
VideoClip flip_clip(const VideoClip& clip);

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<VideoClip> clips;

  /// Sorted distinct person ids.
  std::vector<int> identities() const;
  /// First clip of (person, camera); nullptr when absent.
  const VideoClip* find(int person_id, int camera_id) const;
};

/// Directory layout: `dataset.txt` (extents, clip count), then
/// `person_NNNN/cam_C/` per identity and camera holding `manifest.txt` and,
/// per clip K, `clip_K.frames.f32`, `clip_K.flow.f32`, `clip_K.mask.u8`
/// (flat little-endian arrays).
void save_dataset(const std::filesystem::path& root, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace gcr
