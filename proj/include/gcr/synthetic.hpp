#pragma once

#include "gcr/config_map.hpp"
#include "gcr/video.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace gcr {

using Color = std::array<float, 3>;

/// Appearance and gait of one synthetic person.
struct SyntheticIdentity {
  int id = 0;
  Color torso_color{};
  Color accent_color{};  // horizontal band across the torso
  Color limb_color{};
  Color head_color{};
  double torso_width = 0.4;   // fraction of frame width
  double torso_height = 0.3;  // fraction of frame height
  double leg_height = 0.27;   // fraction of frame height
  double gait_frequency = 0.1;  // cycles per frame
  double gait_phase = 0;
  int speed = 1;  // pixels per frame
};

enum class CameraMotion { tracking, stationary };

struct CameraSpec {
  int id = 0;
  std::uint64_t background_seed = 0;
  Color gain{1, 1, 1};
  Color offset{0, 0, 0};
  bool mirrored = false;
  double occluder_density = 0;
  CameraMotion motion = CameraMotion::tracking;
};

struct GeneratorConfig {
  std::size_t num_identities = 10;
  std::size_t clips_per_camera = 1;
  std::size_t min_frames = 20;
  std::size_t max_frames = 60;
  std::size_t height = 64;
  std::size_t width = 32;
  double occluder_density = 0;
  CameraMotion motion = CameraMotion::tracking;
  std::uint64_t seed = 0;

  void validate() const;
  ConfigMap to_map() const;
  void apply(const ConfigMap& map);
};

/// Rendering output with the per-pixel object labels used to build the flow.
struct RenderedClip {
  VideoClip clip;
  // [T, H, W]: 0 background, 1 head/torso, 2 and 3 legs, 4 occluder.
  std::vector<std::uint8_t> object_ids;
  bool occluded = false;
};

enum ObjectLabel : std::uint8_t { kBackground = 0, kBody = 1, kLegA = 2, kLegB = 3, kOccluder = 4 };

SyntheticIdentity make_identity(int id, std::uint64_t seed);
CameraSpec make_camera(int id, const GeneratorConfig& config);

/// Renders one clip. Every object moves by whole pixels per frame, so the
/// stored flow warps frame t-1 onto frame t exactly wherever the source pixel
/// shows the same object.
RenderedClip render_clip(const SyntheticIdentity& person, const CameraSpec& camera, std::size_t frames,
                         std::size_t height, std::size_t width, std::uint64_t clip_seed);

/// One clip per camera and clip slot for each identity, two cameras.
Dataset generate_dataset(const GeneratorConfig& config);

/// Same as generate_dataset but also returns the object labels of each clip.
std::vector<RenderedClip> generate_rendered(const GeneratorConfig& config);

/// Disjoint identity split; round(fraction * N) identities train, clamped so
/// that both sides are non-empty.
std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Per frame, the person mask max-pooled 2x2 to ceil(H/2) x ceil(W/2).
/// Occluded person pixels are excluded. Requires a clip with a person mask.
std::vector<std::vector<std::uint8_t>> ground_truth_gate(const VideoClip& clip);

/// sum(gate * mask) / sum(gate): the fraction of gate mass on the person.
double gate_overlap(std::span<const double> gate, std::span<const std::uint8_t> mask);

}  // namespace gcr
