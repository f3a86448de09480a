#pragma once

#include "gcr/training.hpp"
#include "gcr/video.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gcr {

/// Entry m-1 is the percentage of probes whose true match is among the m
/// nearest gallery entries.
struct CMCCurve {
  std::vector<double> ranks;

  /// Percentage at 1-based rank m, clamped to the curve's last entry.
  double at(std::size_t m) const;
};

/// Summed Euclidean distances, row-major [probes, gallery].
struct DistanceMatrix {
  std::vector<int> probe_ids;
  std::vector<int> gallery_ids;
  std::vector<double> values;

  double operator()(std::size_t p, std::size_t g) const { return values[p * gallery_ids.size() + g]; }
};

struct CropOffset {
  std::size_t top = 0;
  std::size_t left = 0;
  bool operator==(const CropOffset&) const = default;
};

/// The four corners and four edge midpoints of the valid offset range, in the
/// order top-left, top-center, top-right, middle-left, middle-right,
/// bottom-left, bottom-center, bottom-right.
std::vector<CropOffset> crop_offsets(std::size_t frame_height, std::size_t frame_width, std::size_t crop_height,
                                     std::size_t crop_width);

struct EvalConfig {
  std::size_t max_frames = 128;
  std::size_t threads = 1;
};

/// Feature of the first `max_frames` frames seen through one crop window,
/// optionally mirrored, normalized by the model's training statistics.
template <typename T>
std::vector<double> extract_test_feature(const VideoClip& clip, const Model<T>& model, CropOffset offset, bool flipped,
                                         const EvalConfig& config = {});

/// The 16 features of a clip: every crop offset, unflipped then flipped.
template <typename T>
std::vector<std::vector<double>> extract_multi_crop_features(const VideoClip& clip, const Model<T>& model,
                                                             const EvalConfig& config = {});

/// Sum of the 16 per-view Euclidean distances between two feature sets.
double summed_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

template <typename T>
double multi_crop_distance(const VideoClip& probe, const VideoClip& gallery, const Model<T>& model,
                           const EvalConfig& config = {});

/// Camera 0 clips are probes and camera 1 clips the gallery (first clip of
/// each identity per camera). Throws if a probe identity has no gallery clip.
template <typename T>
DistanceMatrix compute_distance_matrix(const Dataset& test_set, const Model<T>& model, const EvalConfig& config = {});

/// Ranks each probe's true identity after a stable ascending sort of its
/// gallery row (ties keep gallery order).
CMCCurve cmc_from_distances(const DistanceMatrix& distances);

template <typename T>
CMCCurve compute_cmc(const Dataset& test_set, const Model<T>& model, const EvalConfig& config = {});

/// Entrywise mean of equally long curves.
CMCCurve average_curves(std::span<const CMCCurve> curves);

/// "rank<TAB>percentage" rows for the given ranks (all ranks when empty).
std::string format_cmc_table(const CMCCurve& curve, std::span<const std::size_t> ranks = {});

}  // namespace gcr
