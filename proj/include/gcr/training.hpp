#pragma once

#include "gcr/config_map.hpp"
#include "gcr/losses.hpp"
#include "gcr/network.hpp"
#include "gcr/video.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcr {

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double margin = 2.0;
  std::size_t pos_pairs_per_batch = 10;
  std::size_t neg_pairs_per_batch = 10;
  std::size_t subseq_len = 16;
  std::size_t crop_height = 56;
  std::size_t crop_width = 28;
  double flip_probability = 0.5;
  std::size_t epochs = 1;
  std::uint64_t rng_seed = 0;
  bool gate_regularizer = true;
  // Worker threads for the per-pair forward/backward passes. Results do not
  // depend on this value.
  std::size_t threads = 1;

  void validate() const;
  /// Crop extents must fit inside frames of the given size.
  void validate_against(std::size_t frame_height, std::size_t frame_width) const;
  std::size_t pairs_per_batch() const { return pos_pairs_per_batch + neg_pairs_per_batch; }

  ConfigMap to_map() const;
  void apply(const ConfigMap& map);
};

/// Training divergence: a non-finite loss or gradient.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-channel statistics, channels 0-2 color and 3-4 flow.
struct ChannelStats {
  std::array<double, 5> mean{};
  std::array<double, 5> stddev{};
};

/// Population mean and standard deviation over every pixel of every frame.
/// Throws std::invalid_argument on an empty set or a zero-variance channel.
ChannelStats compute_channel_stats(std::span<const VideoClip> clips);
inline ChannelStats compute_channel_stats(const Dataset& train) { return compute_channel_stats(train.clips); }

/// Normalized per-frame network inputs: frames [H, W, 3] and flows [H, W, 2].
template <typename T>
struct ClipTensors {
  std::vector<Tensor<T>> frames;
  std::vector<Tensor<T>> flows;
};

template <typename T>
ClipTensors<T> clip_to_tensors(const VideoClip& clip, const ChannelStats& stats);

/// `len` consecutive frames from a uniformly drawn start; the whole clip when
/// it is not longer than `len`.
VideoClip sample_subsequence(const VideoClip& clip, std::size_t len, std::mt19937_64& rng);

/// Placement of one training sample inside its source clip.
struct AugmentDecision {
  std::size_t top = 0;
  std::size_t left = 0;
  bool flip = false;
};

AugmentDecision draw_augment(const VideoClip& clip, const TrainConfig& config, std::mt19937_64& rng);
VideoClip apply_augment(const VideoClip& clip, const AugmentDecision& decision, std::size_t crop_height,
                        std::size_t crop_width);

/// One random crop and one flip decision, shared by every frame.
inline VideoClip augment(const VideoClip& clip, const TrainConfig& config, std::mt19937_64& rng) {
  return apply_augment(clip, draw_augment(clip, config, rng), config.crop_height, config.crop_width);
}

struct TrainingPair {
  const VideoClip* a = nullptr;
  const VideoClip* b = nullptr;
  bool same_person = false;
};

/// Positives show one identity from camera 0 and camera 1; negatives two
/// distinct identities from random cameras. Positives come first.
std::vector<TrainingPair> build_batch(const Dataset& train, const TrainConfig& config, std::mt19937_64& rng);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState for_params(std::span<const Tensor<T>> params);
};

/// One bias-corrected Adam update in place. Throws TrainingDiverged, leaving
/// parameters and state untouched, if any gradient is non-finite.
template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads, AdamState<T>& state,
               const TrainConfig& config);

/// Everything needed to extract features and classify training identities.
template <typename T>
struct Model {
  NetworkConfig net;
  NetworkParams<T> params;
  ClassifierParams<T> classifier;
  ChannelStats stats;
  std::vector<int> class_ids;  // classifier row -> person id, sorted

  /// Network parameters followed by the classifier weight.
  std::vector<NamedTensor<T>> named() const;
  std::size_t class_index(int person_id) const;
};

struct BatchRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  // Means over the pairs of the batch.
  double id_i = 0, id_j = 0, ver = 0, gate_i = 0, gate_j = 0, total = 0;
  // Mean fused-gate value over every frame of the batch; 1 when ungated.
  double mean_gate = 0;
  // Fraction of the batch's clips whose identity the classifier predicts.
  double id_accuracy = 0;
};

/// Header plus one tab-separated line per record.
std::string format_training_log(std::span<const BatchRecord> records);
std::vector<BatchRecord> parse_training_log(const std::string& text);

template <typename T>
struct TrainState {
  Model<T> model;
  AdamState<T> adam;
  TrainConfig config;
  std::size_t epochs_done = 0;
  std::vector<BatchRecord> log;
};

/// Fresh model and optimizer for a training split.
template <typename T>
TrainState<T> init_training(const Dataset& train, const NetworkConfig& net, const TrainConfig& config);

/// Called after each epoch; returning false stops training early.
template <typename T>
using EpochCallback = std::function<bool(const TrainState<T>&)>;

/// Runs epochs until `state.config.epochs` are done. Each epoch has
/// ceil(identities / pos_pairs_per_batch) batches. Every epoch draws from its
/// own generator seeded by (rng_seed, epoch), so a run resumed at an epoch
/// boundary retraces the uninterrupted one exactly.
template <typename T>
void run_training(TrainState<T>& state, const Dataset& train, const EpochCallback<T>& on_epoch = {});

/// init_training followed by run_training.
template <typename T>
TrainState<T> train(const Dataset& train, const NetworkConfig& net, const TrainConfig& config,
                    const EpochCallback<T>& on_epoch = {});

/// Fraction of clips whose identity the classifier predicts from the whole
/// clip (center crop, no flip, at most `max_frames` frames).
template <typename T>
double identification_accuracy(const Model<T>& model, const Dataset& data, std::size_t max_frames = 128);

/// Persists model, optimizer state, train config and epoch count.
template <typename T>
void save_train_state(const std::filesystem::path& dir, const TrainState<T>& state);
template <typename T>
TrainState<T> load_train_state(const std::filesystem::path& dir);

}  // namespace gcr
