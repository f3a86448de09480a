#include "gcr/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace gcr {
namespace {

// Runs fn(i) for i in [0, n) on up to `threads` threads; fn writes disjoint slots.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  const auto workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

double CMCCurve::at(std::size_t m) const {
  if (ranks.empty() || m == 0) throw std::out_of_range("CMCCurve::at: rank must be in 1..size");
  return ranks[std::min(m, ranks.size()) - 1];
}

std::vector<CropOffset> crop_offsets(std::size_t frame_height, std::size_t frame_width, std::size_t crop_height,
                                     std::size_t crop_width) {
  if (crop_height > frame_height || crop_width > frame_width) {
    throw std::invalid_argument("crop_offsets: crop exceeds frame");
  }
  const auto ys = std::array{std::size_t{0}, (frame_height - crop_height) / 2, frame_height - crop_height};
  const auto xs = std::array{std::size_t{0}, (frame_width - crop_width) / 2, frame_width - crop_width};
  std::vector<CropOffset> out;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      if (!(r == 1 && c == 1)) out.push_back({ys[r], xs[c]});
  return out;
}

template <typename T>
std::vector<double> extract_test_feature(const VideoClip& clip, const Model<T>& model, CropOffset offset, bool flipped,
                                         const EvalConfig& config) {
  auto c = slice_clip(clip, 0, std::min(config.max_frames, clip.frame_count));
  c = crop_clip(c, offset.top, offset.left, model.net.frame_height, model.net.frame_width);
  if (flipped) c = flip_clip(c);
  const auto in = clip_to_tensors<T>(c, model.stats);
  Tape<T> tape(false);
  const auto out = sequence_forward<T>(tape, in.frames, in.flows, model.params, model.net);
  const auto v = out.video_feature.data();
  return {v.begin(), v.end()};
}

template <typename T>
std::vector<std::vector<double>> extract_multi_crop_features(const VideoClip& clip, const Model<T>& model,
                                                             const EvalConfig& config) {
  std::vector<std::vector<double>> out;
  const auto offsets = crop_offsets(clip.height, clip.width, model.net.frame_height, model.net.frame_width);
  for (bool flipped : {false, true})
    for (const auto& o : offsets) out.push_back(extract_test_feature(clip, model, o, flipped, config));
  return out;
}

double summed_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("summed_distance: view counts differ");
  double total = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].size() != b[k].size()) throw std::invalid_argument("summed_distance: feature lengths differ");
    double sq = 0;
    for (std::size_t i = 0; i < a[k].size(); ++i) sq += (a[k][i] - b[k][i]) * (a[k][i] - b[k][i]);
    total += std::sqrt(sq);
  }
  return total;
}

template <typename T>
double multi_crop_distance(const VideoClip& probe, const VideoClip& gallery, const Model<T>& model,
                           const EvalConfig& config) {
  return summed_distance(extract_multi_crop_features(probe, model, config),
                         extract_multi_crop_features(gallery, model, config));
}

template <typename T>
DistanceMatrix compute_distance_matrix(const Dataset& test_set, const Model<T>& model, const EvalConfig& config) {
  DistanceMatrix d;
  std::vector<const VideoClip*> probes, gallery;
  for (int id : test_set.identities()) {
    if (const auto* p = test_set.find(id, 0)) {
      probes.push_back(p);
      d.probe_ids.push_back(id);
    }
    if (const auto* g = test_set.find(id, 1)) {
      gallery.push_back(g);
      d.gallery_ids.push_back(id);
    }
  }
  if (probes.empty()) throw std::invalid_argument("compute_distance_matrix: no probe clips from camera 0");
  for (int id : d.probe_ids) {
    if (std::find(d.gallery_ids.begin(), d.gallery_ids.end(), id) == d.gallery_ids.end()) {
      throw std::invalid_argument("compute_distance_matrix: probe identity " + std::to_string(id) +
                                  " has no gallery clip from camera 1");
    }
  }
  std::vector<const VideoClip*> all = probes;
  all.insert(all.end(), gallery.begin(), gallery.end());
  std::vector<std::vector<std::vector<double>>> features(all.size());
  parallel_for(all.size(), config.threads,
               [&](std::size_t i) { features[i] = extract_multi_crop_features(*all[i], model, config); });

  d.values.resize(probes.size() * gallery.size());
  for (std::size_t p = 0; p < probes.size(); ++p)
    for (std::size_t g = 0; g < gallery.size(); ++g)
      d.values[p * gallery.size() + g] = summed_distance(features[p], features[probes.size() + g]);
  return d;
}

CMCCurve cmc_from_distances(const DistanceMatrix& distances) {
  const auto np = distances.probe_ids.size(), ng = distances.gallery_ids.size();
  if (np == 0 || ng == 0) throw std::invalid_argument("cmc: empty probe or gallery set");
  if (distances.values.size() != np * ng) throw std::invalid_argument("cmc: distance matrix size mismatch");
  std::vector<std::size_t> hits(ng, 0);
  std::vector<std::size_t> order(ng);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t g = 0; g < ng; ++g) {
      const double v = distances(p, g);
      if (!std::isfinite(v) || v < 0) throw std::invalid_argument("cmc: distances must be finite and non-negative");
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return distances(p, a) < distances(p, b); });
    const auto it = std::find_if(order.begin(), order.end(),
                                 [&](std::size_t g) { return distances.gallery_ids[g] == distances.probe_ids[p]; });
    if (it == order.end()) {
      throw std::invalid_argument("cmc: probe identity " + std::to_string(distances.probe_ids[p]) +
                                  " missing from the gallery");
    }
    ++hits[static_cast<std::size_t>(it - order.begin())];
  }
  CMCCurve curve;
  std::size_t cumulative = 0;
  for (std::size_t m = 0; m < ng; ++m) {
    cumulative += hits[m];
    curve.ranks.push_back(100.0 * static_cast<double>(cumulative) / static_cast<double>(np));
  }
  return curve;
}

template <typename T>
CMCCurve compute_cmc(const Dataset& test_set, const Model<T>& model, const EvalConfig& config) {
  return cmc_from_distances(compute_distance_matrix(test_set, model, config));
}

CMCCurve average_curves(std::span<const CMCCurve> curves) {
  if (curves.empty()) throw std::invalid_argument("average_curves: no curves");
  CMCCurve out;
  out.ranks.assign(curves[0].ranks.size(), 0.0);
  for (const auto& c : curves) {
    if (c.ranks.size() != out.ranks.size()) throw std::invalid_argument("average_curves: curve lengths differ");
    for (std::size_t m = 0; m < c.ranks.size(); ++m) out.ranks[m] += c.ranks[m];
  }
  for (auto& v : out.ranks) v /= static_cast<double>(curves.size());
  return out;
}

std::string format_cmc_table(const CMCCurve& curve, std::span<const std::size_t> ranks) {
  std::ostringstream os;
  os << "rank\tpercentage\n";
  auto row = [&](std::size_t m) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", curve.at(m));
    os << m << '\t' << buf << '\n';
  };
  if (ranks.empty()) {
    for (std::size_t m = 1; m <= curve.ranks.size(); ++m) row(m);
  } else {
    for (auto m : ranks) row(m);
  }
  return os.str();
}

#define GCR_INSTANTIATE_EVALUATION(T)                                                                              \
  template std::vector<double> extract_test_feature<T>(const VideoClip&, const Model<T>&, CropOffset, bool,       \
                                                       const EvalConfig&);                                        \
  template std::vector<std::vector<double>> extract_multi_crop_features<T>(const VideoClip&, const Model<T>&,     \
                                                                           const EvalConfig&);                    \
  template double multi_crop_distance<T>(const VideoClip&, const VideoClip&, const Model<T>&, const EvalConfig&); \
  template DistanceMatrix compute_distance_matrix<T>(const Dataset&, const Model<T>&, const EvalConfig&);         \
  template CMCCurve compute_cmc<T>(const Dataset&, const Model<T>&, const EvalConfig&);

GCR_INSTANTIATE_EVALUATION(float)
GCR_INSTANTIATE_EVALUATION(double)

}  // namespace gcr
