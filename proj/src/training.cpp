#include "gcr/training.hpp"

#include "gcr/checkpoint.hpp"
#include "gcr/random.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace gcr {
namespace {

// Stream tags for seeded_rng.
constexpr std::uint64_t kInitTag = 11;
constexpr std::uint64_t kClassifierTag = 12;
constexpr std::uint64_t kEpochTag = 13;

template <typename T>
std::vector<Tensor<T>> handles(const std::vector<NamedTensor<T>>& named) {
  std::vector<Tensor<T>> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

// Work item for one training pair after sampling and augmentation.
struct PairJob {
  VideoClip a, b;
  std::size_t class_a = 0, class_b = 0;
  bool same = false;
};

template <typename T>
struct PairResult {
  double id_i = 0, id_j = 0, ver = 0, gate_i = 0, gate_j = 0, total = 0;
  double gate_sum = 0;
  std::size_t gate_frames = 0;
  std::size_t correct = 0;
  std::vector<std::vector<T>> grads;
};

template <typename T>
void accumulate_gates(const std::vector<FrameGates<T>>& gates, PairResult<T>& r) {
  for (const auto& g : gates) {
    if (g.fused.defined()) {
      double s = 0;
      for (auto v : g.fused.data()) s += v;
      r.gate_sum += s / static_cast<double>(g.fused.numel());
    } else {
      r.gate_sum += 1.0;
    }
    ++r.gate_frames;
  }
}

template <typename T>
PairResult<T> run_pair(const PairJob& job, const NetworkParams<T>& params, const ClassifierParams<T>& cls,
                       const std::vector<Tensor<T>>& leaves, const Model<T>& model, const TrainConfig& config) {
  for (auto t : leaves) t.zero_grad();
  Tape<T> tape;
  const auto ta = clip_to_tensors<T>(job.a, model.stats);
  const auto tb = clip_to_tensors<T>(job.b, model.stats);
  const auto sa = sequence_forward<T>(tape, ta.frames, ta.flows, params, model.net);
  const auto sb = sequence_forward<T>(tape, tb.frames, tb.flows, params, model.net);
  const LossOptions opts{config.margin, config.gate_regularizer};
  const auto loss = total_loss<T>(tape, sa.video_feature, sb.video_feature, job.class_a, job.class_b, sa.gates,
                                  sb.gates, cls, opts);
  PairResult<T> r;
  r.id_i = loss.id_i;
  r.id_j = loss.id_j;
  r.ver = loss.ver;
  r.gate_i = loss.gate_i;
  r.gate_j = loss.gate_j;
  r.total = loss.total;
  accumulate_gates(sa.gates, r);
  accumulate_gates(sb.gates, r);
  r.correct = (predict_identity(sa.video_feature, cls) == job.class_a) +
              (predict_identity(sb.video_feature, cls) == job.class_b);
  if (!std::isfinite(r.total)) return r;
  tape.backward(loss.total_tensor);
  r.grads.reserve(leaves.size());
  for (const auto& t : leaves) r.grads.emplace_back(t.grad().begin(), t.grad().end());
  return r;
}

std::string format_double(double v) { return format_exact(v); }

ConfigMap with_prefix(const ConfigMap& m, const std::string& prefix) {
  ConfigMap out;
  for (const auto& [k, v] : m.entries()) out.set(prefix + k, v);
  return out;
}

ConfigMap strip_prefix(const ConfigMap& m, const std::string& prefix) {
  ConfigMap out;
  for (const auto& [k, v] : m.entries())
    if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), v);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1)) fail("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam_beta2 must lie in [0, 1)");
  if (!(adam_epsilon > 0)) fail("adam_epsilon must be positive");
  if (!(margin > 0)) fail("margin must be positive");
  if (pos_pairs_per_batch == 0) fail("pos_pairs_per_batch must be positive");
  if (neg_pairs_per_batch == 0) fail("neg_pairs_per_batch must be positive");
  if (subseq_len == 0) fail("subseq_len must be positive");
  if (crop_height < 8 || crop_width < 8 || crop_height % 4 != 0 || crop_width % 4 != 0) {
    fail("crop extents must be at least 8 and divisible by 4, got " + std::to_string(crop_height) + "x" +
         std::to_string(crop_width));
  }
  if (!(flip_probability >= 0 && flip_probability <= 1)) fail("flip_probability must lie in [0, 1]");
  if (epochs == 0) fail("epochs must be positive");
  if (threads == 0) fail("threads must be positive");
}

void TrainConfig::validate_against(std::size_t frame_height, std::size_t frame_width) const {
  if (crop_height > frame_height || crop_width > frame_width) {
    throw std::invalid_argument("train config: crop " + std::to_string(crop_height) + "x" +
                                std::to_string(crop_width) + " exceeds frames of " + std::to_string(frame_height) +
                                "x" + std::to_string(frame_width));
  }
}

ConfigMap TrainConfig::to_map() const {
  ConfigMap m;
  m.set("learning_rate", learning_rate);
  m.set("adam_beta1", adam_beta1);
  m.set("adam_beta2", adam_beta2);
  m.set("adam_epsilon", adam_epsilon);
  m.set("margin", margin);
  m.set("pos_pairs_per_batch", std::uint64_t{pos_pairs_per_batch});
  m.set("neg_pairs_per_batch", std::uint64_t{neg_pairs_per_batch});
  m.set("subseq_len", std::uint64_t{subseq_len});
  m.set("crop_height", std::uint64_t{crop_height});
  m.set("crop_width", std::uint64_t{crop_width});
  m.set("flip_probability", flip_probability);
  m.set("epochs", std::uint64_t{epochs});
  m.set("rng_seed", rng_seed);
  m.set("gate_regularizer", gate_regularizer);
  m.set("threads", std::uint64_t{threads});
  return m;
}

void TrainConfig::apply(const ConfigMap& m) {
  auto real = [&](const char* key, double& field) {
    if (m.contains(key)) field = m.get_double(key);
  };
  auto size = [&](const char* key, std::size_t& field) {
    if (m.contains(key)) field = m.get_uint(key);
  };
  real("learning_rate", learning_rate);
  real("adam_beta1", adam_beta1);
  real("adam_beta2", adam_beta2);
  real("adam_epsilon", adam_epsilon);
  real("margin", margin);
  size("pos_pairs_per_batch", pos_pairs_per_batch);
  size("neg_pairs_per_batch", neg_pairs_per_batch);
  size("subseq_len", subseq_len);
  size("crop_height", crop_height);
  size("crop_width", crop_width);
  real("flip_probability", flip_probability);
  size("epochs", epochs);
  if (m.contains("rng_seed")) rng_seed = m.get_uint("rng_seed");
  if (m.contains("gate_regularizer")) gate_regularizer = m.get_bool("gate_regularizer");
  size("threads", threads);
}

ChannelStats compute_channel_stats(std::span<const VideoClip> clips) {
  if (clips.empty()) throw std::invalid_argument("compute_channel_stats: empty training set");
  std::array<double, 5> sum{};
  double count = 0;
  for (const auto& c : clips) {
    c.validate();
    for (std::size_t p = 0; p < c.frame_count * c.pixels(); ++p) {
      for (std::size_t k = 0; k < 3; ++k) sum[k] += c.frames[p * 3 + k];
      for (std::size_t k = 0; k < 2; ++k) sum[3 + k] += c.flow[p * 2 + k];
    }
    count += static_cast<double>(c.frame_count * c.pixels());
  }
  ChannelStats s;
  for (std::size_t k = 0; k < 5; ++k) s.mean[k] = sum[k] / count;
  std::array<double, 5> sq{};
  for (const auto& c : clips) {
    for (std::size_t p = 0; p < c.frame_count * c.pixels(); ++p) {
      for (std::size_t k = 0; k < 3; ++k) sq[k] += std::pow(c.frames[p * 3 + k] - s.mean[k], 2);
      for (std::size_t k = 0; k < 2; ++k) sq[3 + k] += std::pow(c.flow[p * 2 + k] - s.mean[3 + k], 2);
    }
  }
  static constexpr const char* names[] = {"red", "green", "blue", "flow u", "flow v"};
  for (std::size_t k = 0; k < 5; ++k) {
    s.stddev[k] = std::sqrt(sq[k] / count);
    if (!(s.stddev[k] > 0)) {
      throw std::invalid_argument(std::string("compute_channel_stats: channel '") + names[k] +
                                  "' has zero variance over the training set");
    }
  }
  return s;
}

template <typename T>
ClipTensors<T> clip_to_tensors(const VideoClip& clip, const ChannelStats& stats) {
  clip.validate();
  ClipTensors<T> out;
  const auto px = clip.pixels();
  for (std::size_t t = 0; t < clip.frame_count; ++t) {
    std::vector<T> f(px * 3), o(px * 2);
    const auto frame = clip.frame(t);
    const auto flow = clip.flow_at(t);
    for (std::size_t p = 0; p < px; ++p) {
      for (std::size_t k = 0; k < 3; ++k) f[p * 3 + k] = static_cast<T>((frame[p * 3 + k] - stats.mean[k]) / stats.stddev[k]);
      for (std::size_t k = 0; k < 2; ++k)
        o[p * 2 + k] = static_cast<T>((flow[p * 2 + k] - stats.mean[3 + k]) / stats.stddev[3 + k]);
    }
    out.frames.push_back(Tensor<T>::from({clip.height, clip.width, 3}, std::move(f)));
    out.flows.push_back(Tensor<T>::from({clip.height, clip.width, 2}, std::move(o)));
  }
  return out;
}

VideoClip sample_subsequence(const VideoClip& clip, std::size_t len, std::mt19937_64& rng) {
  if (len == 0) throw std::invalid_argument("sample_subsequence: len must be positive");
  if (clip.frame_count == 0) throw std::invalid_argument("sample_subsequence: empty clip");
  if (clip.frame_count <= len) return clip;
  const auto start = std::uniform_int_distribution<std::size_t>(0, clip.frame_count - len)(rng);
  return slice_clip(clip, start, len);
}

AugmentDecision draw_augment(const VideoClip& clip, const TrainConfig& config, std::mt19937_64& rng) {
  config.validate_against(clip.height, clip.width);
  AugmentDecision d;
  d.top = std::uniform_int_distribution<std::size_t>(0, clip.height - config.crop_height)(rng);
  d.left = std::uniform_int_distribution<std::size_t>(0, clip.width - config.crop_width)(rng);
  d.flip = std::uniform_real_distribution<double>(0, 1)(rng) < config.flip_probability;
  return d;
}

VideoClip apply_augment(const VideoClip& clip, const AugmentDecision& decision, std::size_t crop_height,
                        std::size_t crop_width) {
  auto out = crop_clip(clip, decision.top, decision.left, crop_height, crop_width);
  return decision.flip ? flip_clip(out) : out;
}

std::vector<TrainingPair> build_batch(const Dataset& train, const TrainConfig& config, std::mt19937_64& rng) {
  const auto ids = train.identities();
  if (ids.size() < 2) throw std::invalid_argument("build_batch: need at least 2 training identities");
  std::map<std::pair<int, int>, std::vector<const VideoClip*>> views;
  for (const auto& c : train.clips) views[{c.person_id, c.camera_id}].push_back(&c);
  for (int id : ids) {
    if (!views.count({id, 0}) || !views.count({id, 1})) {
      throw std::invalid_argument("build_batch: identity " + std::to_string(id) + " lacks a view from camera 0 or 1");
    }
  }
  auto pick = [&](int id, int cam) {
    const auto& v = views.at({id, cam});
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  std::uniform_int_distribution<std::size_t> any_id(0, ids.size() - 1);
  std::uniform_int_distribution<int> any_cam(0, 1);

  std::vector<TrainingPair> batch;
  batch.reserve(config.pairs_per_batch());
  for (std::size_t k = 0; k < config.pos_pairs_per_batch; ++k) {
    const int id = ids[any_id(rng)];
    const auto* a = pick(id, 0);
    batch.push_back({a, pick(id, 1), true});
  }
  for (std::size_t k = 0; k < config.neg_pairs_per_batch; ++k) {
    const auto i = any_id(rng);
    auto j = std::uniform_int_distribution<std::size_t>(0, ids.size() - 2)(rng);
    if (j >= i) ++j;
    const int cam_a = any_cam(rng);
    const int cam_b = any_cam(rng);
    const auto* a = pick(ids[i], cam_a);
    batch.push_back({a, pick(ids[j], cam_b), false});
  }
  return batch;
}

template <typename T>
AdamState<T> AdamState<T>::for_params(std::span<const Tensor<T>> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), T(0));
    s.v.emplace_back(p.numel(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads, AdamState<T>& state,
               const TrainConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters, " +
                                std::to_string(grads.size()) + " gradients, " + std::to_string(state.m.size()) +
                                " moment arrays");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: array " + std::to_string(i) + " length mismatch");
    }
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      if (!std::isfinite(grads[i][k])) {
        throw TrainingDiverged("adam_step: non-finite gradient at array " + std::to_string(i) + ", index " +
                               std::to_string(k) + " (step " + std::to_string(state.step + 1) + ")");
      }
    }
  }
  const auto t = static_cast<double>(++state.step);
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = grads[i][k];
      const double mk = b1 * m[k] + (1 - b1) * g;
      const double vk = b2 * v[k] + (1 - b2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      theta[k] = static_cast<T>(theta[k] - config.learning_rate * (mk / c1) / (std::sqrt(vk / c2) + config.adam_epsilon));
    }
  }
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::named() const {
  auto out = params.named();
  out.push_back({"classifier.weight", classifier.weight});
  return out;
}

template <typename T>
std::size_t Model<T>::class_index(int person_id) const {
  auto it = std::lower_bound(class_ids.begin(), class_ids.end(), person_id);
  if (it == class_ids.end() || *it != person_id) {
    throw std::invalid_argument("model: person " + std::to_string(person_id) + " is not a training identity");
  }
  return static_cast<std::size_t>(it - class_ids.begin());
}

std::string format_training_log(std::span<const BatchRecord> records) {
  std::ostringstream os;
  os << "epoch\tbatch\tid_i\tid_j\tver\tgate_i\tgate_j\ttotal\tmean_gate\tid_accuracy\n";
  for (const auto& r : records) {
    os << r.epoch << '\t' << r.batch;
    for (double v : {r.id_i, r.id_j, r.ver, r.gate_i, r.gate_j, r.total, r.mean_gate, r.id_accuracy})
      os << '\t' << format_double(v);
    os << '\n';
  }
  return os.str();
}

std::vector<BatchRecord> parse_training_log(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<BatchRecord> out;
  if (!std::getline(is, line) || line.rfind("epoch\t", 0) != 0) {
    throw std::runtime_error("training log: missing header");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    BatchRecord r;
    ls >> r.epoch >> r.batch;
    for (double* f : {&r.id_i, &r.id_j, &r.ver, &r.gate_i, &r.gate_j, &r.total, &r.mean_gate, &r.id_accuracy}) {
      std::string tok;
      ls >> tok;
      *f = std::stod(tok);
    }
    if (!ls) throw std::runtime_error("training log: malformed line '" + line + "'");
    out.push_back(r);
  }
  return out;
}

template <typename T>
TrainState<T> init_training(const Dataset& train, const NetworkConfig& net, const TrainConfig& config) {
  config.validate();
  net.validate();
  config.validate_against(train.height, train.width);
  if (net.frame_height != config.crop_height || net.frame_width != config.crop_width) {
    throw std::invalid_argument("training: network input " + std::to_string(net.frame_height) + "x" +
                                std::to_string(net.frame_width) + " differs from the crop " +
                                std::to_string(config.crop_height) + "x" + std::to_string(config.crop_width));
  }
  TrainState<T> s;
  s.config = config;
  s.model.net = net;
  s.model.class_ids = train.identities();
  if (s.model.class_ids.size() < 2) throw std::invalid_argument("training: need at least 2 identities");
  s.model.stats = compute_channel_stats(train);
  s.model.params = init_params<T>(net, seeded_rng({config.rng_seed, kInitTag})());
  s.model.classifier =
      init_classifier<T>(s.model.class_ids.size(), net.feature_dim, seeded_rng({config.rng_seed, kClassifierTag})());
  const auto leaves = handles(s.model.named());
  s.adam = AdamState<T>::for_params(leaves);
  return s;
}

template <typename T>
void run_training(TrainState<T>& state, const Dataset& train, const EpochCallback<T>& on_epoch) {
  const auto& cfg = state.config;
  cfg.validate();
  auto& model = state.model;
  if (train.identities() != model.class_ids) {
    throw std::invalid_argument("training: dataset identities differ from the model's training identities");
  }
  const auto batches = (model.class_ids.size() + cfg.pos_pairs_per_batch - 1) / cfg.pos_pairs_per_batch;
  const auto n_pairs = cfg.pairs_per_batch();
  const auto workers = std::min(cfg.threads, n_pairs);

  while (state.epochs_done < cfg.epochs) {
    const auto epoch = state.epochs_done;
    auto rng = seeded_rng({cfg.rng_seed, kEpochTag, epoch});
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<PairJob> jobs;
      for (const auto& p : build_batch(train, cfg, rng)) {
        PairJob job;
        job.a = sample_subsequence(*p.a, cfg.subseq_len, rng);
        job.a = augment(job.a, cfg, rng);
        job.b = sample_subsequence(*p.b, cfg.subseq_len, rng);
        job.b = augment(job.b, cfg, rng);
        job.class_a = model.class_index(p.a->person_id);
        job.class_b = model.class_index(p.b->person_id);
        job.same = p.same_person;
        jobs.push_back(std::move(job));
      }

      std::vector<PairResult<T>> results(n_pairs);
      auto work = [&](std::size_t first, std::size_t stride) {
        const auto params = model.params.clone(true);
        const ClassifierParams<T> cls{model.classifier.weight.clone(true)};
        auto leaves = handles(params.named());
        leaves.push_back(cls.weight);
        for (std::size_t k = first; k < n_pairs; k += stride) results[k] = run_pair(jobs[k], params, cls, leaves, model, cfg);
      };
      if (workers <= 1) {
        work(0, 1);
      } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            try {
              work(w, workers);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }

      BatchRecord rec;
      rec.epoch = epoch;
      rec.batch = b;
      double gate_sum = 0, gate_frames = 0, correct = 0;
      for (const auto& r : results) {
        rec.id_i += r.id_i;
        rec.id_j += r.id_j;
        rec.ver += r.ver;
        rec.gate_i += r.gate_i;
        rec.gate_j += r.gate_j;
        rec.total += r.total;
        gate_sum += r.gate_sum;
        gate_frames += static_cast<double>(r.gate_frames);
        correct += static_cast<double>(r.correct);
      }
      const auto n = static_cast<double>(n_pairs);
      for (double* f : {&rec.id_i, &rec.id_j, &rec.ver, &rec.gate_i, &rec.gate_j, &rec.total}) *f /= n;
      rec.mean_gate = gate_sum / gate_frames;
      rec.id_accuracy = correct / (2 * n);

      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      for (std::size_t k = 0; k < n_pairs; ++k) {
        const auto& r = results[k];
        if (!all_finite(std::array{r.id_i, r.id_j, r.ver, r.gate_i, r.gate_j, r.total})) {
          throw TrainingDiverged("training diverged at " + where + ", pair " + std::to_string(k) +
                                 ": non-finite loss (id " + format_double(r.id_i) + "/" + format_double(r.id_j) +
                                 ", ver " + format_double(r.ver) + ", total " + format_double(r.total) + ")");
        }
      }

      // Mean gradient over the batch, summed in pair order.
      auto grads = results[0].grads;
      for (std::size_t k = 1; k < n_pairs; ++k)
        for (std::size_t i = 0; i < grads.size(); ++i)
          for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += results[k].grads[i][j];
      for (auto& g : grads)
        for (auto& x : g) x = static_cast<T>(x / static_cast<T>(n_pairs));

      auto leaves = handles(model.named());
      try {
        adam_step<T>(leaves, grads, state.adam, cfg);
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged("training diverged at " + where + ": " + e.what());
      }
      state.log.push_back(rec);
    }
    ++state.epochs_done;
    if (on_epoch && !on_epoch(state)) break;
  }
}

template <typename T>
TrainState<T> train(const Dataset& train_set, const NetworkConfig& net, const TrainConfig& config,
                    const EpochCallback<T>& on_epoch) {
  auto state = init_training<T>(train_set, net, config);
  run_training(state, train_set, on_epoch);
  return state;
}

template <typename T>
double identification_accuracy(const Model<T>& model, const Dataset& data, std::size_t max_frames) {
  if (data.clips.empty()) throw std::invalid_argument("identification_accuracy: empty dataset");
  const auto ch = model.net.frame_height, cw = model.net.frame_width;
  std::size_t correct = 0;
  for (const auto& clip : data.clips) {
    if (clip.height < ch || clip.width < cw) throw std::invalid_argument("identification_accuracy: clip smaller than crop");
    auto c = slice_clip(clip, 0, std::min(max_frames, clip.frame_count));
    c = crop_clip(c, (clip.height - ch) / 2, (clip.width - cw) / 2, ch, cw);
    const auto in = clip_to_tensors<T>(c, model.stats);
    Tape<T> tape(false);
    const auto out = sequence_forward<T>(tape, in.frames, in.flows, model.params, model.net);
    correct += predict_identity(out.video_feature, model.classifier) == model.class_index(clip.person_id);
  }
  return static_cast<double>(correct) / static_cast<double>(data.clips.size());
}

template <typename T>
void save_train_state(const std::filesystem::path& dir, const TrainState<T>& state) {
  CheckpointContents<T> ck;
  ck.fields = with_prefix(state.model.net.to_map(), "net.");
  ck.fields.merge(with_prefix(state.config.to_map(), "train."));
  for (std::size_t k = 0; k < 5; ++k) {
    ck.fields.set("stats.mean." + std::to_string(k), format_double(state.model.stats.mean[k]));
    ck.fields.set("stats.stddev." + std::to_string(k), format_double(state.model.stats.stddev[k]));
  }
  std::string ids;
  for (int id : state.model.class_ids) ids += (ids.empty() ? "" : ",") + std::to_string(id);
  ck.fields.set("class_ids", ids);
  ck.fields.set("epochs_done", std::uint64_t{state.epochs_done});
  ck.fields.set("adam.step", std::uint64_t{state.adam.step});

  const auto named = state.model.named();
  ck.arrays = named;
  for (std::size_t i = 0; i < named.size(); ++i) {
    ck.arrays.push_back({"adam.m." + named[i].name, Tensor<T>::from(named[i].tensor.shape(), state.adam.m[i])});
    ck.arrays.push_back({"adam.v." + named[i].name, Tensor<T>::from(named[i].tensor.shape(), state.adam.v[i])});
  }
  save_checkpoint(dir, ck);
  std::ofstream(dir / "training_log.tsv", std::ios::binary) << format_training_log(state.log);
}

template <typename T>
TrainState<T> load_train_state(const std::filesystem::path& dir) {
  const auto ck = load_checkpoint<T>(dir);
  TrainState<T> s;
  s.model.net.apply(strip_prefix(ck.fields, "net."));
  s.model.net.validate();
  s.config.apply(strip_prefix(ck.fields, "train."));
  for (std::size_t k = 0; k < 5; ++k) {
    s.model.stats.mean[k] = ck.fields.get_double("stats.mean." + std::to_string(k));
    s.model.stats.stddev[k] = ck.fields.get_double("stats.stddev." + std::to_string(k));
  }
  std::istringstream ids(ck.fields.get("class_ids"));
  for (std::string tok; std::getline(ids, tok, ',');) s.model.class_ids.push_back(std::stoi(tok));
  s.epochs_done = ck.fields.get_uint("epochs_done");

  std::vector<NamedTensor<T>> net_arrays;
  for (const auto& a : ck.arrays)
    if (a.name.rfind("adam.", 0) != 0 && a.name != "classifier.weight") net_arrays.push_back(a);
  s.model.params = params_from_named<T>(s.model.net, net_arrays, true);
  s.model.classifier.weight = ck.array("classifier.weight").clone(true);
  if (s.model.classifier.num_identities() != s.model.class_ids.size()) {
    throw std::runtime_error("checkpoint: classifier rows disagree with class_ids");
  }

  s.adam.step = ck.fields.get_uint("adam.step");
  for (const auto& n : s.model.named()) {
    const auto& m = ck.array("adam.m." + n.name);
    const auto& v = ck.array("adam.v." + n.name);
    if (m.numel() != n.tensor.numel() || v.numel() != n.tensor.numel()) {
      throw std::runtime_error("checkpoint: optimizer moments for '" + n.name + "' have the wrong size");
    }
    s.adam.m.emplace_back(m.data().begin(), m.data().end());
    s.adam.v.emplace_back(v.data().begin(), v.data().end());
  }
  const auto log_path = dir / "training_log.tsv";
  if (std::filesystem::exists(log_path)) {
    std::ifstream in(log_path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    s.log = parse_training_log(buf.str());
  }
  return s;
}

#define GCR_INSTANTIATE_TRAINING(T)                                                                               \
  template ClipTensors<T> clip_to_tensors<T>(const VideoClip&, const ChannelStats&);                             \
  template struct AdamState<T>;                                                                                  \
  template void adam_step<T>(std::span<Tensor<T>>, std::span<const std::vector<T>>, AdamState<T>&,               \
                             const TrainConfig&);                                                                \
  template struct Model<T>;                                                                                      \
  template TrainState<T> init_training<T>(const Dataset&, const NetworkConfig&, const TrainConfig&);             \
  template void run_training<T>(TrainState<T>&, const Dataset&, const EpochCallback<T>&);                        \
  template TrainState<T> train<T>(const Dataset&, const NetworkConfig&, const TrainConfig&,                      \
                                  const EpochCallback<T>&);                                                      \
  template double identification_accuracy<T>(const Model<T>&, const Dataset&, std::size_t);                      \
  template void save_train_state<T>(const std::filesystem::path&, const TrainState<T>&);                         \
  template TrainState<T> load_train_state<T>(const std::filesystem::path&);

GCR_INSTANTIATE_TRAINING(float)
GCR_INSTANTIATE_TRAINING(double)

}  // namespace gcr
