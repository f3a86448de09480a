#include "gcr/synthetic.hpp"

#include "gcr/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace gcr {
namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Color random_color(std::mt19937_64& rng, float lo, float hi) {
  Color c{};
  for (auto& v : c) v = static_cast<float>(uniform(rng, lo, hi));
  return c;
}

int round_int(double v) { return static_cast<int>(std::lround(v)); }

int floor_mod(int a, int m) {
  const int r = a % m;
  return r < 0 ? r + m : r;
}

struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
  bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
};

// Person layout relative to its horizontal center, in pixels.
struct Sprite {
  int torso_w, torso_h, head_w, head_h, leg_w, leg_h, top, swing_amplitude;
  int band_top, band_h;

  int total_height() const { return head_h + torso_h + leg_h; }
};

Sprite make_sprite(const SyntheticIdentity& p, int height, int width) {
  Sprite s{};
  s.torso_w = std::clamp(round_int(p.torso_width * width), 3, std::max(3, width - 2));
  s.torso_h = std::max(3, round_int(p.torso_height * height));
  s.head_h = std::max(2, round_int(0.1 * height));
  s.head_w = std::max(2, s.torso_w / 2);
  s.leg_w = std::max(1, round_int(0.12 * width));
  s.leg_h = std::max(2, round_int(p.leg_height * height));
  s.swing_amplitude = std::max(1, round_int(width / 16.0));
  s.band_top = s.torso_h / 3;
  s.band_h = std::max(1, s.torso_h / 5);
  if (s.total_height() > height - 2 || s.torso_w + 2 * s.swing_amplitude > width - 2) {
    throw std::invalid_argument("synthetic: " + std::to_string(height) + "x" + std::to_string(width) +
                                " frame is too small for the person sprite");
  }
  s.top = (height - s.total_height()) / 2;
  return s;
}

struct Occluder {
  Rect start;  // position at t = 0
  int vx = 0, vy = 0;
  Color color{};
  Rect at(int t) const { return {start.x + vx * t, start.y + vy * t, start.w, start.h}; }
};

}  // namespace

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("generator config: " + msg); };
  if (num_identities < 2) fail("num_identities must be at least 2");
  if (clips_per_camera < 1) fail("clips_per_camera must be at least 1");
  if (min_frames < 1 || max_frames < min_frames) fail("frame range must satisfy 1 <= min_frames <= max_frames");
  if (height < 16 || width < 8) fail("frames must be at least 16x8 to hold the person sprite");
  if (!(occluder_density >= 0 && occluder_density <= 1)) fail("occluder_density must lie in [0, 1]");
}

ConfigMap GeneratorConfig::to_map() const {
  ConfigMap m;
  m.set("num_identities", std::uint64_t{num_identities});
  m.set("clips_per_camera", std::uint64_t{clips_per_camera});
  m.set("min_frames", std::uint64_t{min_frames});
  m.set("max_frames", std::uint64_t{max_frames});
  m.set("height", std::uint64_t{height});
  m.set("width", std::uint64_t{width});
  m.set("occluder_density", occluder_density);
  m.set("camera_motion", motion == CameraMotion::tracking ? "tracking" : "stationary");
  m.set("seed", seed);
  return m;
}

void GeneratorConfig::apply(const ConfigMap& m) {
  auto size = [&](const char* key, std::size_t& field) {
    if (m.contains(key)) field = m.get_uint(key);
  };
  size("num_identities", num_identities);
  size("clips_per_camera", clips_per_camera);
  size("min_frames", min_frames);
  size("max_frames", max_frames);
  size("height", height);
  size("width", width);
  if (m.contains("occluder_density")) occluder_density = m.get_double("occluder_density");
  if (m.contains("seed")) seed = m.get_uint("seed");
  if (m.contains("camera_motion")) {
    const auto& v = m.get("camera_motion");
    if (v == "tracking") motion = CameraMotion::tracking;
    else if (v == "stationary") motion = CameraMotion::stationary;
    else throw std::invalid_argument("generator config: camera_motion must be tracking or stationary");
  }
}

SyntheticIdentity make_identity(int id, std::uint64_t seed) {
  auto rng = seeded_rng({seed, 1, static_cast<std::uint64_t>(id)});
  SyntheticIdentity p;
  p.id = id;
  p.torso_color = random_color(rng, 0.15f, 0.85f);
  p.accent_color = random_color(rng, 0.15f, 0.85f);
  p.limb_color = random_color(rng, 0.15f, 0.85f);
  p.head_color = random_color(rng, 0.3f, 0.8f);
  p.torso_width = uniform(rng, 0.36, 0.48);
  p.torso_height = uniform(rng, 0.28, 0.34);
  p.leg_height = uniform(rng, 0.24, 0.3);
  p.gait_frequency = uniform(rng, 0.06, 0.14);
  p.gait_phase = uniform(rng, 0, 2 * std::numbers::pi);
  p.speed = uniform_int(rng, 1, 2);
  return p;
}

CameraSpec make_camera(int id, const GeneratorConfig& config) {
  auto rng = seeded_rng({config.seed, 2, static_cast<std::uint64_t>(id)});
  CameraSpec c;
  c.id = id;
  c.background_seed = rng();
  c.gain = random_color(rng, 0.85f, 1.1f);
  c.offset = random_color(rng, -0.05f, 0.05f);
  c.mirrored = id % 2 == 1;
  c.occluder_density = config.occluder_density;
  c.motion = config.motion;
  return c;
}

RenderedClip render_clip(const SyntheticIdentity& person, const CameraSpec& camera, std::size_t frames,
                         std::size_t height, std::size_t width, std::uint64_t clip_seed) {
  if (frames == 0) throw std::invalid_argument("render_clip: zero frames");
  if (person.speed <= 0) throw std::invalid_argument("render_clip: speed must be positive");
  const int H = static_cast<int>(height), W = static_cast<int>(width), T = static_cast<int>(frames);
  const auto sprite = make_sprite(person, H, W);
  auto rng = seeded_rng({clip_seed});

  // Background: a horizontally periodic block texture fixed per camera.
  const int tile_w = 4 * W;
  const int block = std::max(2, W / 8);
  std::vector<Color> texture(static_cast<std::size_t>(tile_w * H));
  {
    auto bg_rng = seeded_rng({camera.background_seed});
    const auto base = random_color(bg_rng, 0.25f, 0.75f);
    const int bx = (tile_w + block - 1) / block, by = (H + block - 1) / block;
    std::vector<Color> blocks(static_cast<std::size_t>(bx * by));
    for (auto& b : blocks)
      for (std::size_t c = 0; c < 3; ++c)
        b[c] = std::clamp(base[c] + static_cast<float>(uniform(bg_rng, -0.2, 0.2)), 0.05f, 0.95f);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < tile_w; ++x) texture[static_cast<std::size_t>(y * tile_w + x)] = blocks[static_cast<std::size_t>((y / block) * bx + x / block)];
  }

  // Horizontal trajectories in whole pixels.
  std::vector<int> center(static_cast<std::size_t>(T)), bg_shift(static_cast<std::size_t>(T));
  const int bg0 = uniform_int(rng, 0, tile_w - 1);
  if (camera.motion == CameraMotion::tracking) {
    for (int t = 0; t < T; ++t) {
      center[static_cast<std::size_t>(t)] = W / 2;
      bg_shift[static_cast<std::size_t>(t)] = bg0 - person.speed * t;
    }
  } else {
    const int lo = sprite.torso_w / 2 + sprite.swing_amplitude + 1;
    const int hi = std::max(lo, W - (sprite.torso_w - sprite.torso_w / 2) - sprite.swing_amplitude - 1);
    int pos = uniform_int(rng, lo, hi), dir = 1;
    for (int t = 0; t < T; ++t) {
      center[static_cast<std::size_t>(t)] = pos;
      bg_shift[static_cast<std::size_t>(t)] = bg0;
      if (hi == lo) continue;
      int next = pos + dir * person.speed;
      if (next > hi) { next = 2 * hi - next; dir = -1; }
      if (next < lo) { next = 2 * lo - next; dir = 1; }
      pos = std::clamp(next, lo, hi);
    }
  }
  // Limb swing and a one-pixel vertical bob at twice the gait frequency.
  std::vector<int> swing(static_cast<std::size_t>(T)), bob(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const double phase = 2 * std::numbers::pi * person.gait_frequency * t + person.gait_phase;
    swing[static_cast<std::size_t>(t)] = round_int(sprite.swing_amplitude * std::sin(phase));
    bob[static_cast<std::size_t>(t)] = round_int(0.75 * std::sin(2 * phase));
  }

  RenderedClip out;
  out.occluded = uniform(rng, 0, 1) < camera.occluder_density;
  Occluder occ;
  if (out.occluded) {
    const int tc = uniform_int(rng, T / 4, std::max(T / 4, (3 * T) / 4));
    const int cx = center[static_cast<std::size_t>(tc)];
    occ.color = random_color(rng, 0.1f, 0.9f);
    if (uniform(rng, 0, 1) < 0.7) {
      // Crosses horizontally at a speed that differs from both the person and the background.
      std::vector<int> choices;
      for (int v : {-2, -1, 1, 2}) {
        const int bg_v = camera.motion == CameraMotion::tracking ? -person.speed : 0;
        if (v != bg_v && std::abs(v) != (camera.motion == CameraMotion::tracking ? 0 : person.speed)) choices.push_back(v);
      }
      if (choices.empty()) choices = {person.speed + 1};
      occ.vx = choices[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(choices.size()) - 1))];
      occ.start.w = std::max(2, round_int(uniform(rng, 0.3, 0.5) * W));
      occ.start.h = std::max(2, round_int(uniform(rng, 0.35, 0.6) * H));
      occ.start.y = uniform_int(rng, sprite.top, std::max(sprite.top, sprite.top + sprite.total_height() - occ.start.h));
      occ.start.x = cx - occ.start.w / 2 - occ.vx * tc;
    } else {
      occ.vy = uniform(rng, 0, 1) < 0.5 ? -1 : 1;
      occ.start.w = std::max(2, round_int(uniform(rng, 0.5, 0.8) * W));
      occ.start.h = std::max(2, round_int(uniform(rng, 0.2, 0.35) * H));
      occ.start.x = cx - occ.start.w / 2 + uniform_int(rng, -W / 8, W / 8);
      occ.start.y = sprite.top + sprite.total_height() / 2 - occ.start.h / 2 - occ.vy * tc;
    }
  }

  VideoClip& clip = out.clip;
  clip.frame_count = frames;
  clip.height = height;
  clip.width = width;
  const auto px = height * width;
  clip.frames.assign(frames * px * 3, 0.f);
  clip.flow.assign(frames * px * 2, 0.f);
  clip.person_mask.assign(frames * px, 0);
  out.object_ids.assign(frames * px, kBackground);

  for (int t = 0; t < T; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const auto prev = ts == 0 ? ts : ts - 1;
    const int cx = center[ts];
    const int dcx = cx - center[prev];
    const int dbg = bg_shift[ts] - bg_shift[prev];
    const int top = sprite.top + bob[ts];
    const int dbob = bob[ts] - bob[prev];
    const Rect head{cx - sprite.head_w / 2, top, sprite.head_w, sprite.head_h};
    const Rect torso{cx - sprite.torso_w / 2, top + sprite.head_h, sprite.torso_w, sprite.torso_h};
    const int leg_y = torso.y + sprite.torso_h;
    const int leg_off = sprite.torso_w / 4;
    const Rect leg_a{cx - leg_off - sprite.leg_w / 2 + swing[ts], leg_y, sprite.leg_w, sprite.leg_h};
    const Rect leg_b{cx + leg_off - sprite.leg_w / 2 - swing[ts], leg_y, sprite.leg_w, sprite.leg_h};
    const int dleg = swing[ts] - swing[prev];
    const Rect occ_now = occ.at(t);

    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        Color color = texture[static_cast<std::size_t>(y * tile_w + floor_mod(x - bg_shift[ts], tile_w))];
        std::uint8_t id = kBackground;
        int du = dbg, dv = 0;
        if (leg_a.contains(x, y)) { color = person.limb_color; id = kLegA; du = dcx + dleg; dv = dbob; }
        if (leg_b.contains(x, y)) { color = person.limb_color; id = kLegB; du = dcx - dleg; dv = dbob; }
        if (torso.contains(x, y)) {
          const int row = y - torso.y;
          color = (row >= sprite.band_top && row < sprite.band_top + sprite.band_h) ? person.accent_color : person.torso_color;
          id = kBody;
          du = dcx;
          dv = dbob;
        }
        if (head.contains(x, y)) { color = person.head_color; id = kBody; du = dcx; dv = dbob; }
        if (out.occluded && occ_now.contains(x, y)) { color = occ.color; id = kOccluder; du = occ.vx; dv = occ.vy; }
        if (t == 0) du = dv = 0;

        const auto p = ts * px + static_cast<std::size_t>(y * W + x);
        for (std::size_t c = 0; c < 3; ++c) clip.frames[p * 3 + c] = camera.gain[c] * color[c] + camera.offset[c];
        clip.flow[p * 2] = static_cast<float>(du);
        clip.flow[p * 2 + 1] = static_cast<float>(dv);
        clip.person_mask[p] = (id == kBody || id == kLegA || id == kLegB) ? 1 : 0;
        out.object_ids[p] = id;
      }
    }
  }

  if (camera.mirrored) {
    VideoClip labels = clip;  // mirror the labels through the mask channel
    labels.person_mask = out.object_ids;
    clip = flip_clip(clip);
    out.object_ids = flip_clip(labels).person_mask;
  }
  return out;
}

std::vector<RenderedClip> generate_rendered(const GeneratorConfig& config) {
  config.validate();
  std::vector<RenderedClip> out;
  for (std::size_t id = 0; id < config.num_identities; ++id) {
    const auto person = make_identity(static_cast<int>(id), config.seed);
    for (int cam = 0; cam < 2; ++cam) {
      const auto camera = make_camera(cam, config);
      for (std::size_t k = 0; k < config.clips_per_camera; ++k) {
        auto rng = seeded_rng({config.seed, 3, id, static_cast<std::uint64_t>(cam), k});
        const auto frames = static_cast<std::size_t>(
            uniform_int(rng, static_cast<int>(config.min_frames), static_cast<int>(config.max_frames)));
        auto rendered = render_clip(person, camera, frames, config.height, config.width, rng());
        rendered.clip.person_id = static_cast<int>(id);
        rendered.clip.camera_id = cam;
        rendered.clip.clip_index = static_cast<int>(k);
        out.push_back(std::move(rendered));
      }
    }
  }
  return out;
}

Dataset generate_dataset(const GeneratorConfig& config) {
  Dataset ds;
  ds.height = config.height;
  ds.width = config.width;
  for (auto& r : generate_rendered(config)) ds.clips.push_back(std::move(r.clip));
  return ds;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset, double fraction, std::uint64_t seed) {
  auto ids = dataset.identities();
  if (ids.size() < 2) throw std::invalid_argument("train_test_split: need at least 2 identities");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = static_cast<long>(ids.size());
  const auto n_train = std::clamp(std::lround(fraction * static_cast<double>(n)), 1L, n - 1);
  std::vector<int> train_ids(ids.begin(), ids.begin() + n_train);
  std::sort(train_ids.begin(), train_ids.end());

  Dataset train, test;
  train.height = test.height = dataset.height;
  train.width = test.width = dataset.width;
  for (const auto& c : dataset.clips) {
    const bool is_train = std::binary_search(train_ids.begin(), train_ids.end(), c.person_id);
    (is_train ? train : test).clips.push_back(c);
  }
  return {std::move(train), std::move(test)};
}

std::vector<std::vector<std::uint8_t>> ground_truth_gate(const VideoClip& clip) {
  if (!clip.has_mask()) throw std::invalid_argument("ground_truth_gate: clip has no person mask");
  const auto gh = (clip.height + 1) / 2, gw = (clip.width + 1) / 2;
  std::vector<std::vector<std::uint8_t>> out;
  for (std::size_t t = 0; t < clip.frame_count; ++t) {
    auto mask = clip.mask_at(t);
    std::vector<std::uint8_t> g(gh * gw, 0);
    for (std::size_t y = 0; y < clip.height; ++y)
      for (std::size_t x = 0; x < clip.width; ++x)
        if (mask[y * clip.width + x]) g[(y / 2) * gw + x / 2] = 1;
    out.push_back(std::move(g));
  }
  return out;
}

double gate_overlap(std::span<const double> gate, std::span<const std::uint8_t> mask) {
  if (gate.size() != mask.size()) throw std::invalid_argument("gate_overlap: size mismatch");
  double on = 0, total = 0;
  for (std::size_t i = 0; i < gate.size(); ++i) {
    total += gate[i];
    if (mask[i]) on += gate[i];
  }
  return total > 0 ? on / total : 0.0;
}

}  // namespace gcr
