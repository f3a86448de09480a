#include "gcr/synthetic.hpp"
#include "gcr/video.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

using namespace gcr;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.num_identities = 6;
  c.min_frames = 8;
  c.max_frames = 14;
  c.height = 32;
  c.width = 16;
  c.seed = 42;
  return c;
}

struct WarpStats {
  std::size_t checked = 0;
  std::size_t total = 0;
  std::size_t mismatched = 0;
};

// frame_t(x) must equal frame_{t-1}(x - flow_t(x)) wherever the source pixel
// lies inside the frame and shows the same object.
WarpStats check_flow_warp(const RenderedClip& r) {
  const auto& c = r.clip;
  const long H = static_cast<long>(c.height), W = static_cast<long>(c.width);
  WarpStats s;
  for (std::size_t t = 1; t < c.frame_count; ++t) {
    const auto cur = c.frame(t), prev = c.frame(t - 1);
    const auto flow = c.flow_at(t);
    const auto* lab = r.object_ids.data() + t * c.pixels();
    const auto* lab_prev = r.object_ids.data() + (t - 1) * c.pixels();
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        const auto p = static_cast<std::size_t>(y * W + x);
        ++s.total;
        const float u = flow[2 * p], v = flow[2 * p + 1];
        EXPECT_EQ(u, std::round(u));
        EXPECT_EQ(v, std::round(v));
        const long sx = x - static_cast<long>(u), sy = y - static_cast<long>(v);
        if (sx < 0 || sx >= W || sy < 0 || sy >= H) continue;
        const auto q = static_cast<std::size_t>(sy * W + sx);
        if (lab_prev[q] != lab[p]) continue;
        ++s.checked;
        for (std::size_t ch = 0; ch < 3; ++ch)
          if (cur[3 * p + ch] != prev[3 * q + ch]) ++s.mismatched;
      }
  }
  return s;
}

bool same_clip(const VideoClip& a, const VideoClip& b) {
  return a.person_id == b.person_id && a.camera_id == b.camera_id && a.clip_index == b.clip_index &&
         a.frame_count == b.frame_count && a.height == b.height && a.width == b.width && a.frames == b.frames &&
         a.flow == b.flow && a.person_mask == b.person_mask;
}

}  // namespace

TEST(SyntheticTest, GenerationIsDeterministicAndSeedSensitive) {
  const auto a = generate_dataset(small_config());
  const auto b = generate_dataset(small_config());
  ASSERT_EQ(a.clips.size(), b.clips.size());
  for (std::size_t i = 0; i < a.clips.size(); ++i) EXPECT_TRUE(same_clip(a.clips[i], b.clips[i]));
  auto other = small_config();
  other.seed = 43;
  const auto c = generate_dataset(other);
  EXPECT_NE(a.clips[0].frames, c.clips[0].frames);
}

TEST(SyntheticTest, CountsExtentsAndFrameRange) {
  auto config = small_config();
  config.clips_per_camera = 2;
  const auto data = generate_dataset(config);
  EXPECT_EQ(data.clips.size(), config.num_identities * 2 * 2);
  EXPECT_EQ(data.identities().size(), config.num_identities);
  std::set<std::size_t> lengths;
  for (const auto& c : data.clips) {
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.height, config.height);
    EXPECT_EQ(c.width, config.width);
    EXPECT_GE(c.frame_count, config.min_frames);
    EXPECT_LE(c.frame_count, config.max_frames);
    EXPECT_TRUE(c.has_mask());
    lengths.insert(c.frame_count);
    for (float v : c.flow_at(0)) EXPECT_EQ(v, 0.0f);
  }
  EXPECT_GT(lengths.size(), 1u);
  for (int id : data.identities()) {
    EXPECT_NE(data.find(id, 0), nullptr);
    EXPECT_NE(data.find(id, 1), nullptr);
  }
  EXPECT_EQ(data.find(999, 0), nullptr);
}

TEST(SyntheticTest, FlowWarpsPreviousFrameExactly) {
  for (auto motion : {CameraMotion::tracking, CameraMotion::stationary}) {
    for (double density : {0.0, 1.0}) {
      auto config = small_config();
      config.motion = motion;
      config.occluder_density = density;
      std::size_t checked = 0, total = 0;
      for (const auto& r : generate_rendered(config)) {
        const auto s = check_flow_warp(r);
        EXPECT_EQ(s.mismatched, 0u) << "person " << r.clip.person_id << " camera " << r.clip.camera_id;
        checked += s.checked;
        total += s.total;
      }
      EXPECT_GT(static_cast<double>(checked) / static_cast<double>(total), 0.75);
    }
  }
}

TEST(SyntheticTest, FlowHasBothComponents) {
  const auto rendered = generate_rendered(small_config());
  bool u = false, v = false;
  for (const auto& r : rendered)
    for (std::size_t i = 0; i < r.clip.flow.size(); i += 2) {
      u = u || r.clip.flow[i] != 0;
      v = v || r.clip.flow[i + 1] != 0;
    }
  EXPECT_TRUE(u);
  EXPECT_TRUE(v);
}

TEST(SyntheticTest, MirroredCameraRendersTheFlippedClip) {
  const auto person = make_identity(3, 7);
  auto camera = make_camera(0, small_config());
  const auto plain = render_clip(person, camera, 9, 32, 16, 123);
  camera.mirrored = true;
  const auto mirrored = render_clip(person, camera, 9, 32, 16, 123);
  const auto flipped = flip_clip(plain.clip);
  EXPECT_EQ(mirrored.clip.frames, flipped.frames);
  EXPECT_EQ(mirrored.clip.flow, flipped.flow);
  EXPECT_EQ(mirrored.clip.person_mask, flipped.person_mask);
}

TEST(SyntheticTest, OccluderDensityControlsOcclusion) {
  auto config = small_config();
  config.num_identities = 20;
  config.occluder_density = 0.0;
  for (const auto& r : generate_rendered(config)) {
    EXPECT_FALSE(r.occluded);
    EXPECT_EQ(std::count(r.object_ids.begin(), r.object_ids.end(), kOccluder), 0);
  }
  config.occluder_density = 1.0;
  for (const auto& r : generate_rendered(config)) {
    EXPECT_TRUE(r.occluded);
    // occluded person pixels are not part of the mask
    for (std::size_t i = 0; i < r.object_ids.size(); ++i)
      if (r.object_ids[i] == kOccluder) EXPECT_EQ(r.clip.person_mask[i], 0);
  }
  config.occluder_density = 0.5;
  std::size_t occluded = 0, n = 0;
  for (const auto& r : generate_rendered(config)) {
    occluded += r.occluded;
    ++n;
  }
  EXPECT_GT(occluded, n / 5);
  EXPECT_LT(occluded, n - n / 5);
}

TEST(SyntheticTest, MaskMatchesPersonLabels) {
  for (const auto& r : generate_rendered(small_config()))
    for (std::size_t i = 0; i < r.object_ids.size(); ++i) {
      const bool person = r.object_ids[i] == kBody || r.object_ids[i] == kLegA || r.object_ids[i] == kLegB;
      ASSERT_EQ(r.clip.person_mask[i], person ? 1 : 0);
    }
}

TEST(SyntheticTest, CamerasDifferInAppearance) {
  const auto data = generate_dataset(small_config());
  const auto* a = data.find(0, 0);
  const auto* b = data.find(0, 1);
  ASSERT_TRUE(a && b);
  auto mean = [](const VideoClip& c) {
    double s = 0;
    for (float v : c.frame(0)) s += v;
    return s / static_cast<double>(c.frame(0).size());
  };
  EXPECT_NE(mean(*a), mean(*b));
}

TEST(SplitTest, DisjointCoveringAndDeterministic) {
  auto config = small_config();
  config.num_identities = 9;
  const auto data = generate_dataset(config);
  for (double f : {0.5, 0.01, 0.99}) {
    const auto [train, test] = train_test_split(data, f, 5);
    const auto tr = train.identities(), te = test.identities();
    const std::size_t expected = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(f * 9)), 1, 8);
    EXPECT_EQ(tr.size(), expected);
    EXPECT_EQ(tr.size() + te.size(), 9u);
    std::vector<int> common;
    std::set_intersection(tr.begin(), tr.end(), te.begin(), te.end(), std::back_inserter(common));
    EXPECT_TRUE(common.empty());
    EXPECT_EQ(train.clips.size(), 2 * tr.size());
  }
  EXPECT_EQ(train_test_split(data, 0.5, 5).first.identities(), train_test_split(data, 0.5, 5).first.identities());
  EXPECT_NE(train_test_split(data, 0.5, 5).first.identities(), train_test_split(data, 0.5, 6).first.identities());
}

TEST(GroundTruthGateTest, MatchesPooledMaskOracle) {
  auto config = small_config();
  config.width = 15;  // odd width exercises the ragged last column
  config.height = 33;
  const auto data = generate_dataset(config);
  const auto& clip = data.clips[1];
  const auto gates = ground_truth_gate(clip);
  ASSERT_EQ(gates.size(), clip.frame_count);
  const std::size_t gh = 17, gw = 8;
  for (std::size_t t = 0; t < clip.frame_count; ++t) {
    ASSERT_EQ(gates[t].size(), gh * gw);
    const auto mask = clip.mask_at(t);
    for (std::size_t y = 0; y < gh; ++y)
      for (std::size_t x = 0; x < gw; ++x) {
        std::uint8_t m = 0;
        for (std::size_t yy = 2 * y; yy < std::min(2 * y + 2, clip.height); ++yy)
          for (std::size_t xx = 2 * x; xx < std::min(2 * x + 2, clip.width); ++xx) m |= mask[yy * clip.width + xx];
        EXPECT_EQ(gates[t][y * gw + x], m);
      }
  }
  VideoClip no_mask = clip;
  no_mask.person_mask.clear();
  EXPECT_THROW(ground_truth_gate(no_mask), std::invalid_argument);
}

TEST(GroundTruthGateTest, OverlapFraction) {
  const std::vector<double> gate{0.5, 0.25, 0.25, 0};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1};
  EXPECT_DOUBLE_EQ(gate_overlap(gate, mask), 0.75);
}

TEST(VideoTest, FlipIsAnInvolutionAndNegatesHorizontalFlow) {
  const auto clip = generate_dataset(small_config()).clips[0];
  const auto f = flip_clip(clip);
  EXPECT_TRUE(same_clip(flip_clip(f), clip));
  const auto W = clip.width;
  for (std::size_t y = 0; y < clip.height; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const auto p = y * W + x, q = y * W + (W - 1 - x);
      EXPECT_EQ(f.flow_at(1)[2 * q], -clip.flow_at(1)[2 * p]);
      EXPECT_EQ(f.flow_at(1)[2 * q + 1], clip.flow_at(1)[2 * p + 1]);
      EXPECT_EQ(f.frame(1)[3 * q + 2], clip.frame(1)[3 * p + 2]);
    }
}

TEST(VideoTest, CropAndSliceSelectTheRightWindow) {
  const auto clip = generate_dataset(small_config()).clips[2];
  const auto c = crop_clip(clip, 3, 2, 10, 7);
  EXPECT_EQ(c.height, 10u);
  EXPECT_EQ(c.width, 7u);
  for (std::size_t t = 0; t < clip.frame_count; ++t)
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 7; ++x) {
        const auto p = y * 7 + x, q = (y + 3) * clip.width + (x + 2);
        ASSERT_EQ(c.frame(t)[3 * p + 1], clip.frame(t)[3 * q + 1]);
        ASSERT_EQ(c.flow_at(t)[2 * p], clip.flow_at(t)[2 * q]);
        ASSERT_EQ(c.mask_at(t)[p], clip.mask_at(t)[q]);
      }
  EXPECT_THROW(crop_clip(clip, 30, 0, 10, 7), std::out_of_range);
  const auto s = slice_clip(clip, 2, 3);
  EXPECT_EQ(s.frame_count, 3u);
  EXPECT_TRUE(std::equal(s.frame(0).begin(), s.frame(0).end(), clip.frame(2).begin()));
  EXPECT_THROW(slice_clip(clip, clip.frame_count, 1), std::out_of_range);
}

TEST(DatasetIoTest, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gcr_test_dataset_io";
  std::filesystem::remove_all(dir);
  auto config = small_config();
  config.clips_per_camera = 2;
  const auto data = generate_dataset(config);
  save_dataset(dir, data);
  const auto loaded = load_dataset(dir);
  EXPECT_EQ(loaded.height, data.height);
  EXPECT_EQ(loaded.width, data.width);
  ASSERT_EQ(loaded.clips.size(), data.clips.size());
  for (std::size_t i = 0; i < data.clips.size(); ++i) EXPECT_TRUE(same_clip(loaded.clips[i], data.clips[i])) << i;
  EXPECT_THROW(load_dataset(dir / "missing"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(GeneratorConfigTest, ValidationAndRoundTrip) {
  auto c = small_config();
  c.motion = CameraMotion::stationary;
  c.occluder_density = 0.25;
  GeneratorConfig d;
  d.apply(c.to_map());
  EXPECT_EQ(d.to_map().entries(), c.to_map().entries());
  GeneratorConfig bad;
  bad.min_frames = 10;
  bad.max_frames = 5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = GeneratorConfig{};
  bad.num_identities = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = GeneratorConfig{};
  bad.occluder_density = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}
