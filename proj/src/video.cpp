#include "gcr/video.hpp"

#include "gcr/binary_io.hpp"
#include "gcr/config_map.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <tuple>

namespace gcr {
namespace {

std::string person_dir(int person) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "person_%04d", person);
  return buf;
}

std::string camera_dir(int camera) { return "cam_" + std::to_string(camera); }

}  // namespace

void VideoClip::validate() const {
  const auto n = frame_count * pixels();
  if (frame_count == 0) throw std::invalid_argument("clip: no frames");
  if (frames.size() != n * kColorChannels) throw std::invalid_argument("clip: frame array length mismatch");
  if (flow.size() != n * kFlowChannels) throw std::invalid_argument("clip: flow array length mismatch");
  if (!person_mask.empty() && person_mask.size() != n) throw std::invalid_argument("clip: mask array length mismatch");
}

VideoClip slice_clip(const VideoClip& clip, std::size_t first, std::size_t count) {
  if (count == 0 || first + count > clip.frame_count) {
    throw std::out_of_range("slice_clip: frames [" + std::to_string(first) + ", " + std::to_string(first + count) +
                            ") outside clip of " + std::to_string(clip.frame_count));
  }
  VideoClip out = clip;
  out.frame_count = count;
  const auto px = clip.pixels();
  auto take = [&](const auto& src, std::size_t per_frame) {
    using V = std::decay_t<decltype(src)>;
    return V(src.begin() + static_cast<std::ptrdiff_t>(first * per_frame),
             src.begin() + static_cast<std::ptrdiff_t>((first + count) * per_frame));
  };
  out.frames = take(clip.frames, px * VideoClip::kColorChannels);
  out.flow = take(clip.flow, px * VideoClip::kFlowChannels);
  if (clip.has_mask()) out.person_mask = take(clip.person_mask, px);
  return out;
}

VideoClip crop_clip(const VideoClip& clip, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || top + height > clip.height || left + width > clip.width) {
    throw std::out_of_range("crop_clip: window exceeds frame extents");
  }
  VideoClip out = clip;
  out.height = height;
  out.width = width;
  auto crop = [&](const auto& src, std::size_t channels) {
    std::decay_t<decltype(src)> dst(clip.frame_count * height * width * channels);
    for (std::size_t t = 0; t < clip.frame_count; ++t)
      for (std::size_t y = 0; y < height; ++y) {
        const auto s = ((t * clip.height + top + y) * clip.width + left) * channels;
        const auto d = ((t * height + y) * width) * channels;
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(s), width * channels,
                    dst.begin() + static_cast<std::ptrdiff_t>(d));
      }
    return dst;
  };
  out.frames = crop(clip.frames, VideoClip::kColorChannels);
  out.flow = crop(clip.flow, VideoClip::kFlowChannels);
  if (clip.has_mask()) out.person_mask = crop(clip.person_mask, 1);
  return out;
}

VideoClip flip_clip(const VideoClip& clip) {
  VideoClip out = clip;
  const auto w = clip.width;
  auto mirror = [&](auto& dst, const auto& src, std::size_t channels) {
    const auto rows = clip.frame_count * clip.height;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < channels; ++c)
          dst[(r * w + x) * channels + c] = src[(r * w + (w - 1 - x)) * channels + c];
  };
  mirror(out.frames, clip.frames, VideoClip::kColorChannels);
  mirror(out.flow, clip.flow, VideoClip::kFlowChannels);
  for (std::size_t i = 0; i < out.flow.size(); i += 2) out.flow[i] = -out.flow[i];
  if (clip.has_mask()) mirror(out.person_mask, clip.person_mask, 1);
  return out;
}

std::vector<int> Dataset::identities() const {
  std::set<int> ids;
  for (const auto& c : clips) ids.insert(c.person_id);
  return {ids.begin(), ids.end()};
}

const VideoClip* Dataset::find(int person_id, int camera_id) const {
  const VideoClip* best = nullptr;
  for (const auto& c : clips) {
    if (c.person_id == person_id && c.camera_id == camera_id && (!best || c.clip_index < best->clip_index)) best = &c;
  }
  return best;
}

void save_dataset(const std::filesystem::path& root, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::map<std::pair<int, int>, std::vector<const VideoClip*>> groups;
  for (const auto& c : dataset.clips) {
    c.validate();
    if (c.height != dataset.height || c.width != dataset.width) {
      throw std::invalid_argument("save_dataset: clip extents differ from dataset extents");
    }
    groups[{c.person_id, c.camera_id}].push_back(&c);
  }
  ConfigMap top;
  top.set("format", "gcr-dataset-1");
  top.set("height", std::uint64_t{dataset.height});
  top.set("width", std::uint64_t{dataset.width});
  top.set("clips", std::uint64_t{dataset.clips.size()});
  top.set("groups", std::uint64_t{groups.size()});
  top.save(root / "dataset.txt");

  for (auto& [key, clips] : groups) {
    std::sort(clips.begin(), clips.end(), [](auto* a, auto* b) { return a->clip_index < b->clip_index; });
    const auto dir = root / person_dir(key.first) / camera_dir(key.second);
    fs::create_directories(dir);
    ConfigMap m;
    m.set("person", key.first);
    m.set("camera", key.second);
    m.set("height", std::uint64_t{dataset.height});
    m.set("width", std::uint64_t{dataset.width});
    m.set("clips", std::uint64_t{clips.size()});
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const auto& c = *clips[i];
      const auto prefix = "clip_" + std::to_string(i);
      m.set(prefix + ".index", c.clip_index);
      m.set(prefix + ".frames", std::uint64_t{c.frame_count});
      m.set(prefix + ".mask", c.has_mask());
      io::write_le<float>(dir / (prefix + ".frames.f32"), c.frames);
      io::write_le<float>(dir / (prefix + ".flow.f32"), c.flow);
      if (c.has_mask()) io::write_le<std::uint8_t>(dir / (prefix + ".mask.u8"), c.person_mask);
    }
    m.save(dir / "manifest.txt");
  }
}

Dataset load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const auto top = ConfigMap::load(root / "dataset.txt");
  if (top.get_or("format", "") != "gcr-dataset-1") throw std::runtime_error(root.string() + " is not a gcr dataset");
  Dataset ds;
  ds.height = top.get_uint("height");
  ds.width = top.get_uint("width");

  std::vector<fs::path> dirs;
  for (const auto& person : fs::directory_iterator(root)) {
    if (!person.is_directory()) continue;
    for (const auto& cam : fs::directory_iterator(person.path()))
      if (cam.is_directory() && fs::exists(cam.path() / "manifest.txt")) dirs.push_back(cam.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    const auto m = ConfigMap::load(dir / "manifest.txt");
    const auto count = m.get_uint("clips");
    for (std::size_t i = 0; i < count; ++i) {
      const auto prefix = "clip_" + std::to_string(i);
      VideoClip c;
      c.person_id = static_cast<int>(m.get_int("person"));
      c.camera_id = static_cast<int>(m.get_int("camera"));
      c.clip_index = static_cast<int>(m.get_int(prefix + ".index"));
      c.height = m.get_uint("height");
      c.width = m.get_uint("width");
      c.frame_count = m.get_uint(prefix + ".frames");
      const auto n = c.frame_count * c.pixels();
      c.frames = io::read_le<float>(dir / (prefix + ".frames.f32"), n * VideoClip::kColorChannels);
      c.flow = io::read_le<float>(dir / (prefix + ".flow.f32"), n * VideoClip::kFlowChannels);
      if (m.get_bool(prefix + ".mask")) c.person_mask = io::read_le<std::uint8_t>(dir / (prefix + ".mask.u8"), n);
      ds.clips.push_back(std::move(c));
    }
  }
  if (ds.clips.size() != top.get_uint("clips")) {
    throw std::runtime_error("load_dataset: expected " + top.get("clips") + " clips, found " +
                             std::to_string(ds.clips.size()));
  }
  std::sort(ds.clips.begin(), ds.clips.end(), [](const VideoClip& a, const VideoClip& b) {
    return std::tie(a.person_id, a.camera_id, a.clip_index) < std::tie(b.person_id, b.camera_id, b.clip_index);
  });
  return ds;
}

}  // namespace gcr
