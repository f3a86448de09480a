#include "gcr/visualize.hpp"

#include "gcr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gcr {

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) throw std::invalid_argument("write_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  int maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255) throw std::runtime_error(path.string() + " is not an 8-bit binary PGM");
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated pixel data");
  return img;
}

std::vector<std::uint8_t> to_gray(std::span<const double> values, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("to_gray: empty value range");
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::round(255.0 * (values[i] - lo) / (hi - lo));
    out[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

template <typename T>
std::vector<FrameGateValues> collect_gates(const VideoClip& clip, const Model<T>& model) {
  if (clip.height != model.net.frame_height || clip.width != model.net.frame_width) {
    throw std::invalid_argument("collect_gates: clip extents differ from the network input");
  }
  const auto in = clip_to_tensors<T>(clip, model.stats);
  Tape<T> tape(false);
  const auto out = sequence_forward<T>(tape, in.frames, in.flows, model.params, model.net);
  auto values = [](const Tensor<T>& t) {
    return t.defined() ? std::vector<double>(t.data().begin(), t.data().end()) : std::vector<double>{};
  };
  std::vector<FrameGateValues> result;
  for (std::size_t t = 0; t < clip.frame_count; ++t) {
    FrameGateValues f;
    const auto frame = clip.frame(t);
    f.luminance.resize(clip.pixels());
    for (std::size_t p = 0; p < clip.pixels(); ++p)
      f.luminance[p] = 0.299 * frame[p * 3] + 0.587 * frame[p * 3 + 1] + 0.114 * frame[p * 3 + 2];
    const auto& g = out.gates[t];
    f.color = values(g.color);
    f.flow = values(g.flow);
    f.fused = values(g.fused);
    result.push_back(std::move(f));
  }
  return result;
}

GateImageSummary write_gate_images(const std::filesystem::path& dir, const VideoClip& clip,
                                   std::span<const FrameGateValues> gates, const NetworkConfig& config) {
  std::filesystem::create_directories(dir);
  GateImageSummary summary;
  summary.frames = gates.size();
  summary.gate_height = config.gate_height();
  summary.gate_width = config.gate_width();
  const double fused_hi = config.gate_mode == GateMode::fused && config.fusion == FusionMode::f1 ? 2.0 : 1.0;

  std::vector<std::vector<std::uint8_t>> truth;
  if (clip.has_mask()) truth = ground_truth_gate(clip);
  double overlap = 0, fraction = 0;
  std::size_t scored = 0;

  for (std::size_t t = 0; t < gates.size(); ++t) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "frame_%03zu_", t);
    const auto& g = gates[t];
    write_pgm(dir / (std::string(stem) + "input.pgm"), clip.width, clip.height, to_gray(g.luminance, 0, 1));
    auto gate_image = [&](const char* name, const std::vector<double>& v, double hi) {
      if (v.empty()) return;
      write_pgm(dir / (std::string(stem) + name + ".pgm"), summary.gate_width, summary.gate_height, to_gray(v, 0, hi));
    };
    gate_image("color", g.color, 1.0);
    gate_image("flow", g.flow, 1.0);
    gate_image("fused", g.fused, fused_hi);
    if (!truth.empty() && !g.fused.empty()) {
      overlap += gate_overlap(g.fused, truth[t]);
      fraction += static_cast<double>(std::count(truth[t].begin(), truth[t].end(), 1)) /
                  static_cast<double>(truth[t].size());
      ++scored;
    }
  }
  if (scored > 0) {
    summary.mean_overlap = overlap / static_cast<double>(scored);
    summary.person_fraction = fraction / static_cast<double>(scored);
  }

  std::ofstream ranges(dir / "gate_ranges.txt");
  ranges << "# image\tvalue_low\tvalue_high\tpixel_low\tpixel_high\n"
         << "input\t0\t1\t0\t255\n"
         << "color\t0\t1\t0\t255\n"
         << "flow\t0\t1\t0\t255\n"
         << "fused\t0\t" << fused_hi << "\t0\t255\n"
         << "# pixel = round(255 * (value - value_low) / (value_high - value_low)), clamped\n";
  return summary;
}

template std::vector<FrameGateValues> collect_gates<float>(const VideoClip&, const Model<float>&);
template std::vector<FrameGateValues> collect_gates<double>(const VideoClip&, const Model<double>&);

}  // namespace gcr
