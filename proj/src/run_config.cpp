#include "gcr/run_config.hpp"

#include <cstdlib>
#include <set>
#include <stdexcept>

namespace gcr {
namespace {

ConfigMap prefixed(const ConfigMap& m, const std::string& prefix) {
  ConfigMap out;
  for (const auto& [k, v] : m.entries()) out.set(prefix + k, v);
  return out;
}

ConfigMap section(const ConfigMap& m, const std::string& prefix) {
  ConfigMap out;
  for (const auto& [k, v] : m.entries())
    if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), v);
  return out;
}

}  // namespace

ConfigMap RunConfig::to_map() const {
  ConfigMap m;
  m.set("data_dir", data_dir.string());
  m.set("output_dir", output_dir.string());
  m.set("precision", precision == Precision::float32 ? "float32" : "float64");
  m.set("repeats", std::uint64_t{repeats});
  m.set("split.fraction", split_fraction);
  m.set("split.seed", split_seed);
  m.merge(prefixed(generator.to_map(), "gen."));
  auto net = network.to_map();
  ConfigMap net_visible;
  for (const auto& [k, v] : net.entries())
    if (k != "frame_height" && k != "frame_width") net_visible.set(k, v);
  m.merge(prefixed(net_visible, "net."));
  m.merge(prefixed(train.to_map(), "train."));
  m.set("eval.max_frames", std::uint64_t{eval.max_frames});
  m.set("eval.threads", std::uint64_t{eval.threads});
  return m;
}

void RunConfig::apply(const ConfigMap& map) {
  const auto known = RunConfig{}.to_map();
  for (const auto& [k, v] : map.entries()) {
    if (!known.contains(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
  }
  if (map.contains("data_dir")) data_dir = map.get("data_dir");
  if (map.contains("output_dir")) output_dir = map.get("output_dir");
  if (map.contains("precision")) {
    const auto& p = map.get("precision");
    if (p == "float32") precision = Precision::float32;
    else if (p == "float64") precision = Precision::float64;
    else throw std::invalid_argument("config: precision must be float32 or float64, got '" + p + "'");
  }
  if (map.contains("repeats")) repeats = map.get_uint("repeats");
  if (map.contains("split.fraction")) split_fraction = map.get_double("split.fraction");
  if (map.contains("split.seed")) split_seed = map.get_uint("split.seed");
  generator.apply(section(map, "gen."));
  network.apply(section(map, "net."));
  train.apply(section(map, "train."));
  if (map.contains("eval.max_frames")) eval.max_frames = map.get_uint("eval.max_frames");
  if (map.contains("eval.threads")) eval.threads = map.get_uint("eval.threads");
  network.frame_height = train.crop_height;
  network.frame_width = train.crop_width;
}

void RunConfig::validate() const {
  generator.validate();
  train.validate();
  train.validate_against(generator.height, generator.width);
  network.validate();
  if (network.frame_height != train.crop_height || network.frame_width != train.crop_width) {
    throw std::invalid_argument("config: network input must equal the training crop");
  }
  if (repeats == 0) throw std::invalid_argument("config: repeats must be positive");
  if (!(split_fraction > 0 && split_fraction < 1)) throw std::invalid_argument("config: split.fraction must lie in (0, 1)");
  if (eval.max_frames == 0) throw std::invalid_argument("config: eval.max_frames must be positive");
  if (eval.threads == 0) throw std::invalid_argument("config: eval.threads must be positive");
  if (data_dir.empty()) throw std::invalid_argument("config: data_dir is empty");
  if (output_dir.empty()) throw std::invalid_argument("config: output_dir is empty");
}

std::pair<std::string, std::string> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + text + "' is not of the form key=value");
  }
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

RunConfig resolve_run_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides) {
  ConfigMap layered;
  if (file) layered.merge(ConfigMap::load(*file));
  if (const char* out = std::getenv("GCR_OUTPUT_DIR"); out && *out) layered.set("output_dir", out);
  if (const char* threads = std::getenv("GCR_THREADS"); threads && *threads) {
    layered.set("train.threads", threads);
    layered.set("eval.threads", threads);
  }
  for (const auto& o : overrides) {
    auto [k, v] = parse_override(o);
    layered.set(k, v);
  }
  RunConfig config;
  config.apply(layered);
  config.validate();
  return config;
}

}  // namespace gcr
