#include "gcr/checkpoint.hpp"

#include "gcr/binary_io.hpp"

#include <sstream>
#include <stdexcept>

namespace gcr {
namespace {

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

std::string join_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoull(part));
  if (shape.empty()) throw std::runtime_error("checkpoint: empty shape '" + text + "'");
  return shape;
}

std::string file_name(const std::string& array) { return array + ".bin"; }

}  // namespace

template <typename T>
const Tensor<T>& CheckpointContents<T>::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a.tensor;
  throw std::runtime_error("checkpoint: no array named '" + name + "'");
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const CheckpointContents<T>& contents) {
  std::filesystem::create_directories(dir);
  ConfigMap manifest;
  manifest.set("format", "gcr-checkpoint-1");
  manifest.set("precision", precision_name<T>());
  manifest.set("byte_order", "little_endian");
  std::string names;
  for (const auto& a : contents.arrays) {
    if (a.name.empty() || a.name.find_first_of(",/ =") != std::string::npos) {
      throw std::invalid_argument("checkpoint: invalid array name '" + a.name + "'");
    }
    names += (names.empty() ? "" : ",") + a.name;
    manifest.set("array." + a.name, join_shape(a.tensor.shape()) + " " + file_name(a.name));
    io::write_le<T>(dir / file_name(a.name), a.tensor.data());
  }
  manifest.set("arrays", names);
  for (const auto& [k, v] : contents.fields.entries()) manifest.set("field." + k, v);
  manifest.save(dir / "manifest.txt");
}

std::string checkpoint_precision(const std::filesystem::path& dir) {
  const auto manifest = ConfigMap::load(dir / "manifest.txt");
  if (manifest.get_or("format", "") != "gcr-checkpoint-1") {
    throw std::runtime_error("checkpoint: " + dir.string() + " is not a gcr checkpoint");
  }
  return manifest.get("precision");
}

template <typename T>
CheckpointContents<T> load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = ConfigMap::load(dir / "manifest.txt");
  if (manifest.get_or("format", "") != "gcr-checkpoint-1") {
    throw std::runtime_error("checkpoint: " + dir.string() + " is not a gcr checkpoint");
  }
  if (manifest.get("precision") != precision_name<T>()) {
    throw std::runtime_error("checkpoint: stored precision " + manifest.get("precision") + ", requested " +
                             precision_name<T>());
  }
  if (manifest.get("byte_order") != "little_endian") throw std::runtime_error("checkpoint: unsupported byte order");
  CheckpointContents<T> contents;
  for (const auto& [k, v] : manifest.entries()) {
    if (k.rfind("field.", 0) == 0) contents.fields.set(k.substr(6), v);
  }
  std::stringstream names(manifest.get("arrays"));
  std::string name;
  while (std::getline(names, name, ',')) {
    if (name.empty()) continue;
    std::stringstream entry(manifest.get("array." + name));
    std::string shape_text, file;
    entry >> shape_text >> file;
    auto shape = parse_shape(shape_text);
    auto values = io::read_le<T>(dir / file, shape_numel(shape));
    contents.arrays.push_back({name, Tensor<T>::from(std::move(shape), std::move(values))});
  }
  return contents;
}

template struct CheckpointContents<float>;
template struct CheckpointContents<double>;
template void save_checkpoint<float>(const std::filesystem::path&, const CheckpointContents<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const CheckpointContents<double>&);
template CheckpointContents<float> load_checkpoint<float>(const std::filesystem::path&);
template CheckpointContents<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace gcr
