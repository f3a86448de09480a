#include "gcr/commands.hpp"

#include "gcr/checkpoint.hpp"
#include "gcr/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace gcr {
namespace {

constexpr std::size_t kSummaryRanks[] = {1, 5, 10, 20};

void echo_config(const RunConfig& config, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  config.to_map().save(path);
}

bool same_training_setup(const TrainConfig& a, const TrainConfig& b) {
  auto ma = a.to_map(), mb = b.to_map();
  for (auto* m : {&ma, &mb}) {
    m->set("epochs", std::uint64_t{0});
    m->set("threads", std::uint64_t{0});
  }
  return ma.entries() == mb.entries();
}

template <typename T>
void train_run(const RunConfig& config, const Dataset& train_set, const TrainConfig& tc,
               const std::filesystem::path& dir, bool resume, std::ostream& out) {
  TrainState<T> state;
  if (resume && std::filesystem::exists(dir / "manifest.txt")) {
    state = load_train_state<T>(dir);
    if (state.model.net.to_map().entries() != config.network.to_map().entries() ||
        !same_training_setup(state.config, tc)) {
      throw std::invalid_argument("resume: configuration differs from the checkpoint in " + dir.string());
    }
    if (state.model.class_ids != train_set.identities()) {
      throw std::invalid_argument("resume: training identities differ from the checkpoint in " + dir.string());
    }
    state.config.epochs = tc.epochs;
    state.config.threads = tc.threads;
    out << "resuming " << dir.string() << " at epoch " << state.epochs_done << "\n";
  } else {
    state = init_training<T>(train_set, config.network, tc);
  }
  run_training<T>(state, train_set, [&](const TrainState<T>& s) {
    save_train_state(dir, s);
    const auto& r = s.log.back();
    char line[160];
    std::snprintf(line, sizeof(line), "epoch %zu/%zu  total %.4f  ver %.4f  mean_gate %.4f  batch_acc %.3f\n",
                  s.epochs_done, s.config.epochs, r.total, r.ver, r.mean_gate, r.id_accuracy);
    out << line << std::flush;
    return true;
  });
  save_train_state(dir, state);
}

template <typename T>
CMCCurve eval_run(const RunConfig& config, const Dataset& all, const std::filesystem::path& dir) {
  const auto state = load_train_state<T>(dir);
  const auto test = held_out(all, state.model.class_ids);
  if (test.clips.empty()) throw std::runtime_error("eval: no held-out identities for " + dir.string());
  return compute_cmc(test, state.model, config.eval);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

template <typename T>
GateImageSummary visualize(const RunConfig& config, const VisualizeRequest& req, const Dataset& data,
                           std::ostream& out) {
  Model<T> model;
  if (req.checkpoint) {
    model = load_train_state<T>(*req.checkpoint).model;
  } else {
    model.net = config.network;
    model.params = init_params<T>(config.network, config.train.rng_seed, false);
    if (req.zero_params)
      for (auto& [name, t] : model.params.named()) std::fill(t.mutable_data().begin(), t.mutable_data().end(), T(0));
    model.stats = compute_channel_stats(data);
  }
  const auto* clip = data.find(req.person, req.camera);
  if (!clip) {
    throw std::invalid_argument("visualize-gates: no clip for person " + std::to_string(req.person) + ", camera " +
                                std::to_string(req.camera));
  }
  const auto h = model.net.frame_height, w = model.net.frame_width;
  if (clip->height < h || clip->width < w) throw std::invalid_argument("visualize-gates: clip smaller than network input");
  auto c = slice_clip(*clip, 0, std::min(req.max_frames, clip->frame_count));
  c = crop_clip(c, (clip->height - h) / 2, (clip->width - w) / 2, h, w);
  const auto gates = collect_gates(c, model);
  auto summary = write_gate_images(req.out_dir, c, gates, model.net);
  out << "wrote " << summary.frames << " frames of " << summary.gate_height << "x" << summary.gate_width
      << " gate images to " << req.out_dir.string() << "\n";
  if (summary.mean_overlap) {
    char line[128];
    std::snprintf(line, sizeof(line), "gate/person overlap %.4f (uniform gate: %.4f)\n", *summary.mean_overlap,
                  *summary.person_fraction);
    out << line;
  }
  return summary;
}

}  // namespace

std::filesystem::path run_directory(const std::filesystem::path& root, std::size_t repeats, std::size_t repeat) {
  if (repeats <= 1) return root;
  char name[32];
  std::snprintf(name, sizeof(name), "split_%02zu", repeat);
  return root / name;
}

std::pair<Dataset, Dataset> split_for_repeat(const Dataset& all, const RunConfig& config, std::size_t repeat) {
  return train_test_split(all, config.split_fraction, config.split_seed + repeat);
}

Dataset held_out(const Dataset& all, const std::vector<int>& train_ids) {
  Dataset out;
  out.height = all.height;
  out.width = all.width;
  for (const auto& c : all.clips)
    if (!std::binary_search(train_ids.begin(), train_ids.end(), c.person_id)) out.clips.push_back(c);
  return out;
}

void cmd_generate(const RunConfig& config, std::ostream& out) {
  config.generator.validate();
  const auto data = generate_dataset(config.generator);
  save_dataset(config.data_dir, data);
  echo_config(config, config.data_dir / "resolved_config.txt");
  out << "generated " << data.clips.size() << " clips of " << data.identities().size() << " identities into "
      << config.data_dir.string() << "\n";
}

void cmd_train(const RunConfig& config, bool resume, std::ostream& out) {
  config.validate();
  const auto all = load_dataset(config.data_dir);
  for (std::size_t r = 0; r < config.repeats; ++r) {
    const auto dir = run_directory(config.output_dir, config.repeats, r);
    std::filesystem::create_directories(dir);
    echo_config(config, dir / "resolved_config.txt");
    auto [train_set, test_set] = split_for_repeat(all, config, r);
    auto tc = config.train;
    tc.rng_seed = config.train.rng_seed + r;
    out << "training " << dir.string() << ": " << train_set.identities().size() << " train / "
        << test_set.identities().size() << " test identities\n";
    if (config.precision == Precision::float32) {
      train_run<float>(config, train_set, tc, dir, resume, out);
    } else {
      train_run<double>(config, train_set, tc, dir, resume, out);
    }
  }
}

CMCCurve cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint_root, std::ostream& out) {
  config.validate();
  const auto all = load_dataset(config.data_dir);
  std::vector<CMCCurve> curves;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    const auto dir = run_directory(checkpoint_root, config.repeats, r);
    if (!std::filesystem::exists(dir / "manifest.txt")) throw std::runtime_error("eval: no checkpoint in " + dir.string());
    const auto curve = checkpoint_precision(dir) == "float32" ? eval_run<float>(config, all, dir)
                                                              : eval_run<double>(config, all, dir);
    write_text(dir / "cmc.tsv", format_cmc_table(curve));
    curves.push_back(curve);
  }
  const auto mean = average_curves(curves);
  if (config.repeats > 1) write_text(checkpoint_root / "cmc_mean.tsv", format_cmc_table(mean));
  echo_config(config, checkpoint_root / "eval_config.txt");
  std::vector<std::size_t> ranks;
  for (auto m : kSummaryRanks)
    if (m <= mean.ranks.size()) ranks.push_back(m);
  out << format_cmc_table(mean, ranks);
  return mean;
}

GateImageSummary cmd_visualize_gates(const RunConfig& config, const VisualizeRequest& request, std::ostream& out) {
  config.validate();
  const auto data = load_dataset(config.data_dir);
  std::filesystem::create_directories(request.out_dir);
  echo_config(config, request.out_dir / "resolved_config.txt");
  const bool f32 = request.checkpoint ? checkpoint_precision(*request.checkpoint) == "float32"
                                      : config.precision == Precision::float32;
  return f32 ? visualize<float>(config, request, data, out) : visualize<double>(config, request, data, out);
}

bool cmd_gradcheck(const GradCheckSuiteOptions& options, const std::string& inject_fault, std::ostream& out) {
  debug::set_corrupted_adjoint(inject_fault);
  GradCheckReport report;
  try {
    report = run_gradcheck_suite(options);
  } catch (...) {
    debug::set_corrupted_adjoint("");
    throw;
  }
  debug::set_corrupted_adjoint("");
  if (!inject_fault.empty()) out << "# corrupted adjoint: " << inject_fault << "\n";
  out << report.format();
  return report.passed();
}

}  // namespace gcr
