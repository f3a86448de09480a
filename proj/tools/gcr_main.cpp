// gcr: generate the synthetic benchmark, train, evaluate, inspect gates and
// verify gradients.

#include "gcr/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kValidationError = 1;
constexpr int kRuntimeError = 2;

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("-c,--config", common.config_file, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", common.overrides, "override one configuration key (key=value), repeatable");
}

gcr::RunConfig resolve(const CommonOptions& common, std::vector<std::string> extra) {
  auto overrides = common.overrides;
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  std::optional<std::filesystem::path> file;
  if (!common.config_file.empty()) file = common.config_file;
  return gcr::resolve_run_config(file, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated convolutional-recurrent network for video person re-identification"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* generate = app.add_subcommand("generate", "write the synthetic two-camera benchmark to data_dir");
  add_common(generate, common);

  auto* train = app.add_subcommand("train", "train a model per split and write checkpoints to output_dir");
  add_common(train, common);
  std::string gate_mode, fusion;
  bool no_prev_state = false, no_regularizer = false, resume = false;
  std::size_t train_repeats = 0;
  train->add_option("--gate-mode", gate_mode, "fused | color_only | flow_only | concat_single | none");
  train->add_option("--fusion", fusion, "f1 | f2 | f3 | f4 (default f4)");
  train->add_flag("--no-prev-state", no_prev_state, "drop the previous-state input of the gates");
  train->add_flag("--no-regularizer", no_regularizer, "disable the gate regularizer");
  train->add_option("--repeats", train_repeats, "number of random train/test splits");
  train->add_flag("--resume", resume, "continue from the checkpoint in the run directory");

  auto* eval = app.add_subcommand("eval", "CMC evaluation of trained checkpoints on held-out identities");
  add_common(eval, common);
  std::string checkpoint;
  std::size_t eval_repeats = 0;
  eval->add_option("--checkpoint", checkpoint, "checkpoint root (default: output_dir)");
  eval->add_option("--repeats", eval_repeats, "average over split_XX run directories");

  auto* visualize = app.add_subcommand("visualize-gates", "write per-frame gate images for one clip");
  add_common(visualize, common);
  std::string vis_checkpoint, vis_out;
  int person = 0, camera = 0;
  std::size_t vis_frames = 16;
  bool zero_params = false;
  visualize->add_option("--checkpoint", vis_checkpoint, "checkpoint directory (default: untrained network)");
  visualize->add_option("--person", person, "person id")->required();
  visualize->add_option("--camera", camera, "camera id (0 or 1)");
  visualize->add_option("--frames", vis_frames, "maximum number of frames");
  visualize->add_option("--out", vis_out, "image directory (default: output_dir/gates)");
  visualize->add_flag("--zero-params", zero_params, "untrained network with all parameters zero");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every operator and the network");
  std::string inject_fault;
  bool all_fusions = false, skip_network = false;
  std::uint64_t gc_seed = 0;
  gradcheck->add_option("--inject-fault", inject_fault, "corrupt the adjoint of the named operator");
  gradcheck->add_flag("--all-fusions", all_fusions, "check the network under f1, f2, f3 and f4");
  gradcheck->add_flag("--operators-only", skip_network, "skip the end-to-end network check");
  gradcheck->add_option("--seed", gc_seed, "seed of the random inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kValidationError;
  }

  gcr::RunConfig config;
  try {
    std::vector<std::string> extra;
    if (!gate_mode.empty()) extra.push_back("net.gate_mode=" + gate_mode);
    if (!fusion.empty()) extra.push_back("net.fusion=" + fusion);
    if (no_prev_state) extra.push_back("net.use_prev_state=false");
    if (no_regularizer) extra.push_back("train.gate_regularizer=false");
    if (train_repeats > 0) extra.push_back("repeats=" + std::to_string(train_repeats));
    if (eval_repeats > 0) extra.push_back("repeats=" + std::to_string(eval_repeats));
    if (!gradcheck->parsed()) config = resolve(common, extra);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationError;
  }

  try {
    if (generate->parsed()) {
      gcr::cmd_generate(config, std::cout);
    } else if (train->parsed()) {
      gcr::cmd_train(config, resume, std::cout);
    } else if (eval->parsed()) {
      gcr::cmd_eval(config, checkpoint.empty() ? config.output_dir : std::filesystem::path(checkpoint), std::cout);
    } else if (visualize->parsed()) {
      gcr::VisualizeRequest req;
      if (!vis_checkpoint.empty()) req.checkpoint = vis_checkpoint;
      req.zero_params = zero_params;
      req.person = person;
      req.camera = camera;
      req.max_frames = vis_frames;
      req.out_dir = vis_out.empty() ? config.output_dir / "gates" : std::filesystem::path(vis_out);
      gcr::cmd_visualize_gates(config, req, std::cout);
    } else if (gradcheck->parsed()) {
      gcr::GradCheckSuiteOptions options;
      options.seed = gc_seed;
      options.end_to_end = !skip_network;
      if (all_fusions) options.fusions = {gcr::FusionMode::f1, gcr::FusionMode::f2, gcr::FusionMode::f3, gcr::FusionMode::f4};
      if (!gcr::cmd_gradcheck(options, inject_fault, std::cout)) {
        std::cerr << "gradient check failed\n";
        return kRuntimeError;
      }
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
