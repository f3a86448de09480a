#pragma once

#include "gcr/evaluation.hpp"
#include "gcr/grad_check_suite.hpp"
#include "gcr/run_config.hpp"
#include "gcr/visualize.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace gcr {

/// Run directory of split `repeat`: output_dir itself for a single run,
/// output_dir/split_XX when repeats > 1.
std::filesystem::path run_directory(const std::filesystem::path& root, std::size_t repeats, std::size_t repeat);

/// Train/test identity split of repeat `repeat` (seed split.seed + repeat).
std::pair<Dataset, Dataset> split_for_repeat(const Dataset& all, const RunConfig& config, std::size_t repeat);

/// Clips of identities absent from `train_ids`.
Dataset held_out(const Dataset& all, const std::vector<int>& train_ids);

/// Generates the synthetic benchmark into data_dir.
void cmd_generate(const RunConfig& config, std::ostream& out);

/// Trains one model per repeat and writes each run directory (checkpoint,
/// training_log.tsv, resolved_config.txt). The checkpoint is rewritten after
/// every epoch. With `resume`, an existing checkpoint is continued up to
/// train.epochs.
void cmd_train(const RunConfig& config, bool resume, std::ostream& out);

/// Evaluates the checkpoint(s) under `checkpoint_root` on their held-out
/// identities, writes cmc.tsv per run (and cmc_mean.tsv for repeats) and
/// returns the mean curve.
CMCCurve cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint_root, std::ostream& out);

struct VisualizeRequest {
  std::optional<std::filesystem::path> checkpoint;  // untrained network when absent
  bool zero_params = false;                          // with no checkpoint: all parameters zero
  int person = 0;
  int camera = 0;
  std::size_t max_frames = 16;
  std::filesystem::path out_dir;
};

/// Center crop of the chosen clip through the network; writes gate images.
GateImageSummary cmd_visualize_gates(const RunConfig& config, const VisualizeRequest& request, std::ostream& out);

/// Runs the gradient-check suite, optionally with a corrupted adjoint for the
/// named operator. Returns whether every check passed.
bool cmd_gradcheck(const GradCheckSuiteOptions& options, const std::string& inject_fault, std::ostream& out);

}  // namespace gcr
