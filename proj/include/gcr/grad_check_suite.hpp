#pragma once

#include "gcr/grad_check.hpp"
#include "gcr/network.hpp"

#include <string>
#include <vector>

namespace gcr {

/// 16x8 frames with channel counts halved from the defaults.
NetworkConfig tiny_network_config();

struct GradCheckSuiteOptions {
  double tolerance = 1e-4;
  GradCheckOptions finite_difference;
  std::uint64_t seed = 0;
  bool operator_checks = true;
  bool end_to_end = true;
  NetworkConfig network = tiny_network_config();
  std::size_t frames = 2;
  // Fusion modes for the end-to-end check. f4 is compared against the
  // objective with every gate product held constant.
  std::vector<FusionMode> fusions{FusionMode::f4};
};

struct GradCheckReportEntry {
  std::string check;  // operator name, or "network/<fusion>/<parameter>"
  double max_relative_error = 0;
  double max_abs_error = 0;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct GradCheckReport {
  double tolerance = 0;
  std::vector<GradCheckReportEntry> entries;

  bool passed() const;
  double worst_relative_error() const;
  /// One row per entry: check, worst relative error, coordinates, PASS/FAIL.
  std::string format() const;
};

/// Objective of two training pairs (one positive, one negative with the hinge
/// active) over random clips of `frames` frames, differentiated with respect
/// to every network parameter and the classifier weight.
GradCheckResult end_to_end_grad_check(const NetworkConfig& config, std::size_t frames, std::uint64_t seed,
                                      const GradCheckOptions& options = {});

GradCheckReport run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

}  // namespace gcr
