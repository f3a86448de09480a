#pragma once

#include "gcr/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace gcr {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Denominator floor of the relative error, so that near-zero gradients are
  // compared in absolute terms.
  double relative_floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded random subset per input.
  std::size_t max_coordinates_per_input = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckInput {
  std::string name;
  Tensor<double> tensor;  // leaf with requires_grad
};

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0;
  double max_abs_error = 0;
  std::size_t coordinates = 0;
};

struct GradCheckResult {
  double max_relative_error = 0;
  double max_abs_error = 0;
  std::vector<GradCheckEntry> per_input;
  // Analytic and numeric gradients of the checked coordinates, per input.
  std::vector<std::vector<double>> analytic;
  std::vector<std::vector<double>> numeric;
};

using ScalarFunction = std::function<Tensor<double>(Tape<double>&)>;

/// Compares tape adjoints of `f` against central differences
/// (f(x+eps) - f(x-eps)) / (2 eps), one coordinate at a time. `f` must read
/// the input tensors (it is re-run with their values perturbed in place).
/// Throws NumericError on non-finite loss or gradient values.
GradCheckResult grad_check(const ScalarFunction& f, std::vector<GradCheckInput> inputs,
                           const GradCheckOptions& options = {});

}  // namespace gcr
