#include "gcr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace gcr {
namespace {

double evaluate(const ScalarFunction& f) {
  Tape<double> tape(false);
  const double v = f(tape).item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, std::vector<GradCheckInput> inputs,
                           const GradCheckOptions& options) {
  for (auto& in : inputs) {
    if (!in.tensor.requires_grad()) throw std::invalid_argument("grad_check: input '" + in.name + "' is not a leaf with requires_grad");
    in.tensor.zero_grad();
  }
  {
    Tape<double> tape;
    auto loss = f(tape);
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss value");
    tape.backward(loss);
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.sample_seed);
  for (auto& in : inputs) {
    GradCheckEntry entry{in.name, 0, 0, 0};
    const auto n = in.tensor.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coordinates_per_input > 0 && n > options.max_coordinates_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coordinates_per_input);
      std::sort(coords.begin(), coords.end());
    }
    std::vector<double> analytic, numeric;
    auto values = in.tensor.mutable_data();
    for (auto i : coords) {
      const double a = in.tensor.grad()[i];
      if (!std::isfinite(a)) throw NumericError("grad_check: non-finite analytic gradient in '" + in.name + "'");
      const double saved = values[i];
      values[i] = saved + options.epsilon;
      const double up = evaluate(f);
      values[i] = saved - options.epsilon;
      const double down = evaluate(f);
      values[i] = saved;
      const double num = (up - down) / (2 * options.epsilon);
      const double abs_err = std::abs(a - num);
      const double rel = abs_err / std::max({std::abs(a), std::abs(num), options.relative_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_relative_error = std::max(entry.max_relative_error, rel);
      analytic.push_back(a);
      numeric.push_back(num);
    }
    entry.coordinates = coords.size();
    result.max_relative_error = std::max(result.max_relative_error, entry.max_relative_error);
    result.max_abs_error = std::max(result.max_abs_error, entry.max_abs_error);
    result.per_input.push_back(entry);
    result.analytic.push_back(std::move(analytic));
    result.numeric.push_back(std::move(numeric));
  }
  return result;
}

}  // namespace gcr
