#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "uda/tensor/tensor.hpp"

namespace uda {

enum class KinkPolicy { freeze, skip, ignore };

struct FiniteDiffOptions {
  double epsilon = 1e-3;
  // Coordinates sampled per tensor; tensors at or below this size are
  // checked exhaustively.
  std::size_t samples_per_tensor = 24;
  std::uint64_t seed = 0;
  // Coordinates where both |analytic| and |numeric| fall below this are
  // skipped. Zero checks every sampled coordinate.
  double resolvable_gradient = 0.0;
  // Adds a precision-dependent floor: coordinates whose gradient is below
  // noise_floor_multiple * machine_epsilon(T) * |loss| / (2 * epsilon) are
  // skipped, since rounding of the loss itself dominates there. Zero
  // disables.
  double noise_floor_multiple = 0.0;
  // What to do when a +-epsilon evaluation would take a different branch of
  // a piecewise op (relu, leaky_relu, clamp, l1_loss) than the unperturbed
  // loss. Central differences are not valid across a kink.
  //   freeze: replay the unperturbed branch choices, so the difference is
  //           taken on the same linear piece the analytic gradient uses
  //   skip:   leave the coordinate out
  //   ignore: evaluate naively
  KinkPolicy kinks = KinkPolicy::freeze;
};

struct FiniteDiffReport {
  struct Coordinate {
    std::size_t tensor = 0;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
  };
  double max_relative_error = 0.0;
  Coordinate worst;  // coordinate attaining max_relative_error
  std::size_t coordinates_sampled = 0;
  std::size_t coordinates_checked = 0;
  std::size_t coordinates_skipped = 0;    // below the noise floor
  // Perturbation crossed a kink. Under KinkPolicy::skip these are not
  // checked; under freeze they are.
  std::size_t coordinates_at_kinks = 0;
};

// Central-difference gradient check. `loss_fn` must rebuild the graph from
// the current parameter values on each call. Relative error per coordinate
// is |analytic - numeric| / max(|analytic|, |numeric|, 1e-6); the report
// carries the maximum. Parameter values are restored afterwards.
template <typename T>
FiniteDiffReport finite_diff_report(const std::function<Tensor<T>()>& loss_fn, std::span<const Tensor<T>> params,
                                    const FiniteDiffOptions& options = {});

template <typename T>
double finite_diff_check(const std::function<Tensor<T>()>& loss_fn, std::span<const Tensor<T>> params,
                         const FiniteDiffOptions& options = {}) {
  return finite_diff_report<T>(loss_fn, params, options).max_relative_error;
}

}  // namespace uda
