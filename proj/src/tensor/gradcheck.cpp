#include "uda/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uda/tensor/random.hpp"

namespace uda {

template <typename T>
FiniteDiffReport finite_diff_report(const std::function<Tensor<T>()>& loss_fn, std::span<const Tensor<T>> params,
                                    const FiniteDiffOptions& options) {
  for (auto p : params) p.clear_grad();
  using Mode = detail::BranchTrace::Mode;
  const bool tracing = options.kinks != KinkPolicy::ignore;
  std::vector<std::vector<std::uint8_t>> center_sides;
  Tensor<T> loss;
  {
    BranchScope scope(tracing ? Mode::record : Mode::off);
    loss = loss_fn();
    center_sides = scope.take_sides();
  }
  backward(loss);
  const double floor = std::max(options.resolvable_gradient,
                                options.noise_floor_multiple * std::numeric_limits<T>::epsilon() *
                                    std::abs(static_cast<double>(loss.item())) / (2.0 * options.epsilon));

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad_or_zero());
  for (auto p : params) p.clear_grad();

  Rng rng(options.seed);
  FiniteDiffReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> p = params[k];
    const std::size_t n = p.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > options.samples_per_tensor) {
      rng.shuffle(coords);
      coords.resize(options.samples_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      auto data = p.mutable_data();
      const T original = data[i];
      const T plus = static_cast<T>(original + options.epsilon);
      const T minus = static_cast<T>(original - options.epsilon);
      bool crosses_kink = false;
      auto evaluate = [&](T value) {
        BranchScope scope(tracing ? Mode::replay : Mode::off, center_sides);
        data[i] = value;
        const double l = loss_fn().item();
        crosses_kink |= scope.crossed();
        return l;
      };
      const double loss_plus = evaluate(plus);
      const double loss_minus = evaluate(minus);
      data[i] = original;
      ++report.coordinates_sampled;
      if (crosses_kink) {
        ++report.coordinates_at_kinks;
        if (options.kinks == KinkPolicy::skip) continue;
      }
      // Divide by the step actually representable in T.
      const double step = static_cast<double>(plus) - static_cast<double>(minus);
      const double numeric = (loss_plus - loss_minus) / step;
      const double a = analytic[k][i];
      const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (std::max(std::abs(a), std::abs(numeric)) < floor && !(a == 0.0 && numeric == 0.0)) {
        ++report.coordinates_skipped;
        continue;
      }
      ++report.coordinates_checked;
      const double err = std::abs(a - numeric) / scale;
      if (err > report.max_relative_error || report.coordinates_checked == 1) {
        report.max_relative_error = err;
        report.worst = {k, i, a, numeric};
      }
    }
  }
  return report;
}

template FiniteDiffReport finite_diff_report(const std::function<Tensor<float>()>&, std::span<const Tensor<float>>,
                                             const FiniteDiffOptions&);
template FiniteDiffReport finite_diff_report(const std::function<Tensor<double>()>&, std::span<const Tensor<double>>,
                                             const FiniteDiffOptions&);

}  // namespace uda
