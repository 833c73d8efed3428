#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "uda/tensor/tensor.hpp"

namespace uda {

// Constant learning rate for `fixed_steps`, then linear decay reaching zero
// after a further `decay_steps`. Steps may be epochs or iterations.
struct LinearDecaySchedule {
  double base_lr = 0.0002;
  std::size_t fixed_steps = 100;
  std::size_t decay_steps = 100;

  double operator()(std::size_t step) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over a fixed list of parameter tensors. Moment buffers match the
// parameter shapes. step() consumes and clears the gradients; a parameter
// that backward did not reach is treated as having a zero gradient.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, double learning_rate, AdamConfig config = {});

  void set_learning_rate(double lr);
  double learning_rate() const noexcept { return lr_; }
  std::size_t step_count() const noexcept { return step_count_; }

  // Throws std::logic_error if no parameter carries a gradient.
  void step();
  void zero_grad();

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_;
  AdamConfig config_;
  std::size_t step_count_ = 0;
};

// Raised by training loops when the loss becomes non-finite. step() is the
// iteration or epoch index at which it happened.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace uda
