#include "uda/tensor/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace uda {

double LinearDecaySchedule::operator()(std::size_t step) const {
  if (step <= fixed_steps) return base_lr;
  if (decay_steps == 0) return 0.0;
  const double progress = static_cast<double>(step - fixed_steps) / static_cast<double>(decay_steps);
  return progress >= 1.0 ? 0.0 : base_lr * (1.0 - progress);
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, double learning_rate, AdamConfig config)
    : params_(std::move(params)), lr_(learning_rate), config_(config) {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::set_learning_rate(double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  lr_ = lr;
}

template <typename T>
void Adam<T>::step() {
  bool any = false;
  for (const auto& p : params_) any = any || p.has_grad();
  if (!any) throw std::logic_error("optimizer step before backward: no parameter has a gradient");

  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto data = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has ? static_cast<double>(p.grad()[i]) : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      data[i] = static_cast<T>(data[i] - update);
    }
    p.clear_grad();
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.clear_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace uda
