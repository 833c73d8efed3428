#include "uda/tensor/parameters.hpp"

#include <stdexcept>

namespace uda {

template <typename T>
void ParameterSet<T>::add(std::string name, Tensor<T> tensor) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  items_.push_back({std::move(name), std::move(tensor)});
}

template <typename T>
void ParameterSet<T>::append(const ParameterSet& other, const std::string& prefix) {
  for (const auto& p : other.items_) add(prefix + p.name, p.tensor);
}

template <typename T>
std::vector<Tensor<T>> ParameterSet<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::size_t ParameterSet<T>::numel() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

template <typename T>
void ParameterSet<T>::clear_grad() {
  for (auto& p : items_) p.tensor.clear_grad();
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace uda
