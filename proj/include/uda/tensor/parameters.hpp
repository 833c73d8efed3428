#pragma once

#include <string>
#include <vector>

#include "uda/tensor/tensor.hpp"

namespace uda {

template <typename T>
struct Parameter {
  std::string name;  // dotted path, e.g. "decoder.conv1.weight"
  Tensor<T> tensor;
};

// Ordered, name-unique collection of a model's parameters.
template <typename T>
class ParameterSet {
 public:
  // Throws std::invalid_argument on duplicate names.
  void add(std::string name, Tensor<T> tensor);
  void append(const ParameterSet& other, const std::string& prefix = "");

  const std::vector<Parameter<T>>& items() const noexcept { return items_; }
  std::vector<Tensor<T>> tensors() const;
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t numel() const;
  const Parameter<T>* find(const std::string& name) const;

  void zero_grad();
  void clear_grad();

 private:
  std::vector<Parameter<T>> items_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace uda
