#pragma once

#include <map>
#include <string>
#include <vector>

#include "cbert/autograd.hpp"
#include "cbert/errors.hpp"

namespace cbert {

// Named learnable tensors, iterated in lexicographic name order.
template <typename T>
class ParameterStore {
 public:
  Var<T>& add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = params_.emplace(name, Var<T>::parameter(std::move(value)));
    if (!inserted) throw ConfigError("duplicate parameter " + name);
    return it->second;
  }

  const Var<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw IndexError("unknown parameter " + name);
    return it->second;
  }
  Var<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw IndexError("unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.contains(name); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t tensor_count() const { return params_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, v] : params_) out.push_back(name);
    return out;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : params_) v.zero_grad();
  }

  // Independent copy of the current values (no gradients).
  ParameterStore clone() const {
    ParameterStore out;
    for (const auto& [name, v] : params_) out.add(name, v.value());
    return out;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, v] : params_) out.add(name, v.value().template cast<U>());
    return out;
  }

  // Overwrites values of every tensor present in both stores. Shapes must
  // agree. Returns the number of tensors copied.
  std::size_t copy_matching(const ParameterStore& other) {
    std::size_t copied = 0;
    for (auto& [name, v] : params_) {
      auto it = other.params_.find(name);
      if (it == other.params_.end()) continue;
      if (it->second.shape() != v.shape()) {
        throw ShapeError("parameter " + name + " has shape " +
                         shape_string(v.shape()) + " but source has " +
                         shape_string(it->second.shape()));
      }
      v.mutable_value() = it->second.value();
      ++copied;
    }
    return copied;
  }

 private:
  std::map<std::string, Var<T>> params_;
};

}  // namespace cbert
