#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hin/errors.hpp"
#include "hin/random.hpp"
#include "hin/tensor.hpp"

namespace hin {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;

  std::size_t size() const { return value.size(); }
};

// Named, ordered parameter collection. Elements have stable addresses for
// the lifetime of the set, so tapes may hold pointers to them.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(std::string name, Shape shape, bool frozen = false) {
    if (index_.count(name)) {
      throw ConfigError("duplicate parameter name '" + name + "'");
    }
    index_.emplace(name, params_.size());
    Tensor value(shape);
    Tensor grad(std::move(shape));
    params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad), frozen});
    return params_.back();
  }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw IndexError("no parameter named '" + name + "'");
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    if (values.size() != params_.size()) {
      throw DimensionError("snapshot has " + std::to_string(values.size()) +
                           " tensors, parameter set has " + std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].shape() != params_[i].value.shape()) {
        throw DimensionError("snapshot shape mismatch for " + params_[i].name);
      }
      params_[i].value = values[i];
    }
  }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in))
inline void init_uniform(Tensor& t, std::size_t fan_in, SeedStream& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
}

}  // namespace hin
