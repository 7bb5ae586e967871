#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "hbm/core/types.hpp"

namespace hbm::ad {

/// A named learnable tensor. `dims` is the logical shape written to weight
/// files; `value` stores it as a 2-D matrix (leading dims folded into rows).
struct Parameter {
  std::string name;
  std::vector<uint32_t> dims;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Owns parameters with stable addresses, in creation order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& create(const std::string& name, std::vector<uint32_t> dims, Eigen::Index rows,
                    Eigen::Index cols) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->dims = std::move(dims);
    p->value = Matrix::Zero(rows, cols);
    p->grad = Matrix::Zero(rows, cols);
    Parameter* raw = p.get();
    params_.push_back(std::move(p));
    by_name_[name] = raw;
    return *raw;
  }

  Parameter* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  Parameter& at(const std::string& name) const {
    Parameter* p = find(name);
    if (!p) throw std::out_of_range("unknown parameter: " + name);
    return *p;
  }

  size_t size() const { return params_.size(); }
  Parameter& operator[](size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

}  // namespace hbm::ad
