#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "dip/tensor.hpp"

namespace dip {

/// Named learnable arrays with one gradient slot each. Iteration order is
/// insertion order, which keeps checkpoints and optimizer state stable.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  std::size_t add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;

  Tensor& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor& value(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor& grad(const std::string& name) { return entries_[index_of(name)].grad; }
  const Tensor& grad(const std::string& name) const { return entries_[index_of(name)].grad; }

  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();

  // True when both stores have the same names in the same order with equal shapes.
  bool same_layout(const ParamStore& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dip
