#include "dip/param_store.hpp"

namespace dip {

std::size_t ParamStore::add(const std::string& name, Tensor value) {
  if (name.empty()) throw ShapeError("parameter name must be non-empty");
  if (contains(name)) throw ShapeError("duplicate parameter name: " + name);
  Tensor grad(value.shape(), 0.0);
  entries_.push_back({name, std::move(value), std::move(grad)});
  index_.emplace(name, entries_.size() - 1);
  return entries_.size() - 1;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.shape() != other.entries_[i].value.shape()) return false;
  }
  return true;
}

}  // namespace dip
