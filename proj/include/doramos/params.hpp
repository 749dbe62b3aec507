#pragma once

#include <map>
#include <string>
#include <vector>

#include "doramos/error.hpp"
#include "doramos/tensor.hpp"

namespace doramos {

// Named trainable arrays of one model. Iteration order is the lexicographic
// name order, which is also the checkpoint manifest order.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void add(const std::string& name, Tensor value) {
    if (!entries_.emplace(name, std::move(value)).second) {
      throw UsageError("duplicate parameter name: " + name);
    }
  }

  bool contains(const std::string& name) const { return entries_.contains(name); }

  const Tensor& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  Tensor& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  // A store with identical names/shapes, all zeros.
  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape(), 0.0));
    return out;
  }

  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  Map entries_;
};

}  // namespace doramos
