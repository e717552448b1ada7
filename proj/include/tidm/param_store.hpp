#pragma once

#include <concepts>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "tidm/tensor.hpp"

namespace tidm {

/// Named parameter arrays with `/`-separated paths, iterated in
/// lexicographic order.
template <std::floating_point Real>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<Real>, std::less<>>;

  void set(const std::string& name, Tensor<Real> value) { entries_[name] = std::move(value); }
  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

  const Tensor<Real>& at(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValueError("param store: no entry named '" + std::string(name) + "'");
    return it->second;
  }
  Tensor<Real>& at(std::string_view name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValueError("param store: no entry named '" + std::string(name) + "'");
    return it->second;
  }

  void erase(std::string_view name) {
    auto it = entries_.find(name);
    if (it != entries_.end()) entries_.erase(it);
  }

  const Map& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  /// Entries whose name starts with `prefix`, names kept unchanged.
  ParamStore subtree(std::string_view prefix) const {
    ParamStore out;
    for (const auto& [name, t] : entries_)
      if (name.starts_with(prefix)) out.entries_.emplace(name, t);
    return out;
  }

  /// Inserts or overwrites every entry of `other`.
  void merge(const ParamStore& other) {
    for (const auto& [name, t] : other.entries_) entries_[name] = t;
  }

  template <std::floating_point Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& [name, t] : entries_) out.set(name, t.template cast<Other>());
    out.step_count = step_count;
    return out;
  }

  bool operator==(const ParamStore& other) const {
    return step_count == other.step_count && entries_ == other.entries_;
  }

  std::uint64_t step_count = 0;

 private:
  Map entries_;
};

}  // namespace tidm
