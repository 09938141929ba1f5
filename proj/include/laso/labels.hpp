#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "laso/errors.hpp"

namespace laso {

/// Indicator vector of a label set over a vocabulary of size L.
class LabelVec {
 public:
  LabelVec() = default;
  explicit LabelVec(std::size_t size) : bits_(size, 0) {}
  explicit LabelVec(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto& b : bits_) {
      if (b > 1) throw ConfigError("LabelVec: entries must be 0 or 1");
    }
  }

  /// Builds a vector of length `size` with the listed label indices set.
  static LabelVec of(std::size_t size, std::initializer_list<std::size_t> on) {
    LabelVec v(size);
    for (auto k : on) v.set(k);
    return v;
  }

  std::size_t size() const { return bits_.size(); }
  bool test(std::size_t k) const { return bits_.at(k) != 0; }
  void set(std::size_t k, bool on = true) { bits_.at(k) = on ? 1 : 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }
  bool empty_set() const { return count() == 0; }

  /// Indices of the labels present, ascending.
  std::vector<std::size_t> members() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < bits_.size(); ++k)
      if (bits_[k]) out.push_back(k);
    return out;
  }

  /// Keeps only labels also present in `mask`.
  LabelVec restricted_to(const LabelVec& mask) const;

  std::string str() const {
    std::string s = "{";
    bool first = true;
    for (auto k : members()) {
      if (!first) s += ",";
      s += std::to_string(k);
      first = false;
    }
    return s + "}";
  }

  friend bool operator==(const LabelVec&, const LabelVec&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

namespace detail {
inline void require_same_length(const LabelVec& a, const LabelVec& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": label vectors have lengths " +
                     std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
}

template <typename F>
LabelVec combine(const LabelVec& a, const LabelVec& b, const char* op, F f) {
  require_same_length(a, b, op);
  LabelVec out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out.set(k, f(a.test(k), b.test(k)));
  return out;
}
}  // namespace detail

inline LabelVec set_union(const LabelVec& a, const LabelVec& b) {
  return detail::combine(a, b, "set_union", [](bool x, bool y) { return x || y; });
}

inline LabelVec set_intersection(const LabelVec& a, const LabelVec& b) {
  return detail::combine(a, b, "set_intersection", [](bool x, bool y) { return x && y; });
}

inline LabelVec set_subtraction(const LabelVec& a, const LabelVec& b) {
  return detail::combine(a, b, "set_subtraction", [](bool x, bool y) { return x && !y; });
}

inline LabelVec set_complement(const LabelVec& a) {
  LabelVec out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out.set(k, !a.test(k));
  return out;
}

inline LabelVec LabelVec::restricted_to(const LabelVec& mask) const {
  return set_intersection(*this, mask);
}

/// |a ∩ b| / |a ∪ b|, with two empty sets scoring 1.
inline double iou(const LabelVec& a, const LabelVec& b) {
  detail::require_same_length(a, b, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    inter += (a.test(k) && b.test(k)) ? 1 : 0;
    uni += (a.test(k) || b.test(k)) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace laso
