#pragma once

// Synthetic multi-label feature banks with decodable ground truth.
//
// Every label k owns a nonnegative prototype p_k; a sample with label set S
// has feature Σ_{k∈S} a_k·p_k + ε, clipped at zero. In disjoint-block mode
// the prototypes are indicators of a partition of the coordinates, so the
// label set can be read back from per-block sums.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "laso/errors.hpp"
#include "laso/labels.hpp"
#include "laso/nets.hpp"
#include "laso/rng.hpp"
#include "laso/tensor.hpp"

namespace laso {

enum class PrototypeMode { kDisjointBlocks, kRandomNonneg };

/// Sample partition tags, stored as one byte per sample on disk.
enum class Split : std::uint8_t {
  kTrain = 0,    // operator-network training data
  kTest = 1,     // evaluation pairs and few-shot query pool
  kReserve = 2,  // unfiltered pool: unseen-label classifier, few-shot support
};

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kReserve: return "reserve";
  }
  return "?";
}

struct GeneratorSpec {
  std::size_t feature_dim = 64;
  std::size_t label_count = 20;
  std::size_t seen_count = 16;
  PrototypeMode prototype_mode = PrototypeMode::kRandomNonneg;
  double amplitude_lo = 0.8;
  double amplitude_hi = 1.2;
  double noise_sigma = 0.05;
  double prototype_density = 0.3;  // support fraction of random prototypes
  std::size_t labels_min = 1;
  std::size_t labels_max = 4;
  bool clean_mode = false;  // amplitudes ≡ 1, σ ≡ 0
  bool filtered = true;     // train split carries seen labels only

  /// Clean-mode preset used by the exact oracle checks.
  static GeneratorSpec clean() {
    GeneratorSpec s;
    s.prototype_mode = PrototypeMode::kDisjointBlocks;
    s.clean_mode = true;
    return s;
  }

  void validate() const {
    if (feature_dim == 0 || label_count == 0) throw ConfigError("generator: empty dimensions");
    if (seen_count >= label_count) {
      throw ConfigError("generator: seen_count (" + std::to_string(seen_count) +
                        ") must be below label_count (" + std::to_string(label_count) + ")");
    }
    if (prototype_mode == PrototypeMode::kDisjointBlocks && feature_dim < label_count) {
      throw ConfigError("generator: disjoint blocks need feature_dim >= label_count");
    }
    if (labels_min == 0 || labels_min > labels_max) {
      throw ConfigError("generator: labels_per_sample range must satisfy 1 <= min <= max");
    }
    if (filtered && labels_min > seen_count) {
      throw ConfigError("generator: filtered train samples cannot carry labels_min seen labels");
    }
    if (!clean_mode && (amplitude_lo < 0.0 || amplitude_lo > amplitude_hi)) {
      throw ConfigError("generator: amplitude range must satisfy 0 <= lo <= hi");
    }
    if (!clean_mode && noise_sigma < 0.0) throw ConfigError("generator: noise_sigma < 0");
    if (!(prototype_density > 0.0 && prototype_density <= 1.0)) {
      throw ConfigError("generator: prototype_density must lie in (0, 1]");
    }
  }
};

struct SplitSizes {
  std::size_t train = 2000;
  std::size_t test = 1000;
  std::size_t reserve = 1000;
  std::size_t total() const { return train + test + reserve; }
};

/// Coordinate ranges of the disjoint blocks: block k covers
/// [bounds[k], bounds[k+1]). The first d mod L blocks get one extra
/// coordinate.
inline std::vector<std::size_t> block_bounds(std::size_t feature_dim, std::size_t label_count) {
  if (label_count == 0 || feature_dim < label_count) {
    throw ConfigError("block_bounds: need feature_dim >= label_count > 0");
  }
  std::vector<std::size_t> b(label_count + 1, 0);
  const std::size_t base = feature_dim / label_count, extra = feature_dim % label_count;
  for (std::size_t k = 0; k < label_count; ++k) b[k + 1] = b[k] + base + (k < extra ? 1 : 0);
  return b;
}

/// Label prototypes as an L×d matrix.
inline Tensor make_prototypes(const GeneratorSpec& spec, Rng& rng) {
  const std::size_t d = spec.feature_dim, L = spec.label_count;
  Tensor p = Tensor::matrix(L, d);
  if (spec.prototype_mode == PrototypeMode::kDisjointBlocks) {
    const auto b = block_bounds(d, L);
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t j = b[k]; j < b[k + 1]; ++j) p.at(k, j) = 1.0;
    return p;
  }
  // Sparse nonnegative prototypes, at least one coordinate each.
  for (std::size_t k = 0; k < L; ++k) {
    bool any = false;
    for (std::size_t j = 0; j < d; ++j) {
      if (uniform01(rng) < spec.prototype_density) {
        p.at(k, j) = uniform(rng, 0.2, 1.0);
        any = true;
      }
    }
    if (!any) p.at(k, uniform_index(rng, d)) = 1.0;
  }
  return p;
}

/// Uniformly random seen-label mask with exactly `seen_count` ones.
inline LabelVec split_seen_unseen(std::size_t label_count, std::size_t seen_count,
                                  std::uint64_t seed) {
  if (label_count == 0 || seen_count >= label_count) {
    throw ConfigError("split_seen_unseen: need 0 <= seen_count < label_count, got " +
                      std::to_string(seen_count) + " of " + std::to_string(label_count));
  }
  Rng rng(seed);
  auto order = permutation(label_count, rng);
  LabelVec mask(label_count);
  for (std::size_t i = 0; i < seen_count; ++i) mask.set(order[i]);
  return mask;
}

/// N samples of features (float32), labels, and split tags.
class FeatureBank {
 public:
  FeatureBank() = default;

  FeatureBank(std::size_t feature_dim, std::size_t label_count, LabelVec seen_mask)
      : d_(feature_dim), L_(label_count), seen_(std::move(seen_mask)) {
    if (seen_.size() != L_) throw ShapeError("FeatureBank: seen mask length != label_count");
  }

  void add(std::span<const float> feature, const LabelVec& labels, Split split) {
    if (feature.size() != d_ || labels.size() != L_) {
      throw ShapeError("FeatureBank::add: sample has " + std::to_string(feature.size()) +
                       " features / " + std::to_string(labels.size()) + " labels, expected " +
                       std::to_string(d_) + " / " + std::to_string(L_));
    }
    features_.insert(features_.end(), feature.begin(), feature.end());
    for (auto b : labels.bits()) labels_.push_back(b);
    splits_.push_back(split);
  }

  std::size_t size() const { return splits_.size(); }
  std::size_t feature_dim() const { return d_; }
  std::size_t label_count() const { return L_; }
  const LabelVec& seen_mask() const { return seen_; }
  LabelVec unseen_mask() const { return set_complement(seen_); }

  std::span<const float> feature(std::size_t i) const {
    return std::span<const float>(features_).subspan(i * d_, d_);
  }
  std::vector<double> feature_f64(std::size_t i) const {
    auto f = feature(i);
    return std::vector<double>(f.begin(), f.end());
  }
  LabelVec labels(std::size_t i) const {
    return LabelVec(std::vector<std::uint8_t>(labels_.begin() + i * L_,
                                              labels_.begin() + (i + 1) * L_));
  }
  Split split(std::size_t i) const { return splits_.at(i); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (splits_[i] == s) out.push_back(i);
    return out;
  }

  /// Features of the given samples as a (rows×d) 64-bit matrix.
  Tensor gather(std::span<const std::size_t> rows) const {
    Tensor t = Tensor::matrix(rows.size(), d_);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto f = feature(rows[r]);
      std::copy(f.begin(), f.end(), t.row_span(r).begin());
    }
    return t;
  }

  std::vector<LabelVec> gather_labels(std::span<const std::size_t> rows) const {
    std::vector<LabelVec> out;
    out.reserve(rows.size());
    for (auto i : rows) out.push_back(labels(i));
    return out;
  }

  const std::vector<float>& raw_features() const { return features_; }
  const std::vector<std::uint8_t>& raw_labels() const { return labels_; }
  const std::vector<Split>& raw_splits() const { return splits_; }

  friend bool operator==(const FeatureBank& a, const FeatureBank& b) {
    if (a.d_ != b.d_ || a.L_ != b.L_ || !(a.seen_ == b.seen_) || a.labels_ != b.labels_ ||
        a.splits_ != b.splits_ || a.features_.size() != b.features_.size()) {
      return false;
    }
    // Bitwise, so NaN payloads and signed zeros compare exactly.
    return std::memcmp(a.features_.data(), b.features_.data(),
                       a.features_.size() * sizeof(float)) == 0;
  }

 private:
  std::size_t d_ = 0;
  std::size_t L_ = 0;
  LabelVec seen_;
  std::vector<float> features_;
  std::vector<std::uint8_t> labels_;
  std::vector<Split> splits_;
};

/// Draws a label set: size uniform in [min, max] (capped by the allowed
/// pool), members uniform without replacement from `allowed`.
inline LabelVec draw_label_set(const GeneratorSpec& spec, std::span<const std::size_t> allowed,
                               Rng& rng) {
  const std::size_t hi = std::min(spec.labels_max, allowed.size());
  const std::size_t lo = std::min(spec.labels_min, hi);
  const std::size_t count = lo + uniform_index(rng, hi - lo + 1);
  std::vector<std::size_t> pool(allowed.begin(), allowed.end());
  LabelVec out(spec.label_count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
    out.set(pool[i]);
  }
  return out;
}

/// Feature for a given label set. Noise is added before clipping at zero;
/// the result is rounded to float32, the storage precision of banks.
inline std::vector<float> synthesize_feature(const GeneratorSpec& spec, const Tensor& prototypes,
                                             const LabelVec& labels, Rng& rng) {
  const std::size_t d = spec.feature_dim;
  std::vector<double> f(d, 0.0);
  for (auto k : labels.members()) {
    const double a = spec.clean_mode ? 1.0 : uniform(rng, spec.amplitude_lo, spec.amplitude_hi);
    for (std::size_t j = 0; j < d; ++j) f[j] += a * prototypes.at(k, j);
  }
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    double v = f[j];
    if (!spec.clean_mode && spec.noise_sigma > 0) v += spec.noise_sigma * standard_normal(rng);
    out[j] = static_cast<float>(std::max(v, 0.0));
  }
  return out;
}

/// Generates train, test and reserve splits, in that order. Deterministic
/// in (spec, sizes, seed).
inline FeatureBank generate_bank(const GeneratorSpec& spec, const SplitSizes& sizes,
                                 std::uint64_t seed) {
  spec.validate();
  LabelVec seen = split_seen_unseen(spec.label_count, spec.seen_count, derive_seed(seed, 1));
  Rng proto_rng(derive_seed(seed, 2));
  const Tensor prototypes = make_prototypes(spec, proto_rng);
  Rng rng(derive_seed(seed, 3));

  const auto all = LabelVec(std::vector<std::uint8_t>(spec.label_count, 1)).members();
  const auto seen_only = seen.members();

  FeatureBank bank(spec.feature_dim, spec.label_count, seen);
  auto emit = [&](std::size_t n, Split split, std::span<const std::size_t> allowed) {
    for (std::size_t i = 0; i < n; ++i) {
      LabelVec labels = draw_label_set(spec, allowed, rng);
      auto f = synthesize_feature(spec, prototypes, labels, rng);
      bank.add(f, labels, split);
    }
  };
  emit(sizes.train, Split::kTrain, spec.filtered ? std::span<const std::size_t>(seen_only)
                                                 : std::span<const std::size_t>(all));
  emit(sizes.test, Split::kTest, all);
  emit(sizes.reserve, Split::kReserve, all);
  return bank;
}

/// Label k is on iff the sum of f over block k exceeds `threshold`.
inline LabelVec oracle_decode(const GeneratorSpec& spec, std::span<const double> f,
                              double threshold = 0.5) {
  if (spec.prototype_mode != PrototypeMode::kDisjointBlocks) {
    throw ConfigError("oracle_decode: only defined for disjoint-block prototypes");
  }
  if (f.size() != spec.feature_dim) {
    throw ShapeError("oracle_decode: feature length " + std::to_string(f.size()) +
                     " != " + std::to_string(spec.feature_dim));
  }
  const auto b = block_bounds(spec.feature_dim, spec.label_count);
  LabelVec out(spec.label_count);
  for (std::size_t k = 0; k < spec.label_count; ++k) {
    double s = 0.0;
    for (std::size_t j = b[k]; j < b[k + 1]; ++j) s += f[j];
    out.set(k, s > threshold);
  }
  return out;
}

/// Linear classifier whose score for label k is (block-k sum) − 0.5:
/// perfectly ranking on clean disjoint-block data.
inline LinearClassifier oracle_classifier(const GeneratorSpec& spec) {
  if (spec.prototype_mode != PrototypeMode::kDisjointBlocks) {
    throw ConfigError("oracle_classifier: only defined for disjoint-block prototypes");
  }
  auto c = LinearClassifier::zeros(spec.feature_dim, spec.label_count);
  const auto b = block_bounds(spec.feature_dim, spec.label_count);
  for (std::size_t k = 0; k < spec.label_count; ++k) {
    for (std::size_t j = b[k]; j < b[k + 1]; ++j) c.weight.at(k, j) = 1.0;
    c.bias[k] = -0.5;
  }
  return c;
}

}  // namespace laso
