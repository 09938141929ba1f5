#pragma once

// Multi-label few-shot benchmark on the unseen labels: episode selection,
// augmentation by synthesis, per-episode classifier training and mAP.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "laso/errors.hpp"
#include "laso/losses.hpp"
#include "laso/metrics.hpp"
#include "laso/nets.hpp"
#include "laso/optim.hpp"
#include "laso/synth.hpp"
#include "laso/train.hpp"

namespace laso {

/// Support set drawn from the reserve split; the query set is the whole
/// test split, scored on unseen labels only.
struct Episode {
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
  std::size_t n_shot = 0;
  std::vector<std::size_t> counts;  // per label; zero for labels outside the mask
};

/// Greedy pass over a seeded shuffle of the reserve split: a sample is
/// admitted iff it carries a masked label still below `n_shot`.
inline Episode build_episode(const FeatureBank& bank, const LabelVec& label_mask,
                             std::size_t n_shot, std::uint64_t seed) {
  if (n_shot == 0) throw ConfigError("build_episode: n_shot must be positive");
  if (label_mask.size() != bank.label_count()) {
    throw ShapeError("build_episode: label mask has " + std::to_string(label_mask.size()) +
                     " entries, bank has " + std::to_string(bank.label_count()) + " labels");
  }
  const auto wanted = label_mask.members();
  if (wanted.empty()) throw ConfigError("build_episode: label mask is empty");

  auto pool = bank.indices(Split::kReserve);
  std::vector<std::size_t> available(bank.label_count(), 0);
  for (auto i : pool) {
    for (auto k : wanted) available[k] += bank.labels(i).test(k) ? 1 : 0;
  }
  for (auto k : wanted) {
    if (available[k] < n_shot) {
      throw ConfigError("build_episode: label " + std::to_string(k) + " has only " +
                        std::to_string(available[k]) + " reserve samples, needs " +
                        std::to_string(n_shot));
    }
  }

  Rng rng(seed);
  shuffle(pool, rng);
  Episode ep;
  ep.n_shot = n_shot;
  ep.counts.assign(bank.label_count(), 0);
  std::size_t satisfied = 0;
  for (auto i : pool) {
    if (satisfied == wanted.size()) break;
    const LabelVec l = bank.labels(i);
    bool useful = false;
    for (auto k : wanted) useful = useful || (l.test(k) && ep.counts[k] < n_shot);
    if (!useful) continue;
    ep.support.push_back(i);
    for (auto k : wanted) {
      if (!l.test(k)) continue;
      if (++ep.counts[k] == n_shot) ++satisfied;
    }
  }
  ep.query = bank.indices(Split::kTest);
  return ep;
}

enum class AugMethod {
  kNone,
  kMixup,
  kAnalyticInt,
  kAnalyticUni,
  kLearnedInt,
  kLearnedUni,
  kLearnedSub,
};

inline const char* aug_method_name(AugMethod m) {
  switch (m) {
    case AugMethod::kNone: return "none";
    case AugMethod::kMixup: return "mixup";
    case AugMethod::kAnalyticInt: return "analytic_int";
    case AugMethod::kAnalyticUni: return "analytic_uni";
    case AugMethod::kLearnedInt: return "learned_int";
    case AugMethod::kLearnedUni: return "learned_uni";
    case AugMethod::kLearnedSub: return "learned_sub";
  }
  return "?";
}

inline AugMethod parse_aug_method(const std::string& s) {
  for (AugMethod m : {AugMethod::kNone, AugMethod::kMixup, AugMethod::kAnalyticInt,
                      AugMethod::kAnalyticUni, AugMethod::kLearnedInt, AugMethod::kLearnedUni,
                      AugMethod::kLearnedSub}) {
    if (s == aug_method_name(m)) return m;
  }
  throw ConfigError("unknown augmentation method '" + s +
                    "' (none, mixup, analytic_int, analytic_uni, learned_int, learned_uni, "
                    "learned_sub)");
}

inline bool is_learned(AugMethod m) {
  return m == AugMethod::kLearnedInt || m == AugMethod::kLearnedUni || m == AugMethod::kLearnedSub;
}

struct AugmentationPolicy {
  AugMethod method = AugMethod::kNone;
  // Samples synthesized per epoch, as a multiple of the support size.
  double per_support = 4.0;
  // Redraw pairs whose int/uni target has no label inside the class mask.
  bool skip_empty = true;
  double mixup_alpha = 0.2;
  // Fixes the mixup weight instead of drawing it from Beta(α, α).
  std::optional<double> mixup_lambda;
  // Draw budget per requested sample before empty targets are accepted.
  std::size_t max_draws_per_sample = 50;

  // A support set of one sample has no pair to combine.
  std::size_t count(std::size_t support) const {
    if (method == AugMethod::kNone || support < 2) return 0;
    return static_cast<std::size_t>(std::llround(per_support * static_cast<double>(support)));
  }

  void validate() const {
    if (!(per_support >= 0.0) || !std::isfinite(per_support)) {
      throw ConfigError("augmentation: per_support must be finite and >= 0");
    }
    if (!(mixup_alpha > 0.0)) throw ConfigError("augmentation: mixup_alpha must be > 0");
    if (mixup_lambda && !(*mixup_lambda >= 0.0 && *mixup_lambda <= 1.0)) {
      throw ConfigError("augmentation: mixup_lambda must lie in [0, 1]");
    }
    if (max_draws_per_sample == 0) {
      throw ConfigError("augmentation: max_draws_per_sample must be positive");
    }
  }
};

/// Synthesized rows with soft targets in [0, 1].
struct Augmented {
  Tensor features;
  Tensor targets;
  std::size_t empty_targets_kept = 0;  // accepted after the draw budget ran out
};

/// Draws `policy.count(support)` random pairs from the support set and maps
/// each through the policy's operator. Targets are exact set operations of
/// the pair's labels, or the mixed label for mixup.
inline Augmented synthesize_augmentations(const AugmentationPolicy& policy,
                                          const FeatureBank& bank,
                                          std::span<const std::size_t> support,
                                          const LasoModel* model, const LabelVec& class_mask,
                                          Rng& rng) {
  policy.validate();
  const std::size_t n = policy.count(support.size());
  const std::size_t d = bank.feature_dim(), L = bank.label_count();
  Augmented out{Tensor::matrix(n, d), Tensor::matrix(n, L), 0};
  if (n == 0) return out;
  if (is_learned(policy.method) && model == nullptr) {
    throw ConfigError(std::string("augmentation '") + aug_method_name(policy.method) +
                      "' needs a trained model");
  }

  SetOp op = SetOp::kUnion;
  std::optional<PairOperators> ops;
  switch (policy.method) {
    case AugMethod::kAnalyticInt: op = SetOp::kIntersection; ops = PairOperators::analytic(); break;
    case AugMethod::kAnalyticUni: op = SetOp::kUnion; ops = PairOperators::analytic(); break;
    case AugMethod::kLearnedInt: op = SetOp::kIntersection; ops = PairOperators::learned(*model); break;
    case AugMethod::kLearnedUni: op = SetOp::kUnion; ops = PairOperators::learned(*model); break;
    case AugMethod::kLearnedSub: op = SetOp::kSubtraction; ops = PairOperators::learned(*model); break;
    default: break;
  }
  const bool may_skip = policy.skip_empty && ops && op != SetOp::kSubtraction;

  // Pick pairs first so learned operators run once on the whole batch.
  std::vector<std::size_t> xs, ys;
  std::vector<double> lambdas;
  std::size_t draws = 0;
  const std::size_t budget = policy.max_draws_per_sample * n;
  while (xs.size() < n) {
    // Two distinct support positions.
    const std::size_t pa = uniform_index(rng, support.size());
    std::size_t pb = uniform_index(rng, support.size() - 1);
    if (pb >= pa) ++pb;
    const std::size_t a = support[pa], b = support[pb];
    ++draws;
    if (ops) {
      const LabelVec la = bank.labels(a), lb = bank.labels(b);
      const LabelVec target = op == SetOp::kUnion          ? set_union(la, lb)
                              : op == SetOp::kIntersection ? set_intersection(la, lb)
                                                           : set_subtraction(la, lb);
      const bool empty = target.restricted_to(class_mask).count() == 0;
      if (may_skip && empty) {
        if (draws <= budget) continue;
        ++out.empty_targets_kept;
      }
    } else {
      lambdas.push_back(policy.mixup_lambda
                            ? *policy.mixup_lambda
                            : beta_draw(rng, policy.mixup_alpha, policy.mixup_alpha));
    }
    xs.push_back(a);
    ys.push_back(b);
  }

  const auto lx = bank.gather_labels(xs), ly = bank.gather_labels(ys);
  if (ops) {
    out.features = ops->apply(op, bank.gather(xs), bank.gather(ys));
    out.targets = label_matrix(apply_set_op(op, lx, ly));
  } else {
    const Tensor fx = bank.gather(xs), fy = bank.gather(ys);
    for (std::size_t r = 0; r < n; ++r) {
      const double lam = lambdas[r];
      for (std::size_t j = 0; j < d; ++j) {
        out.features.at(r, j) = lam * fx.at(r, j) + (1.0 - lam) * fy.at(r, j);
      }
      for (std::size_t k = 0; k < L; ++k) {
        out.targets.at(r, k) = lam * (lx[r].test(k) ? 1.0 : 0.0) +
                               (1.0 - lam) * (ly[r].test(k) ? 1.0 : 0.0);
      }
    }
  }
  return out;
}

struct BenchmarkConfig {
  std::vector<std::size_t> n_shots = {1, 5};
  std::vector<AugMethod> methods = {AugMethod::kNone,        AugMethod::kMixup,
                                    AugMethod::kAnalyticInt, AugMethod::kAnalyticUni,
                                    AugMethod::kLearnedInt,  AugMethod::kLearnedUni};
  std::size_t episodes = 10;
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  AugmentationPolicy augmentation;  // method field is overridden per run
  std::uint64_t seed = 0;

  void validate() const {
    if (n_shots.empty() || methods.empty() || episodes == 0 || epochs == 0 || batch_size == 0) {
      throw ConfigError("fewshot: n_shots, methods, episodes, epochs and batch_size must be "
                        "nonempty / positive");
    }
    for (auto s : n_shots) {
      if (s == 0) throw ConfigError("fewshot: n_shot must be positive");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("fewshot: learning_rate must be > 0");
    augmentation.validate();
  }
};

struct EpisodeScore {
  std::size_t n_shot = 0;
  AugMethod method = AugMethod::kNone;
  std::size_t episode = 0;
  std::size_t support = 0;
  std::size_t synthesized_per_epoch = 0;
  double map = 0.0;
};

struct MethodSummary {
  std::size_t n_shot = 0;
  AugMethod method = AugMethod::kNone;
  double mean = 0.0;
  double std = 0.0;  // population std over episodes
};

struct BenchmarkResult {
  std::vector<EpisodeScore> episodes;
  std::vector<MethodSummary> summary;

  const MethodSummary& find(std::size_t n_shot, AugMethod m) const {
    for (const auto& s : summary) {
      if (s.n_shot == n_shot && s.method == m) return s;
    }
    throw ConfigError(std::string("benchmark has no result for ") + aug_method_name(m) + ", " +
                      std::to_string(n_shot) + "-shot");
  }
};

/// Trains a zero-initialized linear classifier with minibatch SGD on the
/// support set plus a fresh synthesized batch each epoch, BCE over the
/// masked labels, then scores the query set.
inline double run_episode(const FeatureBank& bank, const Episode& ep, const LasoModel* model,
                          const AugmentationPolicy& policy, const LabelVec& class_mask,
                          const BenchmarkConfig& cfg, std::uint64_t episode_seed) {
  const std::size_t d = bank.feature_dim(), L = bank.label_count();
  auto clf = LinearClassifier::zeros(d, L);
  Sgd opt(clf.params("classifier"), cfg.learning_rate);
  const auto mask = class_mask_of(class_mask);
  const Tensor sf = bank.gather(ep.support);
  const Tensor st = label_matrix(bank.gather_labels(ep.support));

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    // Same pair stream for every method in this episode and epoch.
    Rng syn_rng(derive_seed(episode_seed, 1, e));
    const Augmented aug =
        synthesize_augmentations(policy, bank, ep.support, model, class_mask, syn_rng);
    const std::size_t ns = ep.support.size(), na = aug.features.rows();
    std::vector<std::size_t> order(ns + na);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng(derive_seed(episode_seed, 2, e));
    shuffle(order, order_rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t m = std::min(cfg.batch_size, order.size() - s);
      Tensor bf = Tensor::matrix(m, d), bt = Tensor::matrix(m, L);
      for (std::size_t r = 0; r < m; ++r) {
        const std::size_t i = order[s + r];
        const bool real = i < ns;
        const Tensor& f = real ? sf : aug.features;
        const Tensor& t = real ? st : aug.targets;
        const std::size_t row = real ? i : i - ns;
        std::copy_n(f.row_span(row).begin(), d, bf.row_span(r).begin());
        std::copy_n(t.row_span(row).begin(), L, bt.row_span(r).begin());
      }
      ad::Tape tape;
      Var loss = bce(clf.forward(tape, tape.constant(std::move(bf))), bt, mask);
      if (!std::isfinite(loss.value().item())) {
        throw NumericError("fewshot: classifier loss became non-finite at epoch " +
                           std::to_string(e + 1));
      }
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
  }
  const Tensor scores = clf.scores(bank.gather(ep.query));
  return class_aps(scores, bank.gather_labels(ep.query), class_mask).mean();
}

/// Every method sees the same episodes, the same synthesized count and the
/// same epoch budget. Learned operators are used frozen.
inline BenchmarkResult run_benchmark(const FeatureBank& bank, const LasoModel* model,
                                     const BenchmarkConfig& cfg) {
  cfg.validate();
  for (AugMethod m : cfg.methods) {
    if (is_learned(m) && model == nullptr) {
      throw ConfigError(std::string("fewshot: method ") + aug_method_name(m) +
                        " needs a trained model");
    }
  }
  const LabelVec unseen = bank.unseen_mask();
  BenchmarkResult res;
  for (std::size_t shot : cfg.n_shots) {
    for (std::size_t e = 0; e < cfg.episodes; ++e) {
      const std::uint64_t ep_seed = derive_seed(cfg.seed, 7, shot, e);
      const Episode ep = build_episode(bank, unseen, shot, ep_seed);
      for (AugMethod m : cfg.methods) {
        AugmentationPolicy pol = cfg.augmentation;
        pol.method = m;
        EpisodeScore s;
        s.n_shot = shot;
        s.method = m;
        s.episode = e;
        s.support = ep.support.size();
        s.synthesized_per_epoch = pol.count(ep.support.size());
        s.map = run_episode(bank, ep, model, pol, unseen, cfg, ep_seed);
        res.episodes.push_back(s);
      }
    }
    for (AugMethod m : cfg.methods) {
      MethodSummary sum;
      sum.n_shot = shot;
      sum.method = m;
      std::vector<double> v;
      for (const auto& s : res.episodes) {
        if (s.n_shot == shot && s.method == m) v.push_back(s.map);
      }
      for (double x : v) sum.mean += x;
      sum.mean /= static_cast<double>(v.size());
      for (double x : v) sum.std += (x - sum.mean) * (x - sum.mean);
      sum.std = std::sqrt(sum.std / static_cast<double>(v.size()));
      res.summary.push_back(sum);
    }
  }
  return res;
}

inline void write_fewshot_csv(std::ostream& os, const BenchmarkResult& r) {
  os << "n_shot,method,episode,support,synthesized_per_epoch,map\n";
  for (const auto& s : r.episodes) {
    os << s.n_shot << ',' << aug_method_name(s.method) << ',' << s.episode << ',' << s.support
       << ',' << s.synthesized_per_epoch << ',' << detail::fmt(s.map) << '\n';
  }
  for (const auto& s : r.summary) {
    os << s.n_shot << ',' << aug_method_name(s.method) << ",mean,,," << detail::fmt(s.mean)
       << '\n';
    os << s.n_shot << ',' << aug_method_name(s.method) << ",std,,," << detail::fmt(s.std) << '\n';
  }
}

}  // namespace laso
