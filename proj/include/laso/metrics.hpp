#pragma once

// Classification mAP over synthesized vectors and top-k retrieval mIoU.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "laso/errors.hpp"
#include "laso/labels.hpp"
#include "laso/losses.hpp"
#include "laso/nets.hpp"
#include "laso/optim.hpp"
#include "laso/synth.hpp"

namespace laso {

/// Average precision of a ranking. Samples with equal scores form one
/// threshold level and share the precision reached at its end, so the
/// value does not depend on sample order; with distinct scores this is
/// the usual (1/P) Σ precision@r over positive ranks. Returns nullopt when
/// there are no positives.
inline std::optional<double> average_precision(std::span<const double> scores,
                                               std::span<const std::uint8_t> positives) {
  if (scores.size() != positives.size()) {
    throw ShapeError("average_precision: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(positives.size()) + " labels");
  }
  std::size_t total_pos = 0;
  for (auto p : positives) total_pos += p ? 1 : 0;
  if (total_pos == 0) return std::nullopt;
  for (double s : scores) {
    if (std::isnan(s)) throw NumericError("average_precision: NaN score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t seen = 0, tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, level_tp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      level_tp += positives[order[j]] ? 1 : 0;
      ++j;
    }
    seen += j - i;
    tp += level_tp;
    ap += static_cast<double>(level_tp) * static_cast<double>(tp) / static_cast<double>(seen);
    i = j;
  }
  return ap / static_cast<double>(total_pos);
}

/// Per-class APs of a score matrix against label sets, for classes in
/// `subset`. Entries outside the subset or without positives are NaN.
struct ClassApResult {
  std::vector<double> ap;
  std::vector<std::size_t> skipped;  // subset classes with zero positives

  /// Arithmetic mean over evaluated classes; NaN when none was evaluated.
  double mean() const {
    double s = 0.0;
    std::size_t n = 0;
    for (double v : ap) {
      if (!std::isnan(v)) {
        s += v;
        ++n;
      }
    }
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }
};

inline ClassApResult class_aps(const Tensor& scores, std::span<const LabelVec> labels,
                               const LabelVec& subset) {
  const std::size_t n = scores.rows(), L = subset.size();
  if (labels.size() != n || scores.cols() != L) {
    throw ShapeError("class_aps: scores " + shape_str(scores.shape()) + " vs " +
                     std::to_string(labels.size()) + " label sets of " + std::to_string(L));
  }
  ClassApResult out;
  out.ap.assign(L, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> col(n);
  std::vector<std::uint8_t> pos(n);
  for (std::size_t k = 0; k < L; ++k) {
    if (!subset.test(k)) continue;
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores.at(i, k);
      pos[i] = labels[i].test(k) ? 1 : 0;
    }
    if (auto ap = average_precision(col, pos)) {
      out.ap[k] = *ap;
    } else {
      out.skipped.push_back(k);
    }
  }
  return out;
}

/// Random perfect matching of `items`; an odd one out is dropped.
inline std::vector<std::pair<std::size_t, std::size_t>> random_pairs(
    std::span<const std::size_t> items, std::uint64_t seed) {
  std::vector<std::size_t> order(items.begin(), items.end());
  Rng rng(seed);
  shuffle(order, rng);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i + 1 < order.size(); i += 2) out.emplace_back(order[i], order[i + 1]);
  return out;
}

struct PairBatch {
  std::vector<std::size_t> left, right;
};

inline PairBatch split_pairs(std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  PairBatch b;
  for (auto [x, y] : pairs) {
    b.left.push_back(x);
    b.right.push_back(y);
  }
  return b;
}

/// One row of the classification table.
struct OpEval {
  std::string op;  // "int", "uni", "sub" or "original"
  ClassApResult seen;
  ClassApResult unseen;  // empty when no unseen classifier was given
  double map_seen() const { return seen.mean(); }
  double map_unseen() const { return unseen.ap.empty() ? std::nan("") : unseen.mean(); }
};

struct EvalReport {
  std::string operators;
  std::size_t pairs = 0;
  bool dropped_odd = false;
  std::vector<OpEval> rows;

  const OpEval& row(const std::string& op) const {
    for (const auto& r : rows)
      if (r.op == op) return r;
    throw ConfigError("EvalReport: no row '" + op + "'");
  }
};

/// Scores the test split's random pairs under each operator. Seen labels
/// are scored by `seen_clf`, unseen labels by `unseen_clf` if given; the
/// "original" row scores the unmodified test vectors.
inline EvalReport classification_eval(const PairOperators& ops, const FeatureBank& bank,
                                      const LinearClassifier& seen_clf,
                                      const LinearClassifier* unseen_clf,
                                      std::uint64_t pairing_seed) {
  const auto test = bank.indices(Split::kTest);
  if (test.size() < 2) throw ConfigError("classification_eval: test split needs >= 2 samples");
  const auto pairs = random_pairs(test, pairing_seed);
  const auto pb = split_pairs(pairs);
  const Tensor fx = bank.gather(pb.left), fy = bank.gather(pb.right);
  const auto lx = bank.gather_labels(pb.left), ly = bank.gather_labels(pb.right);
  const LabelVec seen = bank.seen_mask(), unseen = bank.unseen_mask();

  EvalReport rep;
  rep.operators = ops.name();
  rep.pairs = pairs.size();
  rep.dropped_odd = test.size() % 2 == 1;
  auto score = [&](const std::string& name, const Tensor& f, std::span<const LabelVec> labels) {
    OpEval r;
    r.op = name;
    r.seen = class_aps(seen_clf.scores(f), labels, seen);
    if (unseen_clf) r.unseen = class_aps(unseen_clf->scores(f), labels, unseen);
    rep.rows.push_back(std::move(r));
  };
  for (SetOp op : kAllSetOps) {
    score(set_op_name(op), ops.apply(op, fx, fy), apply_set_op(op, lx, ly));
  }
  score("original", bank.gather(test), bank.gather_labels(test));
  return rep;
}

struct UnseenClassifierConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

/// Linear classifier over F trained with BCE on `label_mask` classes only,
/// from the reserve split (never from synthesized vectors).
inline LinearClassifier unseen_classifier_train(const FeatureBank& bank, const LabelVec& label_mask,
                                                const UnseenClassifierConfig& cfg = {}) {
  const auto pool = bank.indices(Split::kReserve);
  if (pool.empty()) throw ConfigError("unseen_classifier_train: reserve split is empty");
  if (cfg.batch_size == 0) throw ConfigError("unseen_classifier_train: batch_size must be > 0");
  auto c = LinearClassifier::zeros(bank.feature_dim(), bank.label_count());
  std::vector<double> mask(bank.label_count());
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = label_mask.test(k) ? 1.0 : 0.0;
  Adam opt(c.params("eval_classifier"), AdamConfig{.learning_rate = cfg.learning_rate});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order = pool;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    shuffle(order, rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::span<const std::size_t> rows(order.data() + s,
                                        std::min(cfg.batch_size, order.size() - s));
      ad::Tape t;
      Var loss = bce(c.forward(t, t.constant(bank.gather(rows))),
                     label_matrix(bank.gather_labels(rows)), mask);
      opt.zero_grad();
      t.backward(loss);
      opt.step();
    }
  }
  return c;
}

enum class Distance { kSquaredEuclidean, kCosine };

struct RetrievalOptions {
  std::vector<std::size_t> ks = {1, 3, 5};
  Distance distance = Distance::kSquaredEuclidean;
};

/// Mean top-k max-IoU per operation and label subset.
struct RetrievalRow {
  std::string op;
  std::string subset;  // "seen", "unseen" or "all"
  std::size_t queries = 0;
  std::vector<double> miou;  // aligned with RetrievalReport::ks
};

struct RetrievalReport {
  std::string operators;
  std::vector<std::size_t> ks;
  std::vector<RetrievalRow> rows;

  const RetrievalRow& row(const std::string& op, const std::string& subset) const {
    for (const auto& r : rows)
      if (r.op == op && r.subset == subset) return r;
    throw ConfigError("RetrievalReport: no row '" + op + "/" + subset + "'");
  }
};

/// Gallery of retrievable vectors with their labels and bank indices (for
/// source exclusion; SIZE_MAX when the vector is not from the query bank).
struct Gallery {
  Tensor features;
  std::vector<LabelVec> labels;
  std::vector<std::size_t> source;

  static Gallery test_split(const FeatureBank& bank) {
    Gallery g;
    g.source = bank.indices(Split::kTest);
    g.features = bank.gather(g.source);
    g.labels = bank.gather_labels(g.source);
    return g;
  }
};

namespace detail {

inline double distance(std::span<const double> a, std::span<const double> b, Distance d) {
  if (d == Distance::kSquaredEuclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

/// Gallery positions of the k nearest neighbors of `q`, skipping the two
/// sources; ties go to the lower position.
inline std::vector<std::size_t> nearest(const Gallery& g, std::span<const double> q,
                                        std::size_t k, std::size_t src_a, std::size_t src_b,
                                        Distance d) {
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(g.labels.size());
  for (std::size_t i = 0; i < g.labels.size(); ++i) {
    if (g.source[i] == src_a || g.source[i] == src_b) continue;
    cand.emplace_back(distance(q, g.features.row_span(i), d), i);
  }
  if (k > cand.size()) {
    throw ConfigError("retrieval: k = " + std::to_string(k) + " exceeds the pool of " +
                      std::to_string(cand.size()));
  }
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = cand[i].second;
  return out;
}

}  // namespace detail

/// Retrieval over `gallery`. IoU is computed on label sets restricted to
/// each subset; queries whose restricted expected set is empty do not
/// count toward that subset.
inline RetrievalReport retrieval_eval(const PairOperators& ops, const FeatureBank& bank,
                                      const Gallery& gallery, std::uint64_t pairing_seed,
                                      const RetrievalOptions& opts = {}) {
  if (opts.ks.empty()) throw ConfigError("retrieval: empty k list");
  const auto test = bank.indices(Split::kTest);
  if (test.size() < 2) throw ConfigError("retrieval: test split needs >= 2 samples");
  const std::size_t kmax = *std::max_element(opts.ks.begin(), opts.ks.end());
  if (kmax == 0) throw ConfigError("retrieval: k must be positive");
  const auto pairs = random_pairs(test, pairing_seed);
  const auto pb = split_pairs(pairs);
  const Tensor fx = bank.gather(pb.left), fy = bank.gather(pb.right);
  const auto lx = bank.gather_labels(pb.left), ly = bank.gather_labels(pb.right);
  const LabelVec all(std::vector<std::uint8_t>(bank.label_count(), 1));
  const std::vector<std::pair<std::string, LabelVec>> subsets = {
      {"seen", bank.seen_mask()}, {"unseen", bank.unseen_mask()}, {"all", all}};

  RetrievalReport rep;
  rep.operators = ops.name();
  rep.ks = opts.ks;
  for (SetOp op : kAllSetOps) {
    const Tensor z = ops.apply(op, fx, fy);
    const auto expected = apply_set_op(op, lx, ly);
    std::vector<std::vector<std::size_t>> nn(pairs.size());
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      nn[q] = detail::nearest(gallery, z.row_span(q), kmax, pb.left[q], pb.right[q],
                              opts.distance);
    }
    for (const auto& [name, mask] : subsets) {
      RetrievalRow row;
      row.op = set_op_name(op);
      row.subset = name;
      row.miou.assign(opts.ks.size(), 0.0);
      for (std::size_t q = 0; q < pairs.size(); ++q) {
        const LabelVec target = expected[q].restricted_to(mask);
        if (target.empty_set()) continue;
        ++row.queries;
        for (std::size_t ki = 0; ki < opts.ks.size(); ++ki) {
          double best = 0.0;
          for (std::size_t r = 0; r < opts.ks[ki]; ++r) {
            best = std::max(best, iou(gallery.labels[nn[q][r]].restricted_to(mask), target));
          }
          row.miou[ki] += best;
        }
      }
      for (auto& v : row.miou) {
        v = row.queries ? v / static_cast<double>(row.queries)
                        : std::numeric_limits<double>::quiet_NaN();
      }
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

inline RetrievalReport retrieval_eval(const PairOperators& ops, const FeatureBank& bank,
                                      std::uint64_t pairing_seed,
                                      const RetrievalOptions& opts = {}) {
  return retrieval_eval(ops, bank, Gallery::test_split(bank), pairing_seed, opts);
}

namespace detail {
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace detail

/// One line per class per operation: operators,op,subset,class,ap.
inline void write_eval_csv(std::ostream& out, const EvalReport& rep) {
  out << "operators,op,subset,class,ap\n";
  for (const auto& r : rep.rows) {
    for (const auto& [name, res] : {std::pair{"seen", &r.seen}, std::pair{"unseen", &r.unseen}}) {
      for (std::size_t k = 0; k < res->ap.size(); ++k) {
        if (std::isnan(res->ap[k])) continue;
        out << rep.operators << ',' << r.op << ',' << name << ',' << k << ','
            << detail::fmt(res->ap[k]) << '\n';
      }
    }
    out << rep.operators << ',' << r.op << ",seen,mAP," << detail::fmt(r.map_seen()) << '\n';
    out << rep.operators << ',' << r.op << ",unseen,mAP," << detail::fmt(r.map_unseen()) << '\n';
  }
}

inline void write_retrieval_csv(std::ostream& out, const RetrievalReport& rep) {
  out << "operators,op,subset,queries";
  for (auto k : rep.ks) out << ",top" << k;
  out << '\n';
  for (const auto& r : rep.rows) {
    out << rep.operators << ',' << r.op << ',' << r.subset << ',' << r.queries;
    for (double v : r.miou) out << ',' << detail::fmt(v);
    out << '\n';
  }
}

}  // namespace laso
