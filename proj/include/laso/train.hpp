#pragma once

// Classifier pre-training and the alternating operator-network training
// loop.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "laso/errors.hpp"
#include "laso/losses.hpp"
#include "laso/nets.hpp"
#include "laso/optim.hpp"
#include "laso/synth.hpp"

namespace laso {

struct PretrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  PlateauConfig plateau;
  LossOptions loss;
  std::uint64_t seed = 0;
  // Checksum both parameter groups around every step.
  bool verify_decoupling = true;
};

struct EpochLog {
  std::size_t epoch = 0;
  double classifier_loss = 0.0;
  double laso = 0.0;
  double sym = 0.0;
  double mc = 0.0;
  double total = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
  // Steps that moved a parameter group they were not allowed to touch.
  std::size_t classifier_moved_by_laso_steps = 0;
  std::size_t operators_moved_by_classifier_steps = 0;
  bool decoupling_checked = false;
};

inline std::vector<double> class_mask_of(const LabelVec& mask) {
  std::vector<double> out(mask.size());
  for (std::size_t k = 0; k < mask.size(); ++k) out[k] = mask.test(k) ? 1.0 : 0.0;
  return out;
}

namespace detail {

inline void require_finite(double v, const std::string& what, std::size_t epoch,
                           std::size_t step) {
  if (!std::isfinite(v)) {
    throw NumericError(what + " became non-finite (" + std::to_string(v) + ") at epoch " +
                       std::to_string(epoch + 1) + ", step " + std::to_string(step));
  }
}

inline std::vector<std::size_t> train_rows(const FeatureBank& bank, std::size_t batch) {
  if (batch == 0) throw ConfigError("training: batch_size must be positive");
  auto rows = bank.indices(Split::kTrain);
  if (rows.size() < 2) throw ConfigError("training: train split needs >= 2 samples");
  return rows;
}

}  // namespace detail

/// Pre-trains C on the train split with BCE restricted to seen labels.
/// Returns the mean loss of each epoch.
inline std::vector<double> pretrain_classifier(LinearClassifier& c, const FeatureBank& bank,
                                               const PretrainConfig& cfg) {
  auto rows = detail::train_rows(bank, cfg.batch_size);
  const auto mask = class_mask_of(bank.seen_mask());
  Adam opt(c.params("classifier"), AdamConfig{.learning_rate = cfg.learning_rate});
  Rng rng(derive_seed(cfg.seed, 11));
  std::vector<double> log;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    shuffle(rows, rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < rows.size(); s += cfg.batch_size) {
      std::span<const std::size_t> b(rows.data() + s, std::min(cfg.batch_size, rows.size() - s));
      ad::Tape t;
      Var loss = bce(c.forward(t, t.constant(bank.gather(b))),
                     label_matrix(bank.gather_labels(b)), mask);
      detail::require_finite(loss.value().item(), "classifier loss", e, batches);
      opt.zero_grad();
      t.backward(loss);
      opt.step();
      sum += loss.value().item();
      ++batches;
    }
    log.push_back(sum / static_cast<double>(batches));
  }
  return log;
}

/// Alternating training over random pairs of the train split. Each batch
/// first updates C on the classifier loss, then updates the three operator
/// networks on the combined objective with C frozen. The plateau schedule
/// follows the epoch-mean combined objective.
inline TrainResult train_laso(LasoModel& model, const FeatureBank& bank, const TrainConfig& cfg,
                              const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.loss.weights.validate();
  if (bank.feature_dim() != model.feature_dim || bank.label_count() != model.label_count) {
    throw ShapeError("train_laso: bank is d=" + std::to_string(bank.feature_dim()) + ", L=" +
                     std::to_string(bank.label_count()) + " but the model is d=" +
                     std::to_string(model.feature_dim) + ", L=" +
                     std::to_string(model.label_count));
  }
  auto rows = detail::train_rows(bank, cfg.batch_size);
  const auto mask = class_mask_of(bank.seen_mask());
  auto cparams = model.classifier_params();
  auto oparams = model.operator_params();
  Adam c_opt(cparams, AdamConfig{.learning_rate = cfg.learning_rate});
  Adam o_opt(oparams, AdamConfig{.learning_rate = cfg.learning_rate});
  PlateauScheduler sched(cfg.learning_rate, cfg.plateau);
  Rng pair_rng(derive_seed(cfg.seed, 21));
  Rng drop_rng(derive_seed(cfg.seed, 22));

  TrainResult res;
  res.decoupling_checked = cfg.verify_decoupling;
  std::vector<std::size_t> first = rows, second = rows;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    shuffle(first, pair_rng);
    shuffle(second, pair_rng);
    EpochLog log;
    log.epoch = e + 1;
    log.learning_rate = sched.learning_rate();
    std::size_t batches = 0;
    for (std::size_t s = 0; s < rows.size(); s += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, rows.size() - s);
      // Batch norm needs at least two rows in train mode.
      if (n < 2) break;
      std::span<const std::size_t> bx(first.data() + s, n), by(second.data() + s, n);
      const Tensor fx = bank.gather(bx), fy = bank.gather(by);
      const auto lx = bank.gather_labels(bx), ly = bank.gather_labels(by);

      // Classifier step.
      std::uint64_t ops_before = cfg.verify_decoupling ? checksum(oparams) : 0;
      {
        ad::Tape t;
        Var loss = classifier_loss(t, model.classifier, t.constant(fx), t.constant(fy), lx, ly,
                                   mask);
        detail::require_finite(loss.value().item(), "classifier loss", e, res.steps);
        c_opt.zero_grad();
        t.backward(loss);
        c_opt.step();
        log.classifier_loss += loss.value().item();
      }
      if (cfg.verify_decoupling && checksum(oparams) != ops_before) {
        ++res.operators_moved_by_classifier_steps;
      }

      // Operator step, C frozen.
      std::uint64_t c_before = cfg.verify_decoupling ? checksum(cparams) : 0;
      {
        ad::Tape t;
        auto ctx = ForwardContext::train(drop_rng);
        auto terms = laso_objective(t, model, ctx, t.constant(fx), t.constant(fy), lx, ly, mask,
                                    cfg.loss);
        detail::require_finite(terms.total.value().item(), "operator objective", e, res.steps);
        o_opt.zero_grad();
        t.backward(terms.total);
        o_opt.step();
        log.laso += terms.laso.value().item();
        log.sym += terms.sym.value().item();
        log.mc += terms.mc.value().item();
        log.total += terms.total.value().item();
      }
      if (cfg.verify_decoupling && checksum(cparams) != c_before) {
        ++res.classifier_moved_by_laso_steps;
      }
      ++batches;
      ++res.steps;
    }
    if (batches == 0) throw ConfigError("train_laso: no batch with >= 2 pairs");
    const double inv = 1.0 / static_cast<double>(batches);
    log.classifier_loss *= inv;
    log.laso *= inv;
    log.sym *= inv;
    log.mc *= inv;
    log.total *= inv;
    const double lr = sched.step(log.total);
    c_opt.set_learning_rate(lr);
    o_opt.set_learning_rate(lr);
    res.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return res;
}

}  // namespace laso
