#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "laso/errors.hpp"
#include "laso/tensor.hpp"

namespace laso {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed, ordered parameter group.
class Adam {
 public:
  explicit Adam(std::vector<NamedParam> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    first_.reserve(params_.size());
    second_.reserve(params_.size());
    for (const auto& p : params_) {
      first_.emplace_back(p.tensor->numel(), 0.0);
      second_.emplace_back(p.tensor->numel(), 0.0);
    }
  }

  /// Applies one update from the parameters' accumulated grads. Grads are
  /// validated up front: a non-finite entry throws before anything moves.
  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& p = params_[i];
      if (p.tensor->numel() != first_[i].size()) {
        throw ShapeError("adam: parameter '" + p.name + "' changed shape to " +
                         shape_str(p.tensor->shape()));
      }
      if (!p.tensor->has_grad()) continue;
      for (double g : p.tensor->grad()) {
        if (!std::isfinite(g)) {
          throw NumericError("adam: non-finite gradient in parameter '" + p.name + "'");
        }
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& t = *params_[i].tensor;
      if (!t.has_grad()) continue;
      const auto& g = t.grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t k = 0; k < g.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        t[k] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

  double learning_rate() const { return cfg_.learning_rate; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  std::size_t step_count() const { return step_; }
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t step_ = 0;
};

/// Plain SGD without momentum.
class Sgd {
 public:
  Sgd(std::vector<NamedParam> params, double lr) : params_(std::move(params)), lr_(lr) {}

  void step() {
    for (const auto& p : params_) {
      if (!p.tensor->has_grad()) continue;
      for (double g : p.tensor->grad()) {
        if (!std::isfinite(g)) {
          throw NumericError("sgd: non-finite gradient in parameter '" + p.name + "'");
        }
      }
    }
    for (auto& p : params_) {
      if (!p.tensor->has_grad()) continue;
      const auto& g = p.tensor->grad();
      for (std::size_t k = 0; k < g.size(); ++k) (*p.tensor)[k] -= lr_ * g[k];
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

 private:
  std::vector<NamedParam> params_;
  double lr_;
};

struct PlateauConfig {
  double factor = 0.3;
  std::size_t patience = 5;
  double threshold = 1e-4;
};

/// Reduce-on-plateau for a minimized quantity. An epoch counts as an
/// improvement only if it beats the best value by strictly more than
/// `threshold`; after `patience` consecutive non-improving epochs the rate
/// is multiplied by `factor` and the counter restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, PlateauConfig cfg = {}) : lr_(initial_lr), cfg_(cfg) {
    if (!(cfg.factor > 0.0 && cfg.factor < 1.0)) {
      throw ConfigError("plateau: factor must lie in (0, 1)");
    }
  }

  double step(double epoch_loss) {
    if (best_ - epoch_loss > cfg_.threshold) {
      best_ = epoch_loss;
      bad_epochs_ = 0;
      return lr_;
    }
    if (++bad_epochs_ >= cfg_.patience) {
      lr_ *= cfg_.factor;
      bad_epochs_ = 0;
      ++reductions_;
    }
    return lr_;
  }

  double learning_rate() const { return lr_; }
  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_epochs_; }
  std::size_t reductions() const { return reductions_; }

 private:
  double lr_;
  PlateauConfig cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
  std::size_t reductions_ = 0;
};

}  // namespace laso
