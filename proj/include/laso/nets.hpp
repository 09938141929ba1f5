#pragma once

// Operator networks, the linear classifier, and the fixed analytic
// operators that stand in for them.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "laso/autodiff.hpp"
#include "laso/errors.hpp"
#include "laso/rng.hpp"
#include "laso/tensor.hpp"

namespace laso {

using ad::Mode;
using ad::Tape;
using ad::Var;

enum class SetOp { kIntersection, kUnion, kSubtraction };

inline constexpr SetOp kAllSetOps[] = {SetOp::kIntersection, SetOp::kUnion,
                                       SetOp::kSubtraction};

inline const char* set_op_name(SetOp op) {
  switch (op) {
    case SetOp::kIntersection: return "int";
    case SetOp::kUnion: return "uni";
    case SetOp::kSubtraction: return "sub";
  }
  return "?";
}

enum class Activation { kLeakyRelu, kRelu };

namespace detail {
inline Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(rng, -bound, bound);
  t.set_requires_grad(true);
  return t;
}

inline Tensor trainable(Shape shape, double fill) {
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

inline Var link(Tape& tape, Tensor& t, bool track) {
  return track ? tape.param(t) : tape.constant(Tensor(t.shape(), t.values()));
}

inline Var link(Tape& tape, const Tensor& t) {
  return tape.constant(Tensor(t.shape(), t.values()));
}
}  // namespace detail

/// kUniform: weights U(±1/√in). kIdentity: a structured pass-through
/// (weight[r][c] = 1 when c mod out = r, so square layers start as the
/// identity and 2d→d layers as the sum of the two halves) plus uniform
/// noise scaled by `init_noise`. Directions the training data never
/// excites keep passing through, which is what lets the operators act on
/// labels absent from training.
enum class WeightInit { kUniform, kIdentity };

/// Fully-connected layer, batch norm, activation, then dropout.
struct MlpBlock {
  Tensor weight;        // out × in
  Tensor bias;          // out
  Tensor bn_gamma;      // out
  Tensor bn_beta;       // out
  Tensor running_mean;  // out
  Tensor running_var;   // out
  Activation activation = Activation::kLeakyRelu;
  double dropout_rate = 0.0;
  double leaky_slope = 0.01;

  static MlpBlock create(std::size_t in, std::size_t out, Activation act, double dropout,
                         double slope, Rng& rng, WeightInit init = WeightInit::kUniform,
                         double init_noise = 1.0) {
    MlpBlock b;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    b.weight = detail::uniform_init(Shape{out, in}, bound, rng);
    b.bias = detail::uniform_init(Shape{out}, bound, rng);
    if (init == WeightInit::kIdentity) {
      for (std::size_t r = 0; r < out; ++r) {
        for (std::size_t c = 0; c < in; ++c) {
          double& w = b.weight.at(r, c);
          w = init_noise * w + (c % out == r ? 1.0 : 0.0);
        }
      }
    }
    b.bn_gamma = detail::trainable(Shape{out}, 1.0);
    b.bn_beta = detail::trainable(Shape{out}, 0.0);
    b.running_mean = Tensor(Shape{out}, 0.0);
    b.running_var = Tensor(Shape{out}, 1.0);
    b.activation = act;
    b.dropout_rate = dropout;
    b.leaky_slope = slope;
    return b;
  }

  std::size_t in_dim() const { return weight.shape()[1]; }
  std::size_t out_dim() const { return weight.shape()[0]; }

  /// Train-mode forward. Updates the running statistics.
  Var forward_train(Tape& tape, const Var& x, const Tensor* mask, bool track = true) {
    Var h = ad::add_bias(ad::matmul(x, detail::link(tape, weight, track), true),
                         detail::link(tape, bias, track));
    h = ad::batch_norm_train(h, detail::link(tape, bn_gamma, track),
                             detail::link(tape, bn_beta, track), running_mean, running_var);
    h = activate(h);
    return ad::dropout(h, mask, Mode::kTrain);
  }

  /// Eval-mode forward on parameters linked as tape leaves, so gradients
  /// can still reach them (used by finite-difference checks).
  Var forward_eval(Tape& tape, const Var& x, bool track) {
    Var h = ad::add_bias(ad::matmul(x, detail::link(tape, weight, track), true),
                         detail::link(tape, bias, track));
    h = ad::batch_norm_eval(h, detail::link(tape, bn_gamma, track),
                            detail::link(tape, bn_beta, track), running_mean, running_var);
    return activate(h);
  }

  Var forward_eval(Tape& tape, const Var& x) const {
    Var h = ad::add_bias(ad::matmul(x, detail::link(tape, weight), true),
                         detail::link(tape, bias));
    h = ad::batch_norm_eval(h, detail::link(tape, bn_gamma), detail::link(tape, bn_beta),
                            running_mean, running_var);
    return activate(h);
  }

  Var activate(const Var& h) const {
    return activation == Activation::kRelu ? ad::relu(h) : ad::leaky_relu(h, leaky_slope);
  }
};

struct NetConfig {
  std::size_t feature_dim = 64;
  std::size_t blocks = 3;  // 3 or 4
  double dropout = 0.3;
  double leaky_slope = 0.01;
  bool final_relu = true;  // last block: plain ReLU, no dropout
  WeightInit init = WeightInit::kIdentity;
  double init_noise = 0.1;
};

/// Per-invocation dropout masks, one per block. Reusing one instance across
/// several calls of the same network replays the same dropout realization.
struct DropoutMasks {
  std::vector<Tensor> per_block;
};

/// One label-set operator M(F_X, F_Y): an MLP over the concatenated pair.
class LasoOperatorNet {
 public:
  LasoOperatorNet() = default;

  static LasoOperatorNet create(const NetConfig& cfg, Rng& rng) {
    if (cfg.feature_dim == 0) throw ConfigError("LasoOperatorNet: feature_dim must be positive");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) {
      throw ConfigError("LasoOperatorNet: dropout must lie in [0, 1)");
    }
    if (!(cfg.init_noise >= 0.0) || !std::isfinite(cfg.init_noise)) {
      throw ConfigError("LasoOperatorNet: init_noise must be finite and >= 0");
    }
    if (cfg.blocks != 3 && cfg.blocks != 4) {
      throw ConfigError("LasoOperatorNet: blocks must be 3 or 4, got " + std::to_string(cfg.blocks));
    }
    const std::size_t d = cfg.feature_dim;
    std::vector<std::size_t> widths = {2 * d, 2 * d, d, d};
    if (cfg.blocks == 4) widths = {2 * d, 2 * d, 2 * d, d, d};
    LasoOperatorNet net;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool last = i + 2 == widths.size();
      const bool plain = last && cfg.final_relu;
      net.blocks_.push_back(MlpBlock::create(widths[i], widths[i + 1],
                                             plain ? Activation::kRelu : Activation::kLeakyRelu,
                                             plain ? 0.0 : cfg.dropout, cfg.leaky_slope, rng,
                                             cfg.init, cfg.init_noise));
    }
    net.final_relu_ = cfg.final_relu;
    return net;
  }

  /// Rebuilds a network from already-populated blocks (checkpoint load).
  static LasoOperatorNet from_blocks(std::vector<MlpBlock> blocks, bool final_relu) {
    LasoOperatorNet net;
    net.blocks_ = std::move(blocks);
    net.final_relu_ = final_relu;
    net.validate();
    return net;
  }

  std::size_t feature_dim() const { return blocks_.empty() ? 0 : blocks_.back().out_dim(); }
  bool final_relu() const { return final_relu_; }
  std::vector<MlpBlock>& blocks() { return blocks_; }
  const std::vector<MlpBlock>& blocks() const { return blocks_; }

  /// Train-mode forward on a batch of pairs. Masks are drawn from `rng` on
  /// first use and reused by later calls sharing `masks`.
  Var forward_train(Tape& tape, const Var& fx, const Var& fy, DropoutMasks& masks, Rng& rng,
                    bool track = true) {
    check_inputs(fx, fy);
    Var h = ad::concat_lastdim(fx, fy);
    const std::size_t rows = fx.shape()[0];
    if (masks.per_block.empty()) {
      for (const auto& b : blocks_) {
        masks.per_block.push_back(b.dropout_rate > 0
                                      ? ad::dropout_mask(Shape{rows, b.out_dim()}, b.dropout_rate, rng)
                                      : Tensor());
      }
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const Tensor& m = masks.per_block[i];
      h = blocks_[i].forward_train(tape, h, m.numel() ? &m : nullptr, track);
    }
    return h;
  }

  /// Eval-mode forward with parameters as tape leaves.
  Var forward_eval(Tape& tape, const Var& fx, const Var& fy, bool track) {
    check_inputs(fx, fy);
    Var h = ad::concat_lastdim(fx, fy);
    for (auto& b : blocks_) h = b.forward_eval(tape, h, track);
    return h;
  }

  /// Eval-mode forward without gradient tracking.
  Var forward_eval(Tape& tape, const Var& fx, const Var& fy) const {
    check_inputs(fx, fy);
    Var h = ad::concat_lastdim(fx, fy);
    for (const auto& b : blocks_) h = b.forward_eval(tape, h);
    return h;
  }

  /// Eval-mode application to row-aligned pair matrices (B×d each).
  Tensor apply(const Tensor& fx, const Tensor& fy) const {
    Tape tape;
    return forward_eval(tape, tape.constant(fx), tape.constant(fy)).value();
  }

  /// Trainable tensors, prefixed for diagnostics.
  std::vector<NamedParam> params(const std::string& prefix) {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = prefix + ".block" + std::to_string(i) + ".";
      out.push_back({p + "weight", &blocks_[i].weight});
      out.push_back({p + "bias", &blocks_[i].bias});
      out.push_back({p + "bn_gamma", &blocks_[i].bn_gamma});
      out.push_back({p + "bn_beta", &blocks_[i].bn_beta});
    }
    return out;
  }

  /// Trainable tensors plus running statistics.
  std::vector<NamedParam> state(const std::string& prefix) {
    auto out = params(prefix);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = prefix + ".block" + std::to_string(i) + ".";
      out.push_back({p + "running_mean", &blocks_[i].running_mean});
      out.push_back({p + "running_var", &blocks_[i].running_var});
    }
    return out;
  }

 private:
  void check_inputs(const Var& fx, const Var& fy) const {
    const std::size_t d = feature_dim();
    if (fx.shape().size() != 2 || fy.shape().size() != 2 || fx.shape()[1] != d ||
        fy.shape()[1] != d || fx.shape()[0] != fy.shape()[0]) {
      throw ShapeError("laso_forward: inputs " + shape_str(fx.shape()) + " and " +
                       shape_str(fy.shape()) + " do not match feature dim " + std::to_string(d));
    }
  }

  void validate() const {
    if (blocks_.empty()) throw FormatError("LasoOperatorNet: no blocks");
    if (blocks_.front().in_dim() != 2 * blocks_.back().out_dim()) {
      throw FormatError("LasoOperatorNet: first block input must be twice the output dim");
    }
    for (std::size_t i = 0; i + 1 < blocks_.size(); ++i) {
      if (blocks_[i].out_dim() != blocks_[i + 1].in_dim()) {
        throw FormatError("LasoOperatorNet: block widths do not chain at block " +
                          std::to_string(i));
      }
    }
    for (const auto& b : blocks_) {
      const std::size_t o = b.out_dim();
      if (b.bias.numel() != o || b.bn_gamma.numel() != o || b.bn_beta.numel() != o ||
          b.running_mean.numel() != o || b.running_var.numel() != o) {
        throw FormatError("LasoOperatorNet: block parameter sizes disagree");
      }
    }
  }

  std::vector<MlpBlock> blocks_;
  bool final_relu_ = true;
};

/// Linear multi-label scorer s = W f + b over the feature space.
class LinearClassifier {
 public:
  LinearClassifier() = default;

  static LinearClassifier zeros(std::size_t feature_dim, std::size_t label_count) {
    LinearClassifier c;
    c.weight = detail::trainable(Shape{label_count, feature_dim}, 0.0);
    c.bias = detail::trainable(Shape{label_count}, 0.0);
    return c;
  }

  static LinearClassifier create(std::size_t feature_dim, std::size_t label_count, Rng& rng) {
    LinearClassifier c;
    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    c.weight = detail::uniform_init(Shape{label_count, feature_dim}, bound, rng);
    c.bias = detail::uniform_init(Shape{label_count}, bound, rng);
    return c;
  }

  std::size_t feature_dim() const { return weight.shape().at(1); }
  std::size_t label_count() const { return weight.shape().at(0); }

  /// `track` = false freezes the classifier: gradient passes through to the
  /// input but never reaches W or b.
  Var forward(Tape& tape, const Var& f, bool track = true) {
    check(f.shape());
    return ad::add_bias(ad::matmul(f, detail::link(tape, weight, track), true),
                        detail::link(tape, bias, track));
  }

  Var forward(Tape& tape, const Var& f) const {
    check(f.shape());
    return ad::add_bias(ad::matmul(f, detail::link(tape, weight), true),
                        detail::link(tape, bias));
  }

  /// Scores for a batch (B×d) -> (B×L).
  Tensor scores(const Tensor& features) const {
    Tape tape;
    return forward(tape, tape.constant(features)).value();
  }

  std::vector<NamedParam> params(const std::string& prefix) {
    return {{prefix + ".weight", &weight}, {prefix + ".bias", &bias}};
  }

  Tensor weight;  // L × d
  Tensor bias;    // L

 private:
  void check(const Shape& s) const {
    if (s.size() != 2 || s[1] != feature_dim()) {
      throw ShapeError("classify: features " + shape_str(s) + " do not match classifier dim " +
                       std::to_string(feature_dim()));
    }
  }
};

/// Score vector for a single feature vector.
inline std::vector<double> classify(const LinearClassifier& c, std::span<const double> f) {
  if (f.size() != c.feature_dim()) {
    throw ShapeError("classify: feature length " + std::to_string(f.size()) +
                     " does not match classifier dim " + std::to_string(c.feature_dim()));
  }
  const auto s = c.scores(Tensor::row(f));
  return s.values();
}

/// The three operator networks plus the classifier.
struct LasoModel {
  std::size_t feature_dim = 0;
  std::size_t label_count = 0;
  LasoOperatorNet inter;
  LasoOperatorNet uni;
  LasoOperatorNet sub;
  LinearClassifier classifier;

  static LasoModel create(const NetConfig& cfg, std::size_t label_count, Rng& rng) {
    LasoModel m;
    m.feature_dim = cfg.feature_dim;
    m.label_count = label_count;
    m.inter = LasoOperatorNet::create(cfg, rng);
    m.uni = LasoOperatorNet::create(cfg, rng);
    m.sub = LasoOperatorNet::create(cfg, rng);
    m.classifier = LinearClassifier::create(cfg.feature_dim, label_count, rng);
    return m;
  }

  LasoOperatorNet& net(SetOp op) {
    switch (op) {
      case SetOp::kIntersection: return inter;
      case SetOp::kUnion: return uni;
      case SetOp::kSubtraction: return sub;
    }
    return inter;
  }
  const LasoOperatorNet& net(SetOp op) const {
    return const_cast<LasoModel*>(this)->net(op);
  }

  std::vector<NamedParam> operator_params() {
    auto out = inter.params("inter");
    for (auto& p : uni.params("uni")) out.push_back(p);
    for (auto& p : sub.params("sub")) out.push_back(p);
    return out;
  }

  std::vector<NamedParam> classifier_params() { return classifier.params("classifier"); }
};

// ---------------------------------------------------------------------------
// Analytic operators

enum class AnalyticVariant {
  kArithmetic = 1,  // x+y, x*y, x-y
  kMinMax = 2,      // max, min, relu(x-y)
};

inline double analytic_value(SetOp op, AnalyticVariant v, double x, double y) {
  if (v == AnalyticVariant::kArithmetic) {
    switch (op) {
      case SetOp::kUnion: return x + y;
      case SetOp::kIntersection: return x * y;
      case SetOp::kSubtraction: return x - y;
    }
  }
  switch (op) {
    case SetOp::kUnion: return x >= y ? x : y;
    case SetOp::kIntersection: return x <= y ? x : y;
    case SetOp::kSubtraction: return x - y > 0 ? x - y : 0.0;
  }
  return 0.0;
}

inline std::vector<double> analytic_op(SetOp op, AnalyticVariant v, std::span<const double> fx,
                                       std::span<const double> fy) {
  if (fx.size() != fy.size()) {
    throw ShapeError("analytic_op: feature lengths " + std::to_string(fx.size()) + " and " +
                     std::to_string(fy.size()) + " differ");
  }
  std::vector<double> out(fx.size());
  for (std::size_t i = 0; i < fx.size(); ++i) out[i] = analytic_value(op, v, fx[i], fy[i]);
  return out;
}

inline Tensor analytic_op(SetOp op, AnalyticVariant v, const Tensor& fx, const Tensor& fy) {
  if (fx.shape() != fy.shape()) {
    throw ShapeError("analytic_op: shapes " + shape_str(fx.shape()) + " and " +
                     shape_str(fy.shape()) + " differ");
  }
  Tensor out(fx.shape());
  for (std::size_t i = 0; i < fx.numel(); ++i) out[i] = analytic_value(op, v, fx[i], fy[i]);
  return out;
}

/// Either the learned networks of a model or a fixed analytic variant,
/// applied batch-wise to row-aligned pairs.
class PairOperators {
 public:
  static PairOperators learned(const LasoModel& model) {
    PairOperators p;
    p.model_ = &model;
    return p;
  }
  static PairOperators analytic(AnalyticVariant v = AnalyticVariant::kMinMax) {
    PairOperators p;
    p.variant_ = v;
    return p;
  }

  bool is_learned() const { return model_ != nullptr; }

  Tensor apply(SetOp op, const Tensor& fx, const Tensor& fy) const {
    if (model_) return model_->net(op).apply(fx, fy);
    return analytic_op(op, variant_, fx, fy);
  }

  std::string name() const {
    if (model_) return "learned";
    return variant_ == AnalyticVariant::kMinMax ? "analytic" : "analytic1";
  }

 private:
  const LasoModel* model_ = nullptr;
  AnalyticVariant variant_ = AnalyticVariant::kMinMax;
};

}  // namespace laso
