#pragma once

// Classifier loss, the set-operation loss through a frozen classifier, and
// the two reconstruction terms (argument-order symmetry and mode-collapse
// reconstruction). All batch losses average per-sample values over rows.

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "laso/autodiff.hpp"
#include "laso/labels.hpp"
#include "laso/nets.hpp"

namespace laso {

struct LossWeights {
  double laso = 1.0;
  double sym = 1.0;
  double mc = 1.0;

  void validate() const {
    for (double w : {laso, sym, mc}) {
      if (!std::isfinite(w) || w < 0.0) {
        throw ConfigError("loss weights must be finite and non-negative");
      }
    }
  }
};

struct LossOptions {
  LossWeights weights;
  // The symmetry term uses the plain (unsquared) L2 norm unless set.
  bool square_sym_norm = false;
};

/// -Σ_i [l_i log σ(s_i) + (1-l_i) log(1-σ(s_i))] for one score vector.
inline double bce_value(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size()) {
    throw ShapeError("bce: scores have length " + std::to_string(scores.size()) +
                     ", labels " + std::to_string(targets.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    acc += (std::max(s, 0.0) - targets[i] * s) + std::log1p(std::exp(-std::abs(s)));
  }
  return acc;
}

/// Batch BCE: per-row class sums, averaged over rows.
inline Var bce(const Var& scores, const Tensor& targets, std::span<const double> class_mask = {}) {
  for (double l : targets.data()) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("bce: label entries must lie in [0, 1]");
  }
  return ad::mean(ad::bce_with_logits(scores, targets, class_mask));
}

/// Stacks label vectors into a B×L 0/1 matrix.
inline Tensor label_matrix(std::span<const LabelVec> labels) {
  if (labels.empty()) return Tensor::matrix(0, 0);
  const std::size_t L = labels.front().size();
  Tensor t = Tensor::matrix(labels.size(), L);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r].size() != L) throw ShapeError("label_matrix: ragged label vectors");
    for (std::size_t k = 0; k < L; ++k) t.at(r, k) = labels[r].test(k) ? 1.0 : 0.0;
  }
  return t;
}

/// Row-wise exact set operation over two label batches.
inline std::vector<LabelVec> apply_set_op(SetOp op, std::span<const LabelVec> a,
                                          std::span<const LabelVec> b) {
  if (a.size() != b.size()) throw ShapeError("apply_set_op: batch sizes differ");
  std::vector<LabelVec> out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (op) {
      case SetOp::kIntersection: out.push_back(set_intersection(a[i], b[i])); break;
      case SetOp::kUnion: out.push_back(set_union(a[i], b[i])); break;
      case SetOp::kSubtraction: out.push_back(set_subtraction(a[i], b[i])); break;
    }
  }
  return out;
}

/// BCE(C(F_X), L(X)) + BCE(C(F_Y), L(Y)), gradients into C.
inline Var classifier_loss(Tape& tape, LinearClassifier& c, const Var& fx, const Var& fy,
                           std::span<const LabelVec> lx, std::span<const LabelVec> ly,
                           std::span<const double> class_mask = {}) {
  Var a = bce(c.forward(tape, fx, true), label_matrix(lx), class_mask);
  Var b = bce(c.forward(tape, fy, true), label_matrix(ly), class_mask);
  return ad::add(a, b);
}

/// Set-operation loss through a frozen classifier: gradients reach the
/// operator outputs but never C.
inline Var laso_loss(Tape& tape, const LinearClassifier& c, const Var& z_int, const Var& z_uni,
                     const Var& z_sub, std::span<const LabelVec> lx, std::span<const LabelVec> ly,
                     std::span<const double> class_mask = {}) {
  auto term = [&](const Var& z, SetOp op) {
    return bce(c.forward(tape, z), label_matrix(apply_set_op(op, lx, ly)), class_mask);
  };
  return ad::add(ad::add(term(z_int, SetOp::kIntersection), term(z_uni, SetOp::kUnion)),
                 term(z_sub, SetOp::kSubtraction));
}

/// Runs operator networks in one mode. In train mode every network draws
/// its dropout masks once and replays them on later calls, so both argument
/// orders of a pair see the same realization.
class ForwardContext {
 public:
  static ForwardContext train(Rng& rng, bool track = true) {
    ForwardContext c;
    c.mode_ = Mode::kTrain;
    c.rng_ = &rng;
    c.track_ = track;
    return c;
  }
  static ForwardContext eval(bool track = true) {
    ForwardContext c;
    c.mode_ = Mode::kEval;
    c.track_ = track;
    return c;
  }

  Var run(Tape& tape, LasoOperatorNet& net, const Var& a, const Var& b) {
    if (mode_ == Mode::kEval) return net.forward_eval(tape, a, b, track_);
    return net.forward_train(tape, a, b, masks_[&net], *rng_, track_);
  }

  Mode mode() const { return mode_; }

 private:
  Mode mode_ = Mode::kEval;
  Rng* rng_ = nullptr;
  bool track_ = true;
  std::map<const LasoOperatorNet*, DropoutMasks> masks_;
};

/// Mean over rows of (1/n)·‖a_r − b_r‖₂ (or its square).
inline Var scaled_row_distance(const Var& a, const Var& b, bool squared) {
  const double n = static_cast<double>(a.shape().at(1));
  Var sq = ad::sum_rows(ad::square(ad::sub(a, b)));
  Var per_row = squared ? sq : ad::sqrt(sq);
  return ad::scale(ad::mean(per_row), 1.0 / n);
}

/// Symmetry term given both argument orders of M_int and M_uni.
inline Var sym_loss(const Var& z_int, const Var& z_int_swapped, const Var& z_uni,
                    const Var& z_uni_swapped, bool squared = false) {
  return ad::add(scaled_row_distance(z_int, z_int_swapped, squared),
                 scaled_row_distance(z_uni, z_uni_swapped, squared));
}

inline Var sym_loss(Tape& tape, ForwardContext& ctx, LasoOperatorNet& m_int,
                    LasoOperatorNet& m_uni, const Var& fx, const Var& fy, bool squared = false) {
  return sym_loss(ctx.run(tape, m_int, fx, fy), ctx.run(tape, m_int, fy, fx),
                  ctx.run(tape, m_uni, fx, fy), ctx.run(tape, m_uni, fy, fx), squared);
}

/// Mode-collapse reconstruction given the two reconstructions of the inputs.
inline Var mc_loss(const Var& fx, const Var& fy, const Var& recon_x, const Var& recon_y) {
  return ad::add(scaled_row_distance(fx, recon_x, true), scaled_row_distance(fy, recon_y, true));
}

/// Mode-collapse reconstruction:
/// (1/n)‖F_X − M_uni(Z_sub, Z_int)‖² + (1/n)‖F_Y − M_uni(M_sub(F_Y, F_X), Z_int)‖².
/// M_sub runs a second time with swapped arguments.
inline Var mc_loss(Tape& tape, ForwardContext& ctx, LasoOperatorNet& m_uni,
                   LasoOperatorNet& m_sub, const Var& fx, const Var& fy, const Var& z_int,
                   const Var& z_sub) {
  Var recon_x = ctx.run(tape, m_uni, z_sub, z_int);
  Var sub_yx = ctx.run(tape, m_sub, fy, fx);
  Var recon_y = ctx.run(tape, m_uni, sub_yx, z_int);
  return mc_loss(fx, fy, recon_x, recon_y);
}

inline Var total_laso_objective(const LossWeights& w, const Var& laso, const Var& sym,
                                const Var& mc) {
  return ad::add(ad::add(ad::scale(laso, w.laso), ad::scale(sym, w.sym)), ad::scale(mc, w.mc));
}

struct LasoLossTerms {
  Var laso;
  Var sym;
  Var mc;
  Var total;
};

/// Full operator-network objective for one batch of pairs. The classifier
/// is always frozen here.
inline LasoLossTerms laso_objective(Tape& tape, LasoModel& model, ForwardContext& ctx,
                                    const Var& fx, const Var& fy, std::span<const LabelVec> lx,
                                    std::span<const LabelVec> ly,
                                    std::span<const double> class_mask,
                                    const LossOptions& opts) {
  Var z_int = ctx.run(tape, model.inter, fx, fy);
  Var z_uni = ctx.run(tape, model.uni, fx, fy);
  Var z_sub = ctx.run(tape, model.sub, fx, fy);
  LasoLossTerms t;
  t.laso = laso_loss(tape, model.classifier, z_int, z_uni, z_sub, lx, ly, class_mask);
  t.sym = sym_loss(z_int, ctx.run(tape, model.inter, fy, fx), z_uni,
                   ctx.run(tape, model.uni, fy, fx), opts.square_sym_norm);
  t.mc = mc_loss(tape, ctx, model.uni, model.sub, fx, fy, z_int, z_sub);
  t.total = total_laso_objective(opts.weights, t.laso, t.sym, t.mc);
  return t;
}

}  // namespace laso
