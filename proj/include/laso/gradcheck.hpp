#pragma once

// Central finite-difference checks for every tape primitive, every loss,
// and random composite graphs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "laso/autodiff.hpp"
#include "laso/losses.hpp"
#include "laso/nets.hpp"

namespace laso {

struct GradCheckConfig {
  std::uint64_t seed = 1234;
  std::size_t instances_per_case = 4;
  std::size_t composite_graphs = 60;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Instances whose non-smooth ops sit closer than this to a kink are
  // redrawn: central differences straddling a kink are meaningless.
  double min_kink_margin = 1e-3;
  std::size_t max_redraws = 20;
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t rejected = 0;  // redrawn for sitting on a kink
  double max_rel_error = 0.0;
  bool passed(double tol) const { return checked > 0 && max_rel_error < tol; }
};

struct GradCheckReport {
  std::vector<GradCheckResult> results;
  double tolerance = 0.0;
  double seconds = 0.0;

  std::size_t instances() const {
    std::size_t n = 0;
    for (const auto& r : results) n += r.checked;
    return n;
  }
  bool passed() const {
    return !results.empty() &&
           std::all_of(results.begin(), results.end(),
                       [&](const GradCheckResult& r) { return r.passed(tolerance); });
  }
};

/// One checkable scalar function of some leaf tensors. `build` records the
/// function on a fresh tape; it must be a pure function of the leaves.
struct GradInstance {
  std::vector<Tensor*> leaves;
  std::function<Var(ad::Tape&)> build;
  std::shared_ptr<void> storage;  // keeps leaves and captured state alive
};

/// ‖a − n‖ / max(‖a‖, ‖n‖, 1e-4).
inline double gradient_rel_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-4});
}

/// Relative error of the tape gradient against central differences, or -1
/// when the instance sits near a kink or a perturbation crosses one. Batch
/// norm over few rows can amplify a step far past the margin, so the side
/// pattern of every perturbed evaluation is compared as well.
inline double check_instance(const GradInstance& inst, const GradCheckConfig& cfg) {
  for (Tensor* t : inst.leaves) t->zero_grad();
  ad::Tape tape;
  Var loss = inst.build(tape);
  if (tape.kink_margin() < cfg.min_kink_margin) return -1.0;
  const std::uint64_t sides = tape.kink_sides();
  tape.backward(loss);
  std::vector<double> analytic, numeric;
  for (Tensor* t : inst.leaves) {
    analytic.insert(analytic.end(), t->grad().begin(), t->grad().end());
  }
  bool crossed = false;
  auto value = [&] {
    ad::Tape t;
    const double v = inst.build(t).value().item();
    crossed = crossed || t.kink_sides() != sides;
    return v;
  };
  for (Tensor* t : inst.leaves) {
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const double saved = (*t)[i];
      (*t)[i] = saved + cfg.step;
      const double up = value();
      (*t)[i] = saved - cfg.step;
      const double down = value();
      (*t)[i] = saved;
      numeric.push_back((up - down) / (2.0 * cfg.step));
    }
  }
  if (crossed) return -1.0;
  return gradient_rel_error(analytic, numeric);
}

namespace gradcheck_detail {

struct Leaves {
  std::vector<Tensor> tensors;

  Tensor& add(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = uniform(rng, lo, hi);
    t.set_requires_grad(true);
    tensors.push_back(std::move(t));
    return tensors.back();
  }
};

/// Wraps a builder over freshly drawn leaves; non-scalar outputs are
/// reduced with a fixed random weighting so every output entry matters.
using CaseFn = std::function<GradInstance(Rng&)>;

inline Var weighted_sum(ad::Tape& tape, const Var& y, const Tensor& w) {
  return ad::sum(ad::mul(y, tape.constant(w)));
}

inline Tensor random_weights(const Shape& s, Rng& rng) {
  Tensor w(s);
  for (auto& v : w.values()) v = uniform(rng, -1.0, 1.0);
  return w;
}

inline std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + uniform_index(rng, hi - lo + 1);
}

/// Instance over `n` leaf matrices of one shape, through a function
/// producing a tensor that gets reduced by random weights.
template <typename F>
GradInstance elementwise_case(Rng& rng, std::size_t n, double lo, double hi, F f) {
  auto store = std::make_shared<std::pair<Leaves, Tensor>>();
  const Shape s{dim(rng, 1, 5), dim(rng, 1, 5)};
  store->first.tensors.reserve(n);
  for (std::size_t i = 0; i < n; ++i) store->first.add(s, rng, lo, hi);
  GradInstance inst;
  for (auto& t : store->first.tensors) inst.leaves.push_back(&t);
  auto* st = store.get();
  inst.build = [st, f, s](ad::Tape& tape) mutable {
    std::vector<Var> vars;
    for (auto& t : st->first.tensors) vars.push_back(tape.param(t));
    Var y = f(vars);
    if (st->second.numel() == 0) {
      Rng wr(static_cast<std::uint64_t>(y.value().numel()) * 7919u);
      st->second = random_weights(y.shape(), wr);
    }
    return weighted_sum(tape, y, st->second);
  };
  inst.storage = store;
  return inst;
}

inline std::vector<LabelVec> random_labels(std::size_t rows, std::size_t L, Rng& rng) {
  std::vector<LabelVec> out;
  for (std::size_t r = 0; r < rows; ++r) {
    LabelVec v(L);
    for (std::size_t k = 0; k < L; ++k) v.set(k, uniform01(rng) < 0.4);
    out.push_back(v);
  }
  return out;
}

/// Shared fixture for loss checks: a small model and a batch of pairs.
struct LossFixture {
  LasoModel model;
  Tensor fx, fy;
  std::vector<LabelVec> lx, ly;
  std::vector<double> mask;
  std::uint64_t dropout_seed = 0;

  static std::shared_ptr<LossFixture> make(Rng& rng) {
    auto f = std::make_shared<LossFixture>();
    const std::size_t d = dim(rng, 3, 5), L = dim(rng, 2, 4), rows = dim(rng, 3, 5);
    NetConfig cfg;
    cfg.feature_dim = d;
    // Fully random weights exercise more of each net than the structured
    // default does.
    cfg.init = WeightInit::kUniform;
    f->model = LasoModel::create(cfg, L, rng);
    f->fx = Tensor::matrix(rows, d);
    f->fy = Tensor::matrix(rows, d);
    for (auto& v : f->fx.values()) v = uniform(rng, 0.0, 1.0);
    for (auto& v : f->fy.values()) v = uniform(rng, 0.0, 1.0);
    f->fx.set_requires_grad(true);
    f->fy.set_requires_grad(true);
    f->lx = random_labels(rows, L, rng);
    f->ly = random_labels(rows, L, rng);
    f->mask.assign(L, 1.0);
    f->mask[uniform_index(rng, L)] = 0.0;
    f->dropout_seed = rng();
    return f;
  }

  std::vector<Tensor*> operator_leaves() {
    std::vector<Tensor*> out = {&fx, &fy};
    for (auto& p : model.operator_params()) out.push_back(p.tensor);
    return out;
  }
};

inline std::vector<std::pair<std::string, CaseFn>> primitive_cases() {
  using V = std::vector<Var>;
  std::vector<std::pair<std::string, CaseFn>> c;
  auto ew = [&](std::string name, std::size_t n, double lo, double hi,
                std::function<Var(V&)> f) {
    c.emplace_back(std::move(name),
                   [=](Rng& rng) { return elementwise_case(rng, n, lo, hi, f); });
  };
  ew("add", 2, -1, 1, [](V& v) { return ad::add(v[0], v[1]); });
  ew("sub", 2, -1, 1, [](V& v) { return ad::sub(v[0], v[1]); });
  ew("mul", 2, -1, 1, [](V& v) { return ad::mul(v[0], v[1]); });
  ew("max", 2, -1, 1, [](V& v) { return ad::max(v[0], v[1]); });
  ew("min", 2, -1, 1, [](V& v) { return ad::min(v[0], v[1]); });
  ew("relu", 1, -1, 1, [](V& v) { return ad::relu(v[0]); });
  ew("leaky_relu", 1, -1, 1, [](V& v) { return ad::leaky_relu(v[0], 0.01); });
  ew("sigmoid", 1, -4, 4, [](V& v) { return ad::sigmoid(v[0]); });
  ew("log", 1, 0.5, 2, [](V& v) { return ad::log(v[0]); });
  ew("square", 1, -1, 1, [](V& v) { return ad::square(v[0]); });
  ew("sqrt", 1, 0.5, 2, [](V& v) { return ad::sqrt(v[0]); });
  ew("scale", 1, -1, 1, [](V& v) { return ad::scale(v[0], -1.7); });
  ew("sum", 1, -1, 1, [](V& v) { return ad::sum(v[0]); });
  ew("mean", 1, -1, 1, [](V& v) { return ad::mean(v[0]); });
  ew("sum_rows", 1, -1, 1, [](V& v) { return ad::sum_rows(v[0]); });

  c.emplace_back("matmul", [](Rng& rng) {
    auto store = std::make_shared<std::pair<Leaves, Tensor>>();
    const std::size_t m = dim(rng, 1, 5), k = dim(rng, 1, 5), n = dim(rng, 1, 5);
    const bool tb = uniform01(rng) < 0.5;
    store->first.tensors.reserve(2);
    store->first.add(Shape{m, k}, rng);
    store->first.add(tb ? Shape{n, k} : Shape{k, n}, rng);
    store->second = random_weights(Shape{m, n}, rng);
    GradInstance inst;
    for (auto& t : store->first.tensors) inst.leaves.push_back(&t);
    auto* st = store.get();
    inst.build = [st, tb](ad::Tape& t) {
      return weighted_sum(t, ad::matmul(t.param(st->first.tensors[0]),
                                        t.param(st->first.tensors[1]), tb),
                          st->second);
    };
    inst.storage = store;
    return inst;
  });
  c.emplace_back("add_bias", [](Rng& rng) {
    auto store = std::make_shared<std::pair<Leaves, Tensor>>();
    const std::size_t r = dim(rng, 1, 5), n = dim(rng, 1, 5);
    store->first.tensors.reserve(2);
    store->first.add(Shape{r, n}, rng);
    store->first.add(Shape{n}, rng);
    store->second = random_weights(Shape{r, n}, rng);
    GradInstance inst;
    for (auto& t : store->first.tensors) inst.leaves.push_back(&t);
    auto* st = store.get();
    inst.build = [st](ad::Tape& t) {
      return weighted_sum(
          t, ad::add_bias(t.param(st->first.tensors[0]), t.param(st->first.tensors[1])),
          st->second);
    };
    inst.storage = store;
    return inst;
  });
  c.emplace_back("concat_lastdim", [](Rng& rng) {
    auto store = std::make_shared<std::pair<Leaves, Tensor>>();
    const std::size_t r = dim(rng, 1, 5), p = dim(rng, 1, 4), q = dim(rng, 1, 4);
    store->first.tensors.reserve(2);
    store->first.add(Shape{r, p}, rng);
    store->first.add(Shape{r, q}, rng);
    store->second = random_weights(Shape{r, p + q}, rng);
    GradInstance inst;
    for (auto& t : store->first.tensors) inst.leaves.push_back(&t);
    auto* st = store.get();
    inst.build = [st](ad::Tape& t) {
      return weighted_sum(t, ad::concat_lastdim(t.param(st->first.tensors[0]),
                                                t.param(st->first.tensors[1])),
                          st->second);
    };
    inst.storage = store;
    return inst;
  });
  auto bn = [](bool train) {
    return [train](Rng& rng) {
      struct S {
        Leaves leaves;
        Tensor w, rm, rv;
      };
      auto store = std::make_shared<S>();
      const std::size_t r = dim(rng, 2, 5), n = dim(rng, 1, 4);
      store->leaves.tensors.reserve(3);
      store->leaves.add(Shape{r, n}, rng);
      store->leaves.add(Shape{n}, rng, 0.5, 1.5);
      store->leaves.add(Shape{n}, rng);
      store->w = random_weights(Shape{r, n}, rng);
      store->rm = random_weights(Shape{n}, rng);
      store->rv = Tensor(Shape{n});
      for (auto& v : store->rv.values()) v = uniform(rng, 0.5, 2.0);
      GradInstance inst;
      for (auto& t : store->leaves.tensors) inst.leaves.push_back(&t);
      auto* st = store.get();
      inst.build = [st, train](ad::Tape& t) {
        Var x = t.param(st->leaves.tensors[0]);
        Var g = t.param(st->leaves.tensors[1]);
        Var b = t.param(st->leaves.tensors[2]);
        Tensor rm = st->rm, rv = st->rv;  // train mode updates copies
        Var y = train ? ad::batch_norm_train(x, g, b, rm, rv)
                      : ad::batch_norm_eval(x, g, b, st->rm, st->rv);
        return weighted_sum(t, y, st->w);
      };
      inst.storage = store;
      return inst;
    };
  };
  c.emplace_back("batch_norm_train", bn(true));
  c.emplace_back("batch_norm_eval", bn(false));
  c.emplace_back("dropout", [](Rng& rng) {
    struct S {
      Leaves leaves;
      Tensor w, mask;
    };
    auto store = std::make_shared<S>();
    const Shape s{dim(rng, 1, 5), dim(rng, 1, 5)};
    store->leaves.tensors.reserve(1);
    store->leaves.add(s, rng);
    store->w = random_weights(s, rng);
    store->mask = ad::dropout_mask(s, 0.3, rng);
    GradInstance inst;
    inst.leaves.push_back(&store->leaves.tensors[0]);
    auto* st = store.get();
    inst.build = [st](ad::Tape& t) {
      return weighted_sum(
          t, ad::dropout(t.param(st->leaves.tensors[0]), &st->mask, ad::Mode::kTrain), st->w);
    };
    inst.storage = store;
    return inst;
  });
  c.emplace_back("bce_with_logits", [](Rng& rng) {
    struct S {
      Leaves leaves;
      Tensor targets, w;
      std::vector<double> class_weight;
    };
    auto store = std::make_shared<S>();
    const std::size_t r = dim(rng, 1, 5), n = dim(rng, 1, 5);
    store->leaves.tensors.reserve(1);
    store->leaves.add(Shape{r, n}, rng, -6, 6);
    store->targets = Tensor::matrix(r, n);
    for (auto& v : store->targets.values()) v = uniform01(rng) < 0.5 ? 1.0 : uniform01(rng);
    store->w = random_weights(Shape{r}, rng);
    for (std::size_t k = 0; k < n; ++k) store->class_weight.push_back(uniform(rng, 0.0, 1.0));
    GradInstance inst;
    inst.leaves.push_back(&store->leaves.tensors[0]);
    auto* st = store.get();
    inst.build = [st](ad::Tape& t) {
      return weighted_sum(t,
                          ad::bce_with_logits(t.param(st->leaves.tensors[0]), st->targets,
                                              st->class_weight),
                          st->w);
    };
    inst.storage = store;
    return inst;
  });
  return c;
}

inline std::vector<std::pair<std::string, CaseFn>> loss_cases() {
  std::vector<std::pair<std::string, CaseFn>> c;
  // Operator nets run in train mode with a fixed dropout realization per
  // evaluation, the configuration they are trained in.
  auto with_ctx = [](LossFixture& f, ad::Tape& t, auto body) {
    Rng drop(f.dropout_seed);
    auto ctx = ForwardContext::train(drop);
    return body(ctx, t.param(f.fx), t.param(f.fy));
  };
  c.emplace_back("bce", [](Rng& rng) {
    auto f = LossFixture::make(rng);
    auto store = std::make_shared<std::pair<std::shared_ptr<LossFixture>, Tensor>>(f, Tensor());
    Tensor& scores = store->second;
    scores = Tensor::matrix(f->fx.rows(), f->mask.size());
    for (auto& v : scores.values()) v = uniform(rng, -5, 5);
    scores.set_requires_grad(true);
    GradInstance inst;
    inst.leaves = {&scores};
    auto* st = store.get();
    inst.build = [st](ad::Tape& t) {
      return bce(t.param(st->second), label_matrix(st->first->lx), st->first->mask);
    };
    inst.storage = store;
    return inst;
  });
  c.emplace_back("classifier_loss", [](Rng& rng) {
    auto f = LossFixture::make(rng);
    GradInstance inst;
    for (auto& p : f->model.classifier_params()) inst.leaves.push_back(p.tensor);
    inst.leaves.push_back(&f->fx);
    inst.leaves.push_back(&f->fy);
    auto* fp = f.get();
    inst.build = [fp](ad::Tape& t) {
      return classifier_loss(t, fp->model.classifier, t.param(fp->fx), t.param(fp->fy), fp->lx,
                             fp->ly, fp->mask);
    };
    inst.storage = f;
    return inst;
  });
  c.emplace_back("laso_loss", [with_ctx](Rng& rng) {
    auto f = LossFixture::make(rng);
    GradInstance inst;
    inst.leaves = f->operator_leaves();
    auto* fp = f.get();
    inst.build = [fp, with_ctx](ad::Tape& t) {
      return with_ctx(*fp, t, [&](ForwardContext& ctx, Var x, Var y) {
        auto& m = fp->model;
        return laso_loss(t, m.classifier, ctx.run(t, m.inter, x, y), ctx.run(t, m.uni, x, y),
                         ctx.run(t, m.sub, x, y), fp->lx, fp->ly, fp->mask);
      });
    };
    inst.storage = f;
    return inst;
  });
  c.emplace_back("sym_loss", [with_ctx](Rng& rng) {
    auto f = LossFixture::make(rng);
    GradInstance inst;
    inst.leaves = f->operator_leaves();
    auto* fp = f.get();
    inst.build = [fp, with_ctx](ad::Tape& t) {
      return with_ctx(*fp, t, [&](ForwardContext& ctx, Var x, Var y) {
        return sym_loss(t, ctx, fp->model.inter, fp->model.uni, x, y);
      });
    };
    inst.storage = f;
    return inst;
  });
  c.emplace_back("mc_loss", [with_ctx](Rng& rng) {
    auto f = LossFixture::make(rng);
    GradInstance inst;
    inst.leaves = f->operator_leaves();
    auto* fp = f.get();
    inst.build = [fp, with_ctx](ad::Tape& t) {
      return with_ctx(*fp, t, [&](ForwardContext& ctx, Var x, Var y) {
        auto& m = fp->model;
        return mc_loss(t, ctx, m.uni, m.sub, x, y, ctx.run(t, m.inter, x, y),
                       ctx.run(t, m.sub, x, y));
      });
    };
    inst.storage = f;
    return inst;
  });
  c.emplace_back("total_laso_objective", [with_ctx](Rng& rng) {
    auto f = LossFixture::make(rng);
    GradInstance inst;
    inst.leaves = f->operator_leaves();
    auto* fp = f.get();
    inst.build = [fp, with_ctx](ad::Tape& t) {
      return with_ctx(*fp, t, [&](ForwardContext& ctx, Var x, Var y) {
        LossOptions opts;
        opts.weights = {.laso = 0.7, .sym = 1.3, .mc = 2.0};
        return laso_objective(t, fp->model, ctx, x, y, fp->lx, fp->ly, fp->mask, opts).total;
      });
    };
    inst.storage = f;
    return inst;
  });
  return c;
}

/// A random graph of at most five ops over leaves of shape ≤ 8×8.
inline GradInstance composite_case(Rng& rng) {
  struct S {
    std::vector<Tensor> leaves;
    Tensor w;
    std::vector<int> ops;
    std::vector<std::size_t> arg;  // extra-leaf index per op, or npos
  };
  auto store = std::make_shared<S>();
  store->leaves.reserve(8);
  auto leaf = [&](Shape s) {
    Tensor t(std::move(s));
    for (auto& v : t.values()) v = uniform(rng, -1.0, 1.0);
    t.set_requires_grad(true);
    store->leaves.push_back(std::move(t));
    return store->leaves.size() - 1;
  };
  std::size_t rows = dim(rng, 2, 8), cols = dim(rng, 1, 8);
  leaf(Shape{rows, cols});
  const std::size_t n_ops = dim(rng, 1, 5);
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < n_ops; ++i) {
    const int op = static_cast<int>(uniform_index(rng, 11));
    std::size_t extra = npos;
    switch (op) {
      case 0: case 1: case 2: case 3: case 4:  // add sub mul max min
        extra = leaf(Shape{rows, cols});
        break;
      case 5: {  // matmul into a new width
        const std::size_t k = dim(rng, 1, 8);
        extra = leaf(Shape{cols, k});
        cols = k;
        break;
      }
      case 6: {  // concat
        const std::size_t k = dim(rng, 1, std::max<std::size_t>(1, 8 - std::min<std::size_t>(cols, 7)));
        extra = leaf(Shape{rows, k});
        cols += k;
        break;
      }
      case 7:  // add_bias
        extra = leaf(Shape{cols});
        break;
      default:  // 8 sigmoid, 9 leaky_relu, 10 batch norm (train)
        break;
    }
    store->ops.push_back(op);
    store->arg.push_back(extra);
  }
  store->w = random_weights(Shape{rows, cols}, rng);
  GradInstance inst;
  for (auto& t : store->leaves) inst.leaves.push_back(&t);
  auto* st = store.get();
  inst.build = [st](ad::Tape& t) {
    std::vector<Var> v;
    for (auto& l : st->leaves) v.push_back(t.param(l));
    Var h = v[0];
    for (std::size_t i = 0; i < st->ops.size(); ++i) {
      const std::size_t a = st->arg[i];
      switch (st->ops[i]) {
        case 0: h = ad::add(h, v[a]); break;
        case 1: h = ad::sub(h, v[a]); break;
        case 2: h = ad::mul(h, v[a]); break;
        case 3: h = ad::max(h, v[a]); break;
        case 4: h = ad::min(h, v[a]); break;
        case 5: h = ad::matmul(h, v[a]); break;
        case 6: h = ad::concat_lastdim(h, v[a]); break;
        case 7: h = ad::add_bias(h, v[a]); break;
        case 8: h = ad::sigmoid(h); break;
        case 9: h = ad::leaky_relu(h, 0.1); break;
        default: {
          const std::size_t n = h.shape()[1];
          Tensor rm(Shape{n}, 0.0), rv(Shape{n}, 1.0);
          h = ad::batch_norm_train(h, t.constant(Tensor(Shape{n}, 1.0)),
                                   t.constant(Tensor(Shape{n}, 0.0)), rm, rv);
        }
      }
    }
    return weighted_sum(t, h, st->w);
  };
  inst.storage = store;
  return inst;
}

inline GradCheckResult run_case(const std::string& name, const CaseFn& make, std::size_t count,
                                Rng& rng, const GradCheckConfig& cfg) {
  GradCheckResult r;
  r.name = name;
  std::size_t attempts = 0;
  while (r.checked < count && attempts < count * (cfg.max_redraws + 1)) {
    ++attempts;
    GradInstance inst = make(rng);
    const double e = check_instance(inst, cfg);
    if (e < 0) {
      ++r.rejected;
      continue;
    }
    ++r.checked;
    r.max_rel_error = std::max(r.max_rel_error, std::isnan(e) ? INFINITY : e);
  }
  return r;
}

}  // namespace gradcheck_detail

/// Runs the whole suite. Every primitive and loss must be checked at least
/// once and stay under the tolerance for the report to pass.
inline GradCheckReport run_gradcheck(const GradCheckConfig& cfg = {}) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport rep;
  rep.tolerance = cfg.tolerance;
  Rng rng(cfg.seed);
  for (const auto& [name, make] : gradcheck_detail::primitive_cases()) {
    rep.results.push_back(
        gradcheck_detail::run_case(name, make, cfg.instances_per_case, rng, cfg));
  }
  for (const auto& [name, make] : gradcheck_detail::loss_cases()) {
    rep.results.push_back(
        gradcheck_detail::run_case(name, make, cfg.instances_per_case, rng, cfg));
  }
  rep.results.push_back(gradcheck_detail::run_case(
      "composite_graph", gradcheck_detail::composite_case, cfg.composite_graphs, rng, cfg));
  rep.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace laso
