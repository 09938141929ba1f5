#pragma once

// Set expressions over bank samples, e.g. sub(A,int(B,C)), evaluated
// bottom-up with operator networks while the expected label set is
// computed alongside by exact label algebra.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "laso/errors.hpp"
#include "laso/labels.hpp"
#include "laso/losses.hpp"
#include "laso/nets.hpp"
#include "laso/synth.hpp"

namespace laso {

enum class OpTag { kLearned, kAnalytic };

/// A leaf names a bank sample; an internal node applies one set operation
/// to exactly two subexpressions.
struct SetExpr {
  std::string leaf;  // empty for internal nodes
  SetOp op = SetOp::kUnion;
  OpTag tag = OpTag::kLearned;
  std::shared_ptr<const SetExpr> lhs, rhs;

  bool is_leaf() const { return !lhs; }

  static std::shared_ptr<const SetExpr> make_leaf(std::string name) {
    auto e = std::make_shared<SetExpr>();
    e->leaf = std::move(name);
    return e;
  }
  static std::shared_ptr<const SetExpr> make_op(SetOp op, OpTag tag,
                                                std::shared_ptr<const SetExpr> a,
                                                std::shared_ptr<const SetExpr> b) {
    auto e = std::make_shared<SetExpr>();
    e->op = op;
    e->tag = tag;
    e->lhs = std::move(a);
    e->rhs = std::move(b);
    return e;
  }

  std::size_t depth() const {
    return is_leaf() ? 0 : 1 + std::max(lhs->depth(), rhs->depth());
  }
};

using SetExprPtr = std::shared_ptr<const SetExpr>;

namespace detail {

class ExprParser {
 public:
  ExprParser(std::string_view text, OpTag default_tag) : s_(text), default_tag_(default_tag) {}

  SetExprPtr parse() {
    auto e = expr();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return e;
  }

 private:
  // expr  := op [ '.' tag ] '(' expr ',' expr ')' | name
  // op    := 'uni' | 'int' | 'sub'
  // tag   := 'learned' | 'analytic'
  // name  := [A-Za-z0-9_-]+
  SetExprPtr expr() {
    skip_ws();
    const std::size_t start = pos_;
    std::string word = name();
    if (word.empty()) fail(pos_ < s_.size() ? "expected a sample name or operator"
                                            : "unexpected end of expression");
    skip_ws();
    const bool call = pos_ < s_.size() && (s_[pos_] == '(' || s_[pos_] == '.');
    if (!call) return SetExpr::make_leaf(word);

    SetOp op;
    if (word == "uni") op = SetOp::kUnion;
    else if (word == "int") op = SetOp::kIntersection;
    else if (word == "sub") op = SetOp::kSubtraction;
    else { pos_ = start; fail("unknown operator '" + word + "' (use uni, int or sub)"); }

    OpTag tag = default_tag_;
    if (s_[pos_] == '.') {
      ++pos_;
      const std::string t = name();
      if (t == "learned") tag = OpTag::kLearned;
      else if (t == "analytic") tag = OpTag::kAnalytic;
      else fail("unknown operator tag '" + t + "' (use learned or analytic)");
      skip_ws();
    }
    expect('(');
    auto a = expr();
    expect(',');
    auto b = expr();
    expect(')');
    return SetExpr::make_op(op, tag, std::move(a), std::move(b));
  }

  std::string name() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
            s_[pos_] == '-')) {
      ++pos_;
    }
    return std::string(s_.substr(start, pos_ - start));
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= s_.size() || s_[pos_] != c) {
      fail(std::string("expected '") + c + "'" +
           (pos_ < s_.size() ? std::string(", found '") + s_[pos_] + "'" : ", found end"));
    }
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("set expression '" + std::string(s_) + "', column " +
                     std::to_string(pos_ + 1) + ": " + msg);
  }

  std::string_view s_;
  OpTag default_tag_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline SetExprPtr parse_set_expr(std::string_view text, OpTag default_tag = OpTag::kLearned) {
  return detail::ExprParser(text, default_tag).parse();
}

/// Canonical text form; tags are always spelled out.
inline std::string to_string(const SetExpr& e) {
  if (e.is_leaf()) return e.leaf;
  return std::string(set_op_name(e.op)) +
         (e.tag == OpTag::kLearned ? ".learned(" : ".analytic(") + to_string(*e.lhs) + "," +
         to_string(*e.rhs) + ")";
}

/// Leaf names resolve through explicit bindings first, then as a decimal
/// sample index.
using LeafBindings = std::map<std::string, std::size_t>;

inline std::size_t resolve_leaf(const std::string& name, const FeatureBank& bank,
                                const LeafBindings& bindings) {
  if (auto it = bindings.find(name); it != bindings.end()) {
    if (it->second >= bank.size()) {
      throw ConfigError("leaf '" + name + "' is bound to sample " + std::to_string(it->second) +
                        " but the bank has " + std::to_string(bank.size()) + " samples");
    }
    return it->second;
  }
  std::size_t idx = 0;
  const auto* end = name.data() + name.size();
  auto [p, ec] = std::from_chars(name.data(), end, idx);
  if (ec != std::errc() || p != end) {
    throw ConfigError("unresolved leaf '" + name +
                      "': not bound and not a sample index (bind it with NAME=INDEX)");
  }
  if (idx >= bank.size()) {
    throw ConfigError("leaf '" + name + "' is out of range: the bank has " +
                      std::to_string(bank.size()) + " samples");
  }
  return idx;
}

struct ComposeResult {
  std::vector<double> feature;
  LabelVec expected;
  std::vector<std::size_t> leaves;  // resolved sample indices, left to right
};

struct ComposeOperators {
  const LasoModel* model = nullptr;  // needed only by learned nodes
  AnalyticVariant analytic = AnalyticVariant::kMinMax;
};

/// Post-order evaluation. Learned nodes run the networks in eval mode.
inline ComposeResult compose_expression(const SetExpr& e, const FeatureBank& bank,
                                        const ComposeOperators& ops,
                                        const LeafBindings& bindings = {}) {
  if (e.is_leaf()) {
    const std::size_t i = resolve_leaf(e.leaf, bank, bindings);
    return {bank.feature_f64(i), bank.labels(i), {i}};
  }
  ComposeResult a = compose_expression(*e.lhs, bank, ops, bindings);
  ComposeResult b = compose_expression(*e.rhs, bank, ops, bindings);
  if (e.tag == OpTag::kLearned && ops.model == nullptr) {
    throw ConfigError(std::string("'") + set_op_name(e.op) +
                      "' is tagged learned but no model was given");
  }
  const PairOperators p = e.tag == OpTag::kLearned ? PairOperators::learned(*ops.model)
                                                   : PairOperators::analytic(ops.analytic);
  const Tensor out = p.apply(e.op, Tensor::row(a.feature), Tensor::row(b.feature));
  ComposeResult r;
  r.feature = out.values();
  r.expected = apply_set_op(e.op, std::span<const LabelVec>(&a.expected, 1),
                            std::span<const LabelVec>(&b.expected, 1))
                   .front();
  r.leaves = std::move(a.leaves);
  r.leaves.insert(r.leaves.end(), b.leaves.begin(), b.leaves.end());
  return r;
}

}  // namespace laso
