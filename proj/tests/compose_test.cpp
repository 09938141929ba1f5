#include <gtest/gtest.h>

#include "laso/compose.hpp"

namespace laso {
namespace {

TEST(SetExprParse, NestedExpressionTree) {
  auto e = parse_set_expr("sub(A,int(B,C))");
  ASSERT_FALSE(e->is_leaf());
  EXPECT_EQ(e->op, SetOp::kSubtraction);
  EXPECT_EQ(e->lhs->leaf, "A");
  ASSERT_FALSE(e->rhs->is_leaf());
  EXPECT_EQ(e->rhs->op, SetOp::kIntersection);
  EXPECT_EQ(e->rhs->lhs->leaf, "B");
  EXPECT_EQ(e->rhs->rhs->leaf, "C");
  EXPECT_EQ(e->depth(), 2u);
}

TEST(SetExprParse, SingleLeaf) {
  auto e = parse_set_expr(" 17 ");
  EXPECT_TRUE(e->is_leaf());
  EXPECT_EQ(e->leaf, "17");
}

TEST(SetExprParse, TagsAndWhitespace) {
  auto e = parse_set_expr("uni.analytic( a , int(b, c) )");
  EXPECT_EQ(e->tag, OpTag::kAnalytic);
  EXPECT_EQ(e->rhs->tag, OpTag::kLearned);
  EXPECT_EQ(parse_set_expr("int(a,b)", OpTag::kAnalytic)->tag, OpTag::kAnalytic);
}

TEST(SetExprParse, CanonicalFormRoundTrips) {
  for (const char* s : {"x", "uni(a,b)", "sub(A,int(B,C))", "int.analytic(uni(1,2),sub(3,4))"}) {
    const auto once = to_string(*parse_set_expr(s));
    EXPECT_EQ(to_string(*parse_set_expr(once)), once) << s;
  }
  EXPECT_EQ(to_string(*parse_set_expr("sub(A,int(B,C))")), "sub.learned(A,int.learned(B,C))");
}

TEST(SetExprParse, MalformedInputsThrow) {
  for (const char* s : {"", "uni(a)", "uni(a,b", "uni(a,b,c)", "xor(a,b)", "uni.fast(a,b)",
                        "uni(a,b))", "(a)", "uni(,b)", "a b"}) {
    EXPECT_THROW(parse_set_expr(s), ParseError) << '"' << s << '"';
  }
}

class ComposeOnCleanBank : public ::testing::Test {
 protected:
  GeneratorSpec spec = GeneratorSpec::clean();
  FeatureBank bank = generate_bank(spec, SplitSizes{.train = 0, .test = 300, .reserve = 0}, 5);
};

TEST_F(ComposeOnCleanBank, LeafIsIdentity) {
  auto r = compose_expression(*parse_set_expr("42"), bank, {});
  EXPECT_EQ(r.feature, bank.feature_f64(42));
  EXPECT_EQ(r.expected, bank.labels(42));
  EXPECT_EQ(r.leaves, std::vector<std::size_t>{42});
}

TEST_F(ComposeOnCleanBank, AnalyticExpressionDecodesToLabelAlgebra) {
  auto e = parse_set_expr("sub(A,int(B,C))", OpTag::kAnalytic);
  for (std::size_t i = 0; i + 2 < bank.size(); i += 3) {
    LeafBindings bind{{"A", i}, {"B", i + 1}, {"C", i + 2}};
    auto r = compose_expression(*e, bank, {}, bind);
    const auto want =
        set_subtraction(bank.labels(i), set_intersection(bank.labels(i + 1), bank.labels(i + 2)));
    EXPECT_EQ(r.expected, want);
    EXPECT_EQ(oracle_decode(spec, r.feature), want) << i;
  }
}

TEST_F(ComposeOnCleanBank, UnresolvedLeavesThrow) {
  EXPECT_THROW(compose_expression(*parse_set_expr("uni.analytic(A,1)"), bank, {}), ConfigError);
  EXPECT_THROW(compose_expression(*parse_set_expr("uni.analytic(0,300)"), bank, {}), ConfigError);
  EXPECT_THROW(compose_expression(*parse_set_expr("0"), bank, {}, {{"0", 999}}), ConfigError);
}

TEST_F(ComposeOnCleanBank, LearnedNodeNeedsAModel) {
  EXPECT_THROW(compose_expression(*parse_set_expr("uni(0,1)"), bank, {}), ConfigError);
  NetConfig cfg;
  cfg.feature_dim = spec.feature_dim;
  Rng rng(3);
  auto model = LasoModel::create(cfg, spec.label_count, rng);
  auto r = compose_expression(*parse_set_expr("uni(0,int(1,2))"), bank, {.model = &model});
  EXPECT_EQ(r.feature.size(), spec.feature_dim);
  EXPECT_EQ(r.leaves, (std::vector<std::size_t>{0, 1, 2}));
}

}  // namespace
}  // namespace laso
