#include "laso/labels.hpp"

#include <gtest/gtest.h>

#include "laso/rng.hpp"

namespace laso {
namespace {

LabelVec random_labels(std::size_t n, Rng& rng) {
  LabelVec v(n);
  for (std::size_t k = 0; k < n; ++k) v.set(k, uniform01(rng) < 0.4);
  return v;
}

TEST(LabelAlgebra, Examples) {
  const auto a = LabelVec::of(5, {1, 2});
  const auto b = LabelVec::of(5, {2, 3});
  const LabelVec empty(5);
  EXPECT_EQ(set_union(a, b), LabelVec::of(5, {1, 2, 3}));
  EXPECT_EQ(set_union(a, empty), a);
  EXPECT_EQ(set_union(a, a), a);
  EXPECT_EQ(set_intersection(a, b), LabelVec::of(5, {2}));
  EXPECT_EQ(set_intersection(a, empty), empty);
  EXPECT_EQ(set_intersection(a, a), a);
  EXPECT_EQ(set_subtraction(a, b), LabelVec::of(5, {1}));
  EXPECT_EQ(set_subtraction(a, empty), a);
  EXPECT_EQ(set_subtraction(a, a), empty);
}

TEST(LabelAlgebra, Iou) {
  const auto a = LabelVec::of(5, {1, 2});
  EXPECT_DOUBLE_EQ(iou(a, LabelVec::of(5, {2, 3})), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(LabelVec(5), LabelVec(5)), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, LabelVec(5)), 0.0);
}

TEST(LabelAlgebra, LengthMismatchThrows) {
  LabelVec a(3), b(4);
  EXPECT_THROW(set_union(a, b), ShapeError);
  EXPECT_THROW(set_intersection(a, b), ShapeError);
  EXPECT_THROW(set_subtraction(a, b), ShapeError);
  EXPECT_THROW(iou(a, b), ShapeError);
  EXPECT_THROW(LabelVec(std::vector<std::uint8_t>{0, 2}), ConfigError);
}

TEST(LabelAlgebra, AlgebraicLawsOnRandomPairs) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_labels(12, rng);
    const auto b = random_labels(12, rng);
    const auto c = random_labels(12, rng);
    EXPECT_EQ(set_union(a, b), set_union(b, a));
    EXPECT_EQ(set_intersection(a, b), set_intersection(b, a));
    EXPECT_EQ(set_union(set_union(a, b), c), set_union(a, set_union(b, c)));
    EXPECT_EQ(set_intersection(set_intersection(a, b), c),
              set_intersection(a, set_intersection(b, c)));
    EXPECT_EQ(set_union(set_subtraction(a, b), set_intersection(a, b)), a);
    // De Morgan on indicators.
    EXPECT_EQ(set_complement(set_union(a, b)),
              set_intersection(set_complement(a), set_complement(b)));
    EXPECT_EQ(set_complement(set_intersection(a, b)),
              set_union(set_complement(a), set_complement(b)));
    EXPECT_EQ(set_subtraction(a, b), set_intersection(a, set_complement(b)));
  }
}

}  // namespace
}  // namespace laso
