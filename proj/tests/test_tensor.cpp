/* Copyright 2026 The hcinfer Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cmath>

#include "hcinfer/errors.hpp"
#include "hcinfer/tensor.hpp"

using hcinfer::Tensor;

TEST(Tensor, ShapeAndDataMustAgree) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_EQ(t.bytes(), 6 * sizeof(double));
  EXPECT_THROW(Tensor({2, 3}, {1, 2, 3}), hcinfer::DimensionError);
  EXPECT_THROW(Tensor({0, 3}, {}), hcinfer::DimensionError);
  EXPECT_THROW(Tensor({}, {}), hcinfer::DimensionError);
}

TEST(Tensor, RejectsNonFiniteValues) {
  EXPECT_THROW(Tensor({2}, {1.0, NAN}), hcinfer::Error);
  EXPECT_THROW(Tensor({1}, {INFINITY}), hcinfer::Error);
}

TEST(Tensor, DefaultIsScalarZero) {
  Tensor t;
  EXPECT_EQ(t.shape(), hcinfer::Shape{1});
  EXPECT_EQ(t[0], 0.0);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.at(2, 1), 6.0);
  EXPECT_THROW(t.reshaped({4}), hcinfer::DimensionError);
}

TEST(Tensor, TakeLeavesScalarZero) {
  Tensor t({3}, {1, 2, 3});
  auto data = std::move(t).take();
  EXPECT_EQ(data.size(), 3u);
  EXPECT_EQ(t.shape(), hcinfer::Shape{1});  // NOLINT(bugprone-use-after-move)
}

TEST(Tensor, RandomUniformIsSeededAndBounded) {
  Tensor a = hcinfer::random_uniform({4, 5}, 9, -0.5, 0.5);
  Tensor b = hcinfer::random_uniform({4, 5}, 9, -0.5, 0.5);
  Tensor c = hcinfer::random_uniform({4, 5}, 10, -0.5, 0.5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (double v : a.data()) {
    EXPECT_GE(v, -0.5);
    EXPECT_LT(v, 0.5);
  }
}

TEST(Tensor, MaxAbsDiffNeedsSameShape) {
  Tensor a({2}, {1, 2}), b({2}, {1.5, 1});
  EXPECT_DOUBLE_EQ(hcinfer::max_abs_diff(a, b), 1.0);
  EXPECT_THROW(hcinfer::max_abs_diff(a, Tensor({1}, {0})), hcinfer::DimensionError);
}

TEST(MacCounter, NestedScopesAllCount) {
  hcinfer::MacCounter outer;
  hcinfer::MacCounter::add(3);
  {
    hcinfer::MacCounter inner;
    hcinfer::MacCounter::add(5);
    EXPECT_EQ(inner.count(), 5u);
  }
  EXPECT_EQ(outer.count(), 8u);
}
