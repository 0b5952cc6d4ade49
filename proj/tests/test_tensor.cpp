#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include "lcnet/parallel.hpp"
#include "lcnet/random.hpp"
#include "lcnet/tensor.hpp"

using namespace lcnet;

TEST(TensorCreate, ZeroFill) {
  Tensor t = tensor_create({1, 2, 2, 2}, 0.0f);
  ASSERT_EQ(t.size(), 8u);
  for (float v : t.values()) EXPECT_EQ(v, 0.0f);
}

TEST(TensorCreate, ConstantFill) {
  Tensor t = tensor_create({3}, 1.5f);
  EXPECT_EQ(t.dims(), Dims({3}));
  for (float v : t.values()) EXPECT_EQ(v, 1.5f);
}

TEST(TensorCreate, RejectsDegenerateShapes) {
  try {
    tensor_create({1, 0, 2, 2}, 0.0f);
    FAIL() << "expected invalid-shape";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::InvalidShape);
  }
  EXPECT_THROW(tensor_create({}, 0.0f), Error);
  EXPECT_THROW(tensor_create({2, -1}, 0.0f), Error);
}

TEST(TensorOffset, Examples) {
  EXPECT_EQ(tensor_offset({1, 2, 2, 2}, {0, 1, 1, 0}), 6);
  EXPECT_EQ(tensor_offset({1, 2, 2, 2}, {0, 0, 0, 0}), 0);
  EXPECT_EQ(tensor_offset({2, 3, 4, 5}, {1, 2, 3, 4}), 119);
}

TEST(TensorOffset, OutOfBounds) {
  try {
    tensor_offset({1, 2, 2, 2}, {0, 2, 0, 0});
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::OutOfBounds);
  }
  EXPECT_THROW(tensor_offset({2, 2}, {0, -1}), Error);
  EXPECT_THROW(tensor_offset({2, 2}, {0}), Error);
}

TEST(TensorOffset, BijectionOverAllIndices) {
  const Dims d{2, 3, 4, 5};
  std::set<std::int64_t> seen;
  for (std::int64_t a = 0; a < 2; ++a)
    for (std::int64_t b = 0; b < 3; ++b)
      for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t e = 0; e < 5; ++e) {
          const auto off = tensor_offset(d, {a, b, c, e});
          EXPECT_EQ(off, ((a * 3 + b) * 4 + c) * 5 + e);
          seen.insert(off);
        }
  EXPECT_EQ(seen.size(), 120u);
  EXPECT_EQ(*seen.begin(), 0);
  EXPECT_EQ(*seen.rbegin(), 119);
}

TEST(TensorAllclose, Examples) {
  Tensor a({4}, 2.0f);
  EXPECT_TRUE(tensor_allclose(a, a, 0.0, 0.0));
  TensorD x({1}, 1.0), y({1}, 1.0 + 1e-9);
  EXPECT_TRUE(tensor_allclose(x, y, 1e-6, 0.0));
  EXPECT_FALSE(tensor_allclose(Tensor({2}), Tensor({3}), 1.0, 1.0));
}

TEST(TensorAllclose, ToleranceIsAsymmetricInB) {
  // |a-b| <= atol + rtol*|b|
  TensorD a({1}, 1.1), b({1}, 1.0);
  EXPECT_TRUE(tensor_allclose(a, b, 0.1 + 1e-12, 0.0));
  EXPECT_FALSE(tensor_allclose(a, b, 0.09, 0.0));
  EXPECT_TRUE(tensor_allclose(a, b, 0.0, 0.1 + 1e-12));
}

TEST(TensorAllclose, NaNIsNeverClose) {
  Tensor a({1}, std::nanf(""));
  EXPECT_FALSE(tensor_allclose(a, a, 1.0, 1.0));
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.at({2, 1}), 5.0f);
  EXPECT_THROW(t.reshaped({4, 2}), Error);
}

TEST(Parallel, CoversRangeExactlyOnce) {
  for (int workers : {1, 2, 3, 8}) {
    WorkerScope scope(workers);
    std::vector<std::atomic<int>> hits(1001);
    parallel_for(1001, [&](std::int64_t b, std::int64_t e) {
      for (auto i = b; i < e; ++i) hits[i]++;
    });
    for (auto &h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(Parallel, RejectsNonPositiveWorkers) {
  EXPECT_THROW(set_worker_count(0), Error);
  EXPECT_EQ(worker_count(), 1);
}

TEST(Random, StreamsAreDeterministic) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
  for (int i = 0; i < 1000; ++i) {
    const double u = hash_uniform(7, i);
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Random, NormalMoments) {
  Rng r(1);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}
