#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "lcnet/autodiff.hpp"
#include "lcnet/parallel.hpp"
#include "lcnet/random.hpp"

using namespace lcnet;

namespace {

TensorD randn(Dims d, Rng &rng, double scale = 1.0) {
  TensorD t(std::move(d));
  for (auto &v : t.values()) v = scale * rng.normal();
  return t;
}

// Projects an output onto a fixed random direction so every layer reduces to a scalar.
double project(const TensorD &out, const TensorD &dir) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * dir[i];
  return s;
}

// Central differences on every element of x, compared against analytic.
// Smooth layers only: callers keep inputs away from kinks.
void expect_matches_fd(TensorD &x, const std::function<double()> &loss, const TensorD &analytic,
                       const char *what, double tol = 1e-5) {
  ASSERT_EQ(x.dims(), analytic.dims()) << what;
  const double h = 1e-5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({1e-3, std::fabs(numeric), std::fabs(analytic[i])});
    EXPECT_LE(std::fabs(numeric - analytic[i]) / denom, tol)
        << what << "[" << i << "] numeric " << numeric << " analytic " << analytic[i];
  }
}

}  // namespace

TEST(ConvBackward, StandardMatchesFiniteDifferences) {
  Rng rng(1);
  for (int stride : {1, 2})
    for (int k : {3, 5}) {
      const auto d = ConvDesc::standard(3, 4, k, stride, true);
      TensorD x = randn({2, 3, 7, 6}, rng), w = randn(d.weight_dims(), rng), b = randn({4}, rng);
      const TensorD y = conv2d_naive<double>(x, w, b.values(), d);
      const TensorD dir = randn(y.dims(), rng);
      const auto g = conv2d_backward<double>(x, w, d, dir);
      auto loss = [&] { return project(conv2d_naive<double>(x, w, b.values(), d), dir); };
      expect_matches_fd(x, loss, g.input, "conv.input");
      expect_matches_fd(w, loss, g.weights, "conv.weight");
      expect_matches_fd(b, loss, g.bias, "conv.bias");
    }
}

TEST(ConvBackward, DepthwiseMatchesFiniteDifferences) {
  Rng rng(2);
  for (int stride : {1, 2})
    for (int k : {3, 5}) {
      const auto d = ConvDesc::dw(5, k, stride);
      TensorD x = randn({2, 5, 8, 9}, rng), w = randn(d.weight_dims(), rng);
      const TensorD dir = randn(conv2d_naive<double>(x, w, {}, d).dims(), rng);
      const auto g = conv2d_backward<double>(x, w, d, dir);
      EXPECT_TRUE(g.bias.dims().empty());
      auto loss = [&] { return project(conv2d_naive<double>(x, w, {}, d), dir); };
      expect_matches_fd(x, loss, g.input, "dw.input");
      expect_matches_fd(w, loss, g.weights, "dw.weight");
    }
}

TEST(BatchNormBackward, TrainMatchesFiniteDifferences) {
  Rng rng(3);
  TensorD x = randn({3, 4, 3, 2}, rng, 2.0);
  auto bn = BatchNormParams<double>::unit(4);
  bn.gamma = randn({4}, rng);
  bn.beta = randn({4}, rng);
  const auto fwd = batchnorm_train(x, bn);
  const TensorD dir = randn(x.dims(), rng);
  const auto g = batchnorm_train_backward(x, bn.gamma, fwd.batch_mean, fwd.batch_var, bn.eps, dir);
  auto loss = [&] { return project(batchnorm_train(x, bn).output, dir); };
  expect_matches_fd(x, loss, g.input, "bn.input");
  expect_matches_fd(bn.gamma, loss, g.gamma, "bn.gamma");
  expect_matches_fd(bn.beta, loss, g.beta, "bn.beta");
}

TEST(BatchNormBackward, InferMatchesFiniteDifferences) {
  Rng rng(4);
  TensorD x = randn({2, 3, 2, 2}, rng);
  auto bn = BatchNormParams<double>::unit(3);
  bn.gamma = randn({3}, rng);
  bn.beta = randn({3}, rng);
  bn.running_mean = randn({3}, rng);
  bn.running_var = TensorD({3}, std::vector<double>{0.5, 1.5, 3.0});
  const TensorD dir = randn(x.dims(), rng);
  const auto g = batchnorm_infer_backward(x, bn, dir);
  auto loss = [&] { return project(batchnorm_infer(x, bn), dir); };
  expect_matches_fd(x, loss, g.input, "bn.input");
  expect_matches_fd(bn.gamma, loss, g.gamma, "bn.gamma");
  expect_matches_fd(bn.beta, loss, g.beta, "bn.beta");
}

TEST(ActivationBackward, HSwishExampleAndPieces) {
  EXPECT_NEAR(hswish_grad_scalar(1.0), 5.0 / 6.0, 1e-12);
  EXPECT_EQ(hswish_grad_scalar(-4.0), 0.0);
  EXPECT_EQ(hswish_grad_scalar(4.0), 1.0);
  EXPECT_EQ(hsigmoid_grad_scalar(0.0), 1.0 / 6.0);
  EXPECT_EQ(hsigmoid_grad_scalar(3.5), 0.0);

  // Float path through the tensor kernel, relative error against 5/6.
  const Tensor g = activation_backward(Tensor({1}, 1.0f), Activation::HSwish, Tensor({1}, 1.0f));
  EXPECT_LT(std::fabs(g[0] - 5.0 / 6.0) / (5.0 / 6.0), 1e-7);

  // Smooth points away from +-3 and 0.
  Rng rng(5);
  TensorD x({40});
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v;
    do v = rng.uniform() * 10 - 5;
    while (std::fabs(std::fabs(v) - 3) < 0.05 || std::fabs(v) < 0.05);
    x[i] = v;
  }
  const TensorD dir = randn(x.dims(), rng);
  expect_matches_fd(x, [&] { return project(hswish(x), dir); },
                    activation_backward(x, Activation::HSwish, dir), "hswish");
  expect_matches_fd(x, [&] { return project(relu(x), dir); },
                    activation_backward(x, Activation::ReLU, dir), "relu");
  expect_matches_fd(x, [&] { return project(hsigmoid(x), dir); }, hsigmoid_backward(x, dir),
                    "hsigmoid");
}

TEST(SEBackward, MatchesFiniteDifferences) {
  Rng rng(6);
  SEParams<double> se;
  se.channels = 8;
  se.w1 = randn({2, 8}, rng, 0.5);
  se.b1 = randn({2}, rng, 0.5);
  se.w2 = randn({8, 2}, rng, 0.5);
  se.b2 = randn({8}, rng, 0.5);
  TensorD x = randn({2, 8, 3, 3}, rng);
  const TensorD dir = randn(x.dims(), rng);
  const auto g = se_backward(x, se, dir);
  auto loss = [&] { return project(se_apply(x, se), dir); };
  expect_matches_fd(x, loss, g.input, "se.input", 1e-5);
  expect_matches_fd(se.w1, loss, g.w1, "se.w1", 1e-5);
  expect_matches_fd(se.b1, loss, g.b1, "se.b1", 1e-5);
  expect_matches_fd(se.w2, loss, g.w2, "se.w2", 1e-5);
  expect_matches_fd(se.b2, loss, g.b2, "se.b2", 1e-5);
}

TEST(PoolAndFcBackward, MatchFiniteDifferences) {
  Rng rng(7);
  TensorD x = randn({2, 3, 4, 5}, rng);
  const TensorD pdir = randn({2, 3, 1, 1}, rng);
  expect_matches_fd(x, [&] { return project(global_avg_pool(x), pdir); },
                    global_avg_pool_backward(x.dims(), pdir), "gap");

  TensorD in = randn({3, 6}, rng), w = randn({4, 6}, rng), b = randn({4}, rng);
  const TensorD dir = randn({3, 4}, rng);
  const auto g = fully_connected_backward(in, w, dir);
  auto loss = [&] { return project(fully_connected<double>(in, w, b.values()), dir); };
  expect_matches_fd(in, loss, g.input, "fc.input");
  expect_matches_fd(w, loss, g.weights, "fc.weight");
  expect_matches_fd(b, loss, g.bias, "fc.bias");
}

TEST(DropoutBackward, ReusesForwardMask) {
  Rng rng(8);
  const TensorD x = randn({4, 50}, rng), dir = randn({4, 50}, rng);
  const TensorD y = dropout(x, 0.3, Mode::Train, 77);
  const TensorD g = dropout_backward(dir, 0.3, 77);
  for (std::size_t i = 0; i < x.size(); ++i) {
    // y = m x / (1-p) exactly, so dy/dx is the same factor.
    const double factor = y[i] == 0.0 ? 0.0 : 1.0 / 0.7;
    EXPECT_NEAR(g[i], dir[i] * factor, 1e-12);
  }
  EXPECT_EQ(dropout_backward(dir, 0.0, 77), dir);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogK) {
  for (int k : {2, 3, 10, 1000}) {
    const std::vector<int> labels = {0, k - 1};
    const auto r = softmax_cross_entropy(TensorD({2, k}, 0.0), labels);
    EXPECT_NEAR(r.loss, std::log(static_cast<double>(k)), 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  TensorD z = randn({3, 5}, rng, 3.0);
  const std::vector<int> labels = {4, 0, 2};
  const auto r = softmax_cross_entropy(z, labels);
  // Closed form: (softmax - onehot) / N.
  const TensorD p = softmax(z);
  for (int n = 0; n < 3; ++n)
    for (int k = 0; k < 5; ++k)
      EXPECT_NEAR(r.dlogits.at({n, k}), (p.at({n, k}) - (labels[n] == k)) / 3.0, 1e-12);
  expect_matches_fd(z, [&] { return softmax_cross_entropy(z, labels).loss; }, r.dlogits, "ce");
}

TEST(SoftmaxCrossEntropy, LargeLogitsStayFinite) {
  const TensorD z({1, 3}, std::vector<double>{1000.0, 0.0, -1000.0});
  const std::vector<int> labels = {2};
  const auto r = softmax_cross_entropy(z, labels);
  EXPECT_NEAR(r.loss, 2000.0, 1e-9);
  for (double v : r.dlogits.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(SoftmaxCrossEntropy, RejectsBadLabels) {
  const TensorD z({2, 3}, 0.0);
  for (std::vector<int> labels : {std::vector<int>{0, 3}, std::vector<int>{-1, 0}, std::vector<int>{0}}) {
    try {
      softmax_cross_entropy(z, labels);
      FAIL();
    } catch (const Error &e) {
      EXPECT_EQ(e.code(), Errc::InvalidLabel);
    }
  }
}

TEST(NetworkBackward, DuplicatedSamplesGiveSameMeanGradient) {
  const LCNetConfig cfg = tiny_config();
  const Model m = build_model(cfg, 11);
  Rng rng(12);
  Tensor one({1, 3, 32, 32});
  for (auto &v : one.values()) v = static_cast<float>(rng.normal());
  Tensor two({2, 3, 32, 32});
  std::copy(one.values().begin(), one.values().end(), two.values().begin());
  std::copy(one.values().begin(), one.values().end(), two.values().begin() + one.size());
  // Running-stat BN and no dropout keep the two samples independent.
  const BackwardOptions o{false, false, false};
  const std::vector<int> l1 = {1}, l2 = {1, 1};
  const auto a = model_backward(m, one, l1, 0, o), b = model_backward(m, two, l2, 0, o);
  EXPECT_NEAR(a.loss, b.loss, 1e-5);
  for (const auto &[name, g] : a.tape.grads)
    EXPECT_TRUE(tensor_allclose(g, b.tape.grads.at(name), 1e-4, 1e-6)) << name;
}

TEST(NetworkBackward, InferModeDropoutIsPassThrough) {
  LCNetConfig cfg = tiny_config();
  const Model m = build_model(cfg, 13);
  Rng rng(14);
  Tensor x({2, 3, 32, 32});
  for (auto &v : x.values()) v = static_cast<float>(rng.normal());
  const std::vector<int> labels = {0, 2};
  const BackwardOptions o{false, false, false};
  cfg.dropout_rate = 0.0;
  Model no_drop = build_model(cfg, 13);
  const auto a = model_backward(m, x, labels, 1, o), b = model_backward(no_drop, x, labels, 2, o);
  EXPECT_EQ(a.loss, b.loss);
  for (const auto &[name, g] : a.tape.grads) EXPECT_TRUE(tensor_bit_equal(g, b.tape.grads.at(name)));
}

TEST(NetworkBackward, GradientsCoverEveryTrainableParam) {
  const Model m = build_model(tiny_config(), 15);
  Tensor x({2, 3, 32, 32}, 0.5f);
  x[7] = -1.0f;
  const std::vector<int> labels = {0, 1};
  const auto r = model_backward(m, x, labels, 3);
  std::size_t trainable = 0;
  for (const auto &info : m.network.params()) {
    if (info.is_buffer()) {
      EXPECT_EQ(r.tape.grads.count(info.name), 0u) << info.name;
      continue;
    }
    ++trainable;
    ASSERT_EQ(r.tape.grads.count(info.name), 1u) << info.name;
    EXPECT_EQ(r.tape.grads.at(info.name).dims(), info.dims);
  }
  EXPECT_EQ(r.tape.grads.size(), trainable);
  EXPECT_EQ(r.tape.input_grad.dims(), x.dims());
}

TEST(NetworkBackward, WorkerCountInvariant) {
  const Model m = build_model(tiny_config(), 16);
  Rng rng(17);
  Tensor x({4, 3, 32, 32});
  for (auto &v : x.values()) v = static_cast<float>(rng.normal());
  const std::vector<int> labels = {0, 1, 2, 0};
  BackwardResult<float> ref;
  {
    WorkerScope s(1);
    ref = model_backward(m, x, labels, 5);
  }
  for (int w : {2, 4}) {
    WorkerScope s(w);
    const auto r = model_backward(m, x, labels, 5);
    EXPECT_EQ(r.loss, ref.loss);
    for (const auto &[name, g] : ref.tape.grads)
      EXPECT_TRUE(tensor_bit_equal(g, r.tape.grads.at(name))) << name << " workers " << w;
  }
}

TEST(GradCheck, TinyNetworkPasses) {
  const auto rep = grad_check(tiny_config(), 0);
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
  EXPECT_GE(rep.checked, 200);
  bool saw_input = false;
  for (const auto &e : rep.entries) saw_input |= e.name == "input";
  EXPECT_TRUE(saw_input);
}

TEST(GradCheck, DeterministicForSeed) {
  GradCheckOptions o;
  o.min_samples = 40;
  o.samples_per_tensor = 1;
  o.input_samples = 4;
  const auto a = grad_check(tiny_config(), 3, o), b = grad_check(tiny_config(), 3, o);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  EXPECT_EQ(a.max_rel_error, b.max_rel_error);
  EXPECT_EQ(a.worst, b.worst);
}

TEST(GradCheck, DetectsInjectedFault) {
  GradCheckOptions o;
  o.min_samples = 40;
  o.samples_per_tensor = 1;
  o.input_samples = 4;
  o.inject_fault = true;
  const auto rep = grad_check(tiny_config(), 0, o);
  EXPECT_GT(rep.max_rel_error, 1e-2);
  EXPECT_EQ(rep.worst.rfind("stem.conv.weight", 0), 0u) << rep.worst;
}
