#include <cmath>
#include <vector>

#include "gradient_checks.hpp"
#include "mcover/nn/adam.hpp"
#include "mcover/nn/checkpoint.hpp"
#include "mcover/nn/layers.hpp"
#include "test_helpers.hpp"

using namespace mcover;
using namespace mcover::nn;
using Catch::Approx;

TEST_CASE("tensor basics") {
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(shape_string(t.shape()) == "[2x3]");
  t.reshape({3, 2});
  CHECK(t.dim(0) == 3);
  CHECK(testing::error_kind_of([&] { t.reshape({4, 2}); }) == ErrorKind::kShape);
  t[0] = std::nanf("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("identity kernel reproduces the input") {
  Rng rng(1);
  auto x = gradcheck::random_tensor({1, 5, 4, 1}, rng);
  Tensor<double> k({3, 3, 1, 1}), b({1});
  k[4] = 1.0;  // centre tap
  CHECK(conv2d_forward(x, k, b) == x);
}

TEST_CASE("all-ones kernel on a constant field gives 9c inside") {
  Tensor<double> x({1, 6, 5, 1}, 2.0), k({3, 3, 1, 1}, 1.0), b({1});
  const auto y = conv2d_forward(x, k, b);
  for (std::size_t i = 1; i < 5; ++i) {
    for (std::size_t j = 1; j < 4; ++j) CHECK(y[i * 5 + j] == Approx(18.0));
  }
  CHECK(y[0] == Approx(8.0));  // corner sees 4 taps through the zero padding
}

TEST_CASE("conv channel mismatch is a shape error") {
  Tensor<float> x({1, 4, 4, 2}), k({3, 3, 3, 1}), b({1});
  CHECK(testing::error_kind_of([&] { conv2d_forward(x, k, b); }) == ErrorKind::kShape);
}

TEST_CASE("batchnorm train output is standardised per channel") {
  Rng rng(2);
  auto x = gradcheck::random_tensor({6, 4, 3, 3}, rng, -5.0, 9.0);
  Tensor<double> gamma({3}, 1.0), beta({3});
  BatchNormCache<double> cache;
  const auto y = batchnorm_forward_train(x, gamma, beta, cache);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (std::size_t i = c; i < y.size(); i += 3, ++n) {
      sum += y[i];
      sq += y[i] * y[i];
    }
    const double mean = sum / n;
    CHECK(std::abs(mean) <= 1e-4);
    CHECK(std::abs(sq / n - mean * mean - 1.0) <= 1e-4);
  }
}

TEST_CASE("batchnorm leaves a standardised batch almost unchanged") {
  Tensor<double> x({4, 1}, 0.0);
  x[0] = -1.5;
  x[1] = -0.5;
  x[2] = 0.5;
  x[3] = 1.5;
  const double sd = std::sqrt(1.25);
  for (auto& v : x.values()) v /= sd;  // mean 0, biased variance 1
  Tensor<double> gamma({1}, 1.0), beta({1});
  BatchNormCache<double> cache;
  const auto y = batchnorm_forward_train(x, gamma, beta, cache);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == Approx(x[i]).epsilon(1e-5));
}

TEST_CASE("batchnorm needs two samples in train mode") {
  Tensor<float> x({1, 2, 2, 1}), gamma({1}, 1.0f), beta({1});
  BatchNormCache<float> cache;
  CHECK(testing::error_kind_of([&] { batchnorm_forward_train(x, gamma, beta, cache); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("batchnorm running statistics and eval mode") {
  Tensor<double> x({2, 1}), gamma({1}, 2.0), beta({1}, 0.5), rm({1}, 0.0), rv({1}, 1.0);
  x[0] = 1.0;
  x[1] = 3.0;
  BatchNormCache<double> cache;
  batchnorm_forward_train(x, gamma, beta, cache);
  batchnorm_update_running(cache, rm, rv);
  CHECK(rm[0] == Approx(0.2));        // 0.9 * 0 + 0.1 * 2
  CHECK(rv[0] == Approx(0.9 + 0.1));  // biased batch variance 1
  const auto y = batchnorm_forward_eval(x, gamma, beta, rm, rv);
  CHECK(y[0] == Approx(2.0 * (1.0 - 0.2) / std::sqrt(1.0 + 1e-5) + 0.5));
}

TEST_CASE("meanpool shapes, constants and gradient spread") {
  Tensor<float> x({1, 1024, 36, 1}, 3.0f);
  const auto y = meanpool_forward(x);
  CHECK(y.shape() == Shape{1, 341, 18, 1});
  for (float v : y.values()) CHECK(v == Approx(3.0f));
  Tensor<double> dy({1, 1, 1, 1}, 1.0);
  const auto dx = meanpool_backward(dy, {1, 4, 3, 1});
  for (std::size_t i = 0; i < 3 * 3; ++i) {
    const std::size_t r = i / 3, c = i % 3;
    CHECK(dx[r * 3 + c] == Approx(r < 3 && c < 2 ? 1.0 / 6.0 : 0.0));
  }
  Tensor<float> small({1, 2, 2, 1});
  CHECK(testing::error_kind_of([&] { meanpool_forward(small); }) == ErrorKind::kShape);
}

TEST_CASE("l2 normalisation") {
  const std::vector<double> v = {3.0, 4.0};
  const auto u = l2_normalize<double>(v);
  CHECK(u[0] == Approx(0.6));
  CHECK(u[1] == Approx(0.8));
  const std::vector<double> zero = {0.0, 0.0};
  CHECK(testing::error_kind_of([&] { l2_normalize<double>(zero); }) == ErrorKind::kNumeric);
}

TEST_CASE("dropout is the identity in eval mode and inverted in train mode") {
  Rng rng(4);
  auto x = gradcheck::random_tensor({100, 100}, rng);
  Tensor<double> mask;
  CHECK(dropout_forward(x, 0.3, Mode::kEval, rng, mask) == x);
  CHECK(mask.size() == 0);
  const auto y = dropout_forward(x, 0.3, Mode::kTrain, rng, mask);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] == 0.0) {
      ++dropped;
    } else {
      CHECK(y[i] == Approx(x[i] / 0.7));
    }
  }
  CHECK(static_cast<double>(dropped) / x.size() == Approx(0.3).margin(0.02));
  Rng a(9), b(9);
  Tensor<double> m1, m2;
  CHECK(dropout_forward(x, 0.2, Mode::kTrain, a, m1) == dropout_forward(x, 0.2, Mode::kTrain, b, m2));
}

TEST_CASE("every op passes the finite-difference check") {
  for (const auto& r : gradcheck::run_all(20240601)) {
    INFO(r.name << ": probes " << r.probes << ", failures " << r.failures << ", worst " << r.worst);
    CHECK(r.ok());
  }
}

TEST_CASE("no op produces non-finite values from large finite inputs") {
  Rng rng(6);
  auto x = gradcheck::random_tensor({2, 6, 4, 2}, rng, -1e3, 1e3);
  auto k = gradcheck::random_tensor({3, 3, 2, 2}, rng);
  Tensor<double> b({2}), gamma({2}, 1.0), beta({2});
  BatchNormCache<double> cache;
  CHECK(conv2d_forward(x, k, b).all_finite());
  CHECK(batchnorm_forward_train(x, gamma, beta, cache).all_finite());
  CHECK(meanpool_forward(x).all_finite());
  std::vector<double> norms;
  CHECK(l2_normalize_forward(gradcheck::random_tensor({3, 4}, rng, -1e3, 1e3), norms).all_finite());
}

namespace {

double adam_once(double g, double lr, std::size_t steps) {
  Tensor<double> p({1}, 0.0), grad({1}, g);
  AdamState<double> st;
  st.lr = lr;
  std::vector<Tensor<double>*> ps = {&p};
  std::vector<const Tensor<double>*> gs = {&grad};
  double last = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double before = p[0];
    adam_step<double>(ps, gs, st);
    last = p[0] - before;
  }
  return last;
}

}  // namespace

TEST_CASE("Adam closed-form steps") {
  CHECK(adam_once(0.0, 0.1, 5) == 0.0);
  CHECK(adam_once(1.0, 0.1, 1) == Approx(-0.1).epsilon(1e-6));
  CHECK(adam_once(0.37, 1e-3, 500) == Approx(-1e-3).epsilon(1e-4));
}

TEST_CASE("Adam rejects a NaN gradient without touching parameters") {
  Tensor<float> p({2}, 1.0f), g({2}, 0.5f);
  g[1] = std::nanf("");
  AdamState<float> st;
  std::vector<Tensor<float>*> ps = {&p};
  std::vector<const Tensor<float>*> gs = {&g};
  CHECK(testing::error_kind_of([&] { adam_step<float>(ps, gs, st); }) == ErrorKind::kNumeric);
  CHECK(p[0] == 1.0f);
  CHECK(st.step == 0);
}

TEST_CASE("checkpoint round trip with and without Adam state") {
  testing::TempDir dir("ckpt");
  Rng rng(8);
  Checkpoint c;
  c.k = 2;
  c.e = 8;
  c.tensors.push_back({"a", gradcheck::random_tensor({2, 3}, rng).cast<float>()});
  c.tensors.push_back({"b", gradcheck::random_tensor({4}, rng).cast<float>()});
  save_checkpoint(c, dir / "a.ckpt");
  CHECK(load_checkpoint(dir / "a.ckpt") == c);
  c.adam = AdamSnapshot{12, 5e-5, 0.9, 0.999, 1e-8, {{"a", c.tensors[0].value, c.tensors[0].value}}};
  save_checkpoint(c, dir / "b.ckpt");
  CHECK(load_checkpoint(dir / "b.ckpt") == c);

  auto bytes = encode_checkpoint(c);
  bytes[1] = 'Z';
  CHECK(testing::error_kind_of([&] { decode_checkpoint(bytes); }) == ErrorKind::kFormat);
  bytes = encode_checkpoint(c);
  bytes.pop_back();
  CHECK(testing::error_kind_of([&] { decode_checkpoint(bytes); }) == ErrorKind::kFormat);
}
