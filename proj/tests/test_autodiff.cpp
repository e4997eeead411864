#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ssmt/errors.hpp"
#include "ssmt/gradcheck.hpp"
#include "ssmt/ops.hpp"
#include "ssmt/optim.hpp"

using namespace ssmt;

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();

Tensor random_tensor(std::mt19937_64& rng, Shape shape, float lo = -1.0f, float hi = 1.0f, bool grad = true) {
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (float& x : v) x = d(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

std::function<Tensor()> weighted(std::function<Tensor()> f, Tensor w) {
  return [f = std::move(f), w] { return sum(mul(f(), w)); };
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {3.5f, -2, 0.25f, 9});
  Tensor c = matmul(eye, b);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(c.at(i), b.at(i));
}

TEST(Matmul, HandArithmetic) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {0, 1});
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.at(0), 2.0f);
  EXPECT_EQ(c.at(1), 4.0f);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2});
  Tensor w = random_tensor(rng, {3, 2}, -1, 1, false);
  EXPECT_LT(gradient_rel_error(weighted([=] { return matmul(a, b); }, w), {a, b}), 1e-3);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
  }
}

TEST(Softmax, UniformOnEqualLogits) {
  Tensor y = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), 1.0f / 3.0f, 1e-7);
}

TEST(Softmax, NegativeInfinityGetsExactlyZero) {
  Tensor y = softmax(Tensor::from({2}, {-kInf, 0}), 0);
  EXPECT_EQ(y.at(0), 0.0f);
  EXPECT_EQ(y.at(1), 1.0f);
}

TEST(Softmax, MatchesHighPrecisionOracle) {
  Tensor y = softmax(Tensor::from({3}, {1, 2, 3}), 0);
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  EXPECT_NEAR(y.at(0), static_cast<double>(std::exp(1.0L) / z), 1e-6);
  EXPECT_NEAR(y.at(1), static_cast<double>(std::exp(2.0L) / z), 1e-6);
  EXPECT_NEAR(y.at(2), static_cast<double>(std::exp(3.0L) / z), 1e-6);
}

TEST(Softmax, AllNegativeInfinityRowIsDegenerate) {
  EXPECT_THROW(softmax(Tensor::from({2, 2}, {0, 1, -kInf, -kInf}), 1), DegenerateSoftmax);
}

TEST(Softmax, RowsAreDistributionsProperty) {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution mask(0.3);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x = random_tensor(rng, {4, 7}, -20, 20, false);
    auto v = x.mutable_data();
    for (int r = 0; r < 4; ++r)
      for (int c = 1; c < 7; ++c)  // column 0 stays finite
        if (mask(rng)) v[r * 7 + c] = -kInf;
    Tensor y = softmax(x, 1);
    for (int r = 0; r < 4; ++r) {
      double total = 0.0;
      for (int c = 0; c < 7; ++c) {
        const float p = y.at(r * 7 + c);
        EXPECT_GE(p, 0.0f);
        if (x.at(r * 7 + c) == -kInf) {
          EXPECT_EQ(p, 0.0f);
        }
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tensor y = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), Tensor::full({3}, 1), Tensor::zeros({3}));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(y.at(i), 0.0f);
}

TEST(LayerNorm, ZeroGammaReturnsBeta) {
  std::mt19937_64 rng(3);
  Tensor b = Tensor::from({4}, {0.5f, -1, 2, 3});
  Tensor y = layer_norm(random_tensor(rng, {3, 4}), Tensor::zeros({4}), b);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(y.at(r * 4 + j), b.at(j));
}

TEST(LayerNorm, UnitGammaNormalizesRows) {
  std::mt19937_64 rng(4);
  Tensor y = layer_norm(random_tensor(rng, {5, 16}, -3, 7), Tensor::full({16}, 1), Tensor::zeros({16}));
  for (int r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (int j = 0; j < 16; ++j) m += y.at(r * 16 + j);
    m /= 16;
    for (int j = 0; j < 16; ++j) v += (y.at(r * 16 + j) - m) * (y.at(r * 16 + j) - m);
    v /= 16;
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-3);  // eps shifts the variance by O(eps / var)
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor(rng, {2, 8}, -2, 2);
  Tensor g = random_tensor(rng, {8}, 0.5f, 1.5f), b = random_tensor(rng, {8});
  Tensor w = random_tensor(rng, {2, 8}, -1, 1, false);
  EXPECT_LT(gradient_rel_error(weighted([=] { return layer_norm(x, g, b); }, w), {x, g, b}), 1e-3);
}

TEST(Elementwise, ClosedForms) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5f);
  EXPECT_EQ(mean(Tensor::from({4}, {1, 2, 3, 4})).item(), 2.5f);
  EXPECT_EQ(relu(Tensor::from({2}, {-1, 2})).at(0), 0.0f);
  EXPECT_EQ(sqrt(Tensor::scalar(9)).item(), 3.0f);
}

TEST(Elementwise, GeluGradientAtProbePoints) {
  for (float v : {-1.0f, 0.0f, 1.0f}) {
    Tensor x = Tensor::scalar(v, true);
    EXPECT_LT(gradient_rel_error([=] { return gelu(x); }, {x}), 1e-3) << "x = " << v;
  }
}

TEST(Elementwise, RejectsNonBroadcastableShapes) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(mul(Tensor::zeros({2, 3}), Tensor::zeros({3})), DimensionError);
}

TEST(Conv2d, UnitOneByOneKernelIsIdentity) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor(rng, {1, 5, 5}, -1, 1, false);
  Tensor y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1), 1, 0);
  for (int i = 0; i < 25; ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Conv2d, OnesKernelCountsNeighbours) {
  Tensor y = conv2d(Tensor::full({1, 5, 5}, 1), Tensor::full({1, 1, 3, 3}, 1), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 5, 5}));
  EXPECT_EQ(y.at(2 * 5 + 2), 9.0f);
  EXPECT_EQ(y.at(0), 4.0f);
  EXPECT_EQ(y.at(2), 6.0f);
}

TEST(Conv2d, OutputSizeFormula) {
  Tensor y = conv2d(Tensor::zeros({2, 7, 6}), Tensor::zeros({3, 2, 3, 3}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{3, 4, 3}));
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor(rng, {2, 6, 6}), w = random_tensor(rng, {3, 2, 3, 3}, -0.5f, 0.5f);
  for (int stride : {1, 2}) {
    Tensor probe = conv2d(x, w, stride, 1);
    Tensor r = random_tensor(rng, probe.shape(), -1, 1, false);
    EXPECT_LT(gradient_rel_error(weighted([=] { return conv2d(x, w, stride, 1); }, r), {x, w}), 1e-3);
  }
}

TEST(Conv2d, KernelLargerThanPaddedInput) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), 1, 1), DimensionError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 2, 2}), 1, 1), DimensionError);
}

TEST(Resample, ConstantStaysConstant) {
  Tensor y = resample2d(Tensor::full({1, 2, 2}, 7), 4, 4, ResampleMode::bilinear);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(y.at(i), 7.0f);
}

TEST(Resample, BilinearExactOnRamp) {
  std::vector<float> v(16);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) v[i * 4 + j] = static_cast<float>(i);
  Tensor y = resample2d(Tensor::from({4, 4}, v), 8, 8, ResampleMode::bilinear);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(y.at(i * 8 + j), i * 3.0 / 7.0, 1e-6);
}

TEST(Resample, NearestPreservesValueSet) {
  Tensor x = Tensor::from({2, 3}, {1, 5, 9, 2, 6, 4});
  Tensor y = resample2d(x, 5, 7, ResampleMode::nearest);
  for (float v : y.data()) {
    EXPECT_TRUE(std::find(x.data().begin(), x.data().end(), v) != x.data().end());
  }
}

namespace {

// Independent scalar align-corners bilinear interpolation in double.
double bilinear_oracle(const std::vector<double>& img, int h, int w, int oy, int ox, int oh, int ow) {
  const double sy = oh == 1 ? 0.0 : oy * double(h - 1) / (oh - 1);
  const double sx = ow == 1 ? 0.0 : ox * double(w - 1) / (ow - 1);
  const int y0 = std::min(h - 1, int(std::floor(sy))), x0 = std::min(w - 1, int(std::floor(sx)));
  const int y1 = std::min(h - 1, y0 + 1), x1 = std::min(w - 1, x0 + 1);
  const double fy = sy - y0, fx = sx - x0;
  auto at = [&](int y, int x) { return img[static_cast<std::size_t>(y) * w + x]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

TEST(Resample, DownThenUpMatchesScalarOracle) {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor(rng, {8, 8}, 0, 1, false);
  Tensor down = resample2d(x, 5, 3, ResampleMode::bilinear);
  Tensor up = resample2d(down, 8, 8, ResampleMode::bilinear);
  std::vector<double> src(x.data().begin(), x.data().end());
  std::vector<double> mid(15);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) mid[i * 3 + j] = bilinear_oracle(src, 8, 8, i, j, 5, 3);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(up.at(i * 8 + j), bilinear_oracle(mid, 5, 3, i, j, 8, 8), 1e-5);
}

TEST(Backward, SumGivesOnes) {
  Tape::active().clear();
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  backward(sum(x));
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
  Tape::active().clear();
}

TEST(Backward, MeanOfSquaresClosedForm) {
  Tape::active().clear();
  Tensor x = Tensor::from({4}, {1, -2, 3, 0.5f}, true);
  backward(mean(square(x)));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(x.grad()[i], 2.0f * x.at(i) / 4.0f, 1e-7);
  Tape::active().clear();
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tape::active().clear();
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  backward(loss);
  EXPECT_FLOAT_EQ(x.grad()[0], 4.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 8.0f);
  Tape::active().clear();
}

TEST(Backward, NonScalarLossRejected) {
  Tape::active().clear();
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(mul_scalar(x, 2)), ContractError);
  Tape::active().clear();
}

TEST(Backward, LinearityOfAccumulation) {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 3});
  auto l1 = [&] { return sum(sigmoid(matmul(a, b))); };
  auto l2 = [&] { return mean(square(transpose(a))); };
  Tape& tape = Tape::active();
  tape.clear();
  backward(add(l1(), l2()));
  const std::vector<float> joint(a.grad().begin(), a.grad().end());
  a.zero_grad();
  b.zero_grad();
  tape.clear();
  Tensor x1 = l1();
  Tensor x2 = l2();
  backward(x1);
  backward(x2);
  for (std::size_t i = 0; i < joint.size(); ++i) EXPECT_NEAR(a.grad()[i], joint[i], 1e-6);
  tape.clear();
}

TEST(Backward, TapeReplaysInReverseOrder) {
  Tape& tape = Tape::active();
  tape.clear();
  Tensor x = Tensor::scalar(0.3f, true);
  Tensor y = sigmoid(mul_scalar(add_scalar(x, 1), 2));
  EXPECT_EQ(tape.size(), 3u);
  backward(y);
  const float s = 1.0f / (1.0f + std::exp(-2.6f));
  EXPECT_NEAR(x.grad()[0], 2.0f * s * (1 - s), 1e-6);
  tape.clear();
}

TEST(Backward, NoGradGuardSkipsRecording) {
  Tape& tape = Tape::active();
  tape.clear();
  Tensor x = Tensor::scalar(1.0f, true);
  {
    NoGradGuard guard;
    Tensor y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Determinism, IdenticalInputsGiveBitIdenticalOutputs) {
  auto run = [] {
    std::mt19937_64 rng(12);
    Tensor x = random_tensor(rng, {2, 8, 8}), w = random_tensor(rng, {4, 2, 3, 3});
    Tensor y = softmax(reshape(gelu(conv2d(x, w, 2, 1)), {4, 16}), 1);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
  Tape::active().clear();
}

TEST(GradientSuite, EveryPrimitivePasses) {
  for (const GradCheckResult& r : primitive_gradient_checks()) {
    EXPECT_TRUE(r.pass()) << r.name << " rel err " << r.rel_err;
  }
}

TEST(Adam, ZeroGradientNoDecayLeavesParameter) {
  std::vector<float> p{1.5f, -2.0f};
  std::vector<float> g{0.0f, 0.0f};
  AdamState st;
  AdamHyper h;
  h.weight_decay = 0.0f;
  adam_step(p, g, st, h);
  EXPECT_EQ(p[0], 1.5f);
  EXPECT_EQ(p[1], -2.0f);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  std::vector<float> p{0.0f, 0.0f, 0.0f};
  std::vector<float> g{0.3f, -7.0f, 1e-3f};
  AdamState st;
  AdamHyper h;
  h.weight_decay = 0.0f;
  adam_step(p, g, st, h);
  EXPECT_NEAR(p[0], -1e-3, 1e-8);
  EXPECT_NEAR(p[1], 1e-3, 1e-8);
  EXPECT_NEAR(p[2], -1e-3, 1e-7);
}

TEST(Adam, QuadraticDecreasesMonotonically) {
  std::vector<float> w{1.0f};
  AdamState st;
  AdamHyper h;
  h.lr = 0.05f;
  float prev = w[0] * w[0];
  for (int i = 0; i < 10; ++i) {
    std::vector<float> g{2.0f * w[0]};
    adam_step(w, g, st, h);
    const float f = w[0] * w[0];
    EXPECT_LT(f, prev);
    prev = f;
  }
  EXPECT_EQ(st.step, 10);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  std::vector<float> p{1.0f};
  std::vector<float> g{std::numeric_limits<float>::quiet_NaN()};
  AdamState st;
  try {
    adam_step(p, g, st, AdamHyper{}, "encoder.patch_proj");
    FAIL();
  } catch (const NumericFault& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.patch_proj"), std::string::npos);
  }
}

TEST(CosineLr, Endpoints) {
  EXPECT_FLOAT_EQ(cosine_lr(0, 100, 1e-3f, 1e-6f), 1e-3f);
  EXPECT_FLOAT_EQ(cosine_lr(100, 100, 1e-3f, 1e-6f), 1e-6f);
  EXPECT_FLOAT_EQ(cosine_lr(50, 100, 1e-3f, 1e-6f), (1e-3f + 1e-6f) / 2);
  EXPECT_FLOAT_EQ(cosine_lr(150, 100, 1e-3f, 1e-6f), 1e-6f);
}

TEST(CosineLr, NonIncreasing) {
  float prev = 1.0f;
  for (int s = 0; s <= 40; ++s) {
    const float lr = cosine_lr(s, 40, 1e-3f, 1e-6f);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}
