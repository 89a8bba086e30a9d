#include <gtest/gtest.h>

#include "omnigf/model/gaze_heads.hpp"
#include "omnigf/train/objectives.hpp"
#include "testutil.hpp"

using namespace omnigf;

TEST(RenderGaussian, PeakAtCellCenter) {
  // target exactly on a cell center -> that cell holds exp(0) = 1
  const Point t{(10 + 0.5) / 64.0, (20 + 0.5) / 64.0};
  auto m = render_gaussian<double>(t, 64, 64, 3.0);
  EXPECT_DOUBLE_EQ(m.at(20, 10), 1.0);
  double mx = 0;
  for (auto v : m.data) mx = std::max(mx, v);
  EXPECT_DOUBLE_EQ(mx, 1.0);
}

TEST(RenderGaussian, ReflectionSymmetryAboutCenteredTarget) {
  auto m = render_gaussian<double>({0.5, 0.5}, 64, 64, 3.0);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      EXPECT_NEAR(m.at(r, c), m.at(63 - r, 63 - c), 1e-12);
}

TEST(RenderGaussian, MassMatchesTwoPiSigmaSq) {
  const double sigma = 3.0;
  auto m = render_gaussian<double>({0.5, 0.5}, 64, 64, sigma);
  double sum = 0;
  for (auto v : m.data) sum += v;
  const double expected = 2.0 * 3.14159265358979323846 * sigma * sigma;  // 56.5487
  EXPECT_NEAR(sum, expected, 0.01 * expected);
}

TEST(LossLm, PerfectPredictionIsZero) {
  const int n = 6, k = 11;
  Tensor<double> lt({n, k});
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    ids.push_back((i * 3) % k);
    lt.at(i, ids.back()) = 200.0;  // softmax mass ~1 on the target
  }
  auto logits = make_var(lt, true);
  auto l = loss_lm(logits, ids, std::vector<double>(n, 1.0));
  EXPECT_NEAR(l->value.item(), 0.0, 1e-12);
}

TEST(LossLm, UniformLogitsGiveLnK) {
  const int n = 4, k = 258;
  auto logits = make_var(Tensor<double>({n, k}), true);
  auto l = loss_lm(logits, std::vector<int>(n, 7), std::vector<double>(n, 1.0));
  EXPECT_NEAR(l->value.item(), std::log(258.0), 1e-12);
}

TEST(LossLm, MaskedPositionsHaveZeroGradient) {
  Rng rng(1);
  const int n = 5, k = 9;
  auto logits = make_var(randn_tensor<double>({n, k}, rng, 1.0), true);
  std::vector<int> ids{0, 1, 2, 3, 4};
  std::vector<double> mask{1, 0, 1, 0, 1};
  auto l = loss_lm(logits, ids, mask);
  backward(l);
  for (int j = 0; j < k; ++j) {
    EXPECT_EQ(logits->grad.at(1, j), 0.0);
    EXPECT_EQ(logits->grad.at(3, j), 0.0);
  }
  double s = 0;
  for (int j = 0; j < k; ++j) s += std::abs(logits->grad.at(0, j));
  EXPECT_GT(s, 0.0);
}

TEST(LossLm, AllZeroMaskIsZeroWithWarning) {
  auto logits = make_var(Tensor<double>({2, 4}), true);
  auto l = loss_lm(logits, {0, 1}, {0.0, 0.0});
  EXPECT_EQ(l->value.item(), 0.0);
}

TEST(LossHm, IdentityAndSingleCell) {
  Rng rng(2);
  Tensor<double> gt = randn_tensor<double>({64, 64}, rng, 1.0);
  auto pred = make_var(gt, true);
  EXPECT_DOUBLE_EQ(loss_hm(pred, gt, true)->value.item(), 0.0);

  auto zeros = make_var(Tensor<double>({64, 64}), true);
  Tensor<double> one_cell({64, 64});
  one_cell.at(13, 57) = 1.0;
  EXPECT_DOUBLE_EQ(loss_hm(zeros, one_cell, true)->value.item(), 1.0 / 4096.0);

  // outside persons contribute zero regardless of prediction
  EXPECT_DOUBLE_EQ(loss_hm(pred, one_cell, false)->value.item(), 0.0);
}

TEST(LossHm, ShapeMismatchRejected) {
  auto pred = make_var(Tensor<double>({8, 8}), true);
  EXPECT_THROW(loss_hm(pred, Tensor<double>({4, 4}), true), std::invalid_argument);
}

TEST(LossBce, KnownValues) {
  auto z = make_var(Tensor<double>({1, 1}), true);  // logit 0
  Tensor<double> one({1, 1}, {1.0});
  EXPECT_NEAR(loss_inout(z, one)->value.item(), std::log(2.0), 1e-12);

  auto z10 = make_var(Tensor<double>({1, 1}, {10.0}), true);
  // independent numeric oracle: ln(1 + e^-10)
  const double expected = std::log1p(std::exp(-10.0));
  EXPECT_NEAR(loss_inout(z10, one)->value.item(), expected, 1e-15);
  EXPECT_NEAR(expected, 4.5398e-5, 1e-8);
}

TEST(TotalLoss, PaperWeightArithmetic) {
  auto c = [](double v) { return make_var(Tensor<double>::scalar(v), true); };
  LossWeights w;  // paper defaults (1.0, 10.0, 0.1, 1.0)
  auto total = total_loss(c(0.5), c(0.01), c(0.2), c(0.1), w);
  EXPECT_DOUBLE_EQ(total->value.item(), 0.72);

  auto zero = total_loss(c(0.0), c(0.0), c(0.0), c(0.0), w);
  EXPECT_DOUBLE_EQ(zero->value.item(), 0.0);

  LossWeights w2 = w;
  w2.hm *= 2;
  auto doubled = total_loss(c(0.5), c(0.01), c(0.2), c(0.1), w2);
  EXPECT_DOUBLE_EQ(doubled->value.item() - total->value.item(), 10.0 * 0.01);
}

TEST(TotalLoss, NonnegativeOnRandomInputs) {
  Rng rng(3);
  for (int it = 0; it < 50; ++it) {
    const int n = 4, k = 7;
    auto logits = make_var(randn_tensor<double>({n, k}, rng, 2.0), true);
    std::vector<int> ids;
    for (int i = 0; i < n; ++i) ids.push_back(rng.uniform_int(0, k - 1));
    auto lm = loss_lm(logits, ids, std::vector<double>(n, 1.0));
    auto pred = make_var(randn_tensor<double>({8, 8}, rng, 1.0), true);
    auto hm = loss_hm(sigmoid(pred), render_gaussian<double>({0.3, 0.7}, 8, 8, 2.0), true);
    auto io = make_var(randn_tensor<double>({3, 1}, rng, 3.0), true);
    Tensor<double> iol({3, 1});
    iol.at(1, 0) = 1;
    auto l_io = loss_inout(io, iol);
    auto soc = make_var(randn_tensor<double>({2, 3}, rng, 3.0), true);
    Tensor<double> socl({2, 3});
    socl.at(0, 1) = 1;
    auto l_soc = loss_social(soc, socl);
    for (auto* l : {&lm, &hm, &l_io, &l_soc}) EXPECT_GE((*l)->value.item(), 0.0);
    auto total = total_loss(lm, hm, l_io, l_soc, LossWeights{});
    EXPECT_GE(total->value.item(), 0.0);
    EXPECT_TRUE(std::isfinite(total->value.item()));
  }
}

TEST(Consistency, GaussianPeakCellEqualsArgmaxDecoding) {
  // render_gaussian's peak cell and heatmap_to_point's argmax agree for a
  // grid of targets (full exhaustive sweep lives in the acceptance suite).
  for (double ty = 0.05; ty < 1.0; ty += 0.17)
    for (double tx = 0.05; tx < 1.0; tx += 0.13) {
      auto m = render_gaussian<double>({tx, ty}, 64, 64, 3.0);
      auto p = heatmap_to_point(m);
      const int expect_c = std::min(63, static_cast<int>(tx * 64));
      const int expect_r = std::min(63, static_cast<int>(ty * 64));
      EXPECT_EQ(static_cast<int>(p.x * 64), expect_c);
      EXPECT_EQ(static_cast<int>(p.y * 64), expect_r);
    }
}
