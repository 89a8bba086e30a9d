#include <gtest/gtest.h>

#include "omnigf/core/autodiff.hpp"
#include "omnigf/core/image.hpp"
#include "omnigf/core/nn.hpp"
#include "omnigf/core/rng.hpp"
#include "testutil.hpp"

using namespace omnigf;

TEST(Tensor, ShapeAndAccess) {
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.size(), 6);
  t.at(1, 2) = 5.f;
  EXPECT_EQ(t.data[5], 5.f);
  EXPECT_THROW(Tensor<float>({2}, {1.f}), std::invalid_argument);
}

TEST(Rng, DeterministicAndSplittable) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42);
  Rng c1 = c.split(1), c2 = c.split(2);
  EXPECT_NE(c1.next_u64(), c2.next_u64());
  // splitting does not advance the parent
  Rng d(42);
  (void)d.split(1);
  Rng e(42);
  EXPECT_EQ(d.next_u64(), e.next_u64());
}

TEST(Rng, UniformRangeAndNormal) {
  Rng r(7);
  double mean = 0;
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    mean += r.normal();
  }
  EXPECT_NEAR(mean / 10000, 0.0, 0.05);
}

namespace {

Var<double> randvar(std::vector<int> shape, Rng& rng, bool grad = true) {
  return make_var(randn_tensor<double>(std::move(shape), rng, 1.0), grad);
}

}  // namespace

TEST(Autodiff, MatmulLinearGradients) {
  Rng rng(1);
  auto a = randvar({4, 5}, rng);
  auto w = randvar({5, 3}, rng);
  auto b = randvar({3}, rng);
  Tensor<double> tgt = randn_tensor<double>({4, 3}, rng, 1.0);
  auto rebuild = [&]() { return mse_sum(linear(a, w, b), tgt); };
  Rng pick(2);
  auto res = test::check_gradients({a, w, b}, rebuild, 20, pick);
  EXPECT_LT(res.worst_rel, 1e-4);
}

TEST(Autodiff, ElementwiseOpsGradients) {
  Rng rng(3);
  auto x = randvar({3, 7}, rng);
  Tensor<double> tgt = randn_tensor<double>({3, 7}, rng, 1.0);
  for (int which = 0; which < 3; ++which) {
    auto rebuild = [&]() {
      Var<double> y = which == 0 ? gelu(x) : which == 1 ? sigmoid(x) : relu(scale(x, 1.3));
      return mse_sum(y, tgt);
    };
    Rng pick(4 + which);
    auto res = test::check_gradients({x}, rebuild, 20, pick);
    EXPECT_LT(res.worst_rel, 2e-4) << "op " << which;
    x->zero_grad();
  }
}

TEST(Autodiff, LayerNormGradients) {
  Rng rng(5);
  auto x = randvar({4, 8}, rng);
  auto g = make_var(Tensor<double>::full({8}, 1.1), true);
  auto b = randvar({8}, rng);
  Tensor<double> tgt = randn_tensor<double>({4, 8}, rng, 1.0);
  auto rebuild = [&]() { return mse_sum(layer_norm(x, g, b), tgt); };
  Rng pick(6);
  auto res = test::check_gradients({x, g, b}, rebuild, 25, pick);
  EXPECT_LT(res.worst_rel, 1e-4);
}

TEST(Autodiff, AttentionGradients) {
  Rng rng(7);
  auto q = randvar({6, 8}, rng);
  auto k = randvar({6, 8}, rng);
  auto v = randvar({6, 8}, rng);
  Tensor<double> tgt = randn_tensor<double>({6, 8}, rng, 1.0);
  auto rebuild = [&]() { return mse_sum(causal_attention(q, k, v, 2), tgt); };
  Rng pick(8);
  auto res = test::check_gradients({q, k, v}, rebuild, 40, pick);
  EXPECT_LT(res.worst_rel, 1e-4);
}

TEST(Autodiff, RowOpsGradients) {
  Rng rng(9);
  auto x = randvar({6, 4}, rng);
  auto rows = randvar({2, 4}, rng);
  auto vec = randvar({4}, rng);
  Tensor<double> tgt = randn_tensor<double>({3, 4}, rng, 1.0);
  auto rebuild = [&]() {
    auto y = overwrite_rows(x, {1, 4}, rows);
    auto z = rowwise_mul(y, vec);
    return mse_sum(gather_rows(z, {0, 1, 4}), tgt);
  };
  Rng pick(10);
  auto res = test::check_gradients({x, rows, vec}, rebuild, 25, pick);
  EXPECT_LT(res.worst_rel, 1e-4);
}

TEST(Autodiff, ConvGradients) {
  Rng rng(11);
  auto x = randvar({2, 6, 6}, rng);
  auto w = randvar({3, 2, 3, 3}, rng);
  auto b = randvar({3}, rng);
  Tensor<double> tgt = randn_tensor<double>({3, 3, 3}, rng, 1.0);
  auto rebuild = [&]() { return mse_sum(conv2d(x, w, b, 2, 1), tgt); };
  Rng pick(12);
  auto res = test::check_gradients({x, w, b}, rebuild, 30, pick);
  EXPECT_LT(res.worst_rel, 1e-4);
}

TEST(Autodiff, ConvTransposeGradients) {
  Rng rng(13);
  auto x = randvar({4, 3, 3}, rng);
  auto w = randvar({4, 2, 4, 4}, rng);
  auto b = randvar({2}, rng);
  Tensor<double> tgt = randn_tensor<double>({2, 6, 6}, rng, 1.0);
  auto rebuild = [&]() { return mse_sum(conv_transpose2d(x, w, b, 2, 1), tgt); };
  Rng pick(14);
  auto res = test::check_gradients({x, w, b}, rebuild, 30, pick);
  EXPECT_LT(res.worst_rel, 1e-4);
}

TEST(Autodiff, LossOpsGradients) {
  Rng rng(15);
  auto logits = randvar({5, 9}, rng);
  std::vector<int> ids{1, 4, 0, 8, 2};
  std::vector<double> mask{1, 0, 1, 1, 0};
  auto rebuild = [&]() { return masked_ce_sum(logits, ids, mask); };
  Rng pick(16);
  auto res = test::check_gradients({logits}, rebuild, 30, pick);
  EXPECT_LT(res.worst_rel, 1e-4);

  // masked rows carry exactly zero gradient
  for (int j = 0; j < 9; ++j) {
    EXPECT_EQ(logits->grad.at(1, j), 0.0);
    EXPECT_EQ(logits->grad.at(4, j), 0.0);
  }

  auto z = randvar({4, 1}, rng);
  Tensor<double> labels({4, 1}, {1, 0, 1, 0});
  auto rebuild2 = [&]() { return bce_logits_sum(z, labels); };
  Rng pick2(17);
  auto res2 = test::check_gradients({z}, rebuild2, 8, pick2);
  EXPECT_LT(res2.worst_rel, 1e-4);
}

TEST(Autodiff, PoolingAndGridGradients) {
  Rng rng(18);
  auto x = randvar({3, 4, 4}, rng);
  Tensor<double> tgt = randn_tensor<double>({1, 3}, rng, 1.0);
  auto rebuild = [&]() { return mse_sum(global_avg_pool(x), tgt); };
  Rng pick(19);
  EXPECT_LT(test::check_gradients({x}, rebuild, 20, pick).worst_rel, 1e-4);

  auto tok = randvar({9, 5}, rng);
  Tensor<double> tgt2 = randn_tensor<double>({5, 3, 3}, rng, 1.0);
  auto rebuild2 = [&]() { return mse_sum(tokens_to_grid(tok, 3), tgt2); };
  Rng pick2(20);
  EXPECT_LT(test::check_gradients({tok}, rebuild2, 20, pick2).worst_rel, 1e-4);
}

TEST(Autodiff, GradAccumulationAcrossBackwards) {
  Rng rng(21);
  auto x = randvar({2, 2}, rng);
  Tensor<double> tgt({2, 2});
  auto l1 = mse_sum(x, tgt);
  backward(l1);
  Tensor<double> g1 = x->grad;
  auto l2 = mse_sum(x, tgt);
  backward(l2);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x->grad.data[i], 2 * g1.data[i]);
}

TEST(Kernels, RowIndependence) {
  // The value of row i of a matmul must not depend on how many rows are
  // computed together (the contract the KV-cache path relies on).
  Rng rng(22);
  Tensor<float> a = randn_tensor<float>({7, 12}, rng, 1.0);
  Tensor<float> w = randn_tensor<float>({12, 9}, rng, 1.0);
  Tensor<float> full({7, 9});
  kern::matmul_acc(a.ptr(), 7, 12, w.ptr(), 9, full.ptr());
  for (int i = 0; i < 7; ++i) {
    Tensor<float> one({1, 9});
    kern::matmul_acc(a.ptr() + i * 12, 1, 12, w.ptr(), 9, one.ptr());
    for (int j = 0; j < 9; ++j) EXPECT_EQ(full.at(i, j), one.at(0, j));
  }
}

TEST(Image, PpmRoundTrip) {
  Raster img(5, 4);
  Rng rng(23);
  for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
  // quantize so the round trip is exact
  for (auto& v : img.rgb) v = static_cast<float>(to_byte(v)) / 255.f;
  auto dir = test::tmpdir("img");
  write_ppm((dir / "t.ppm").string(), img);
  Raster back = read_ppm((dir / "t.ppm").string());
  ASSERT_EQ(back.h, img.h);
  ASSERT_EQ(back.w, img.w);
  for (size_t i = 0; i < img.rgb.size(); ++i) EXPECT_EQ(back.rgb[i], img.rgb[i]);
}

TEST(Image, Base64RoundTrip) {
  std::vector<std::uint8_t> data;
  for (int i = 0; i < 301; ++i) data.push_back(static_cast<std::uint8_t>(i * 7));
  EXPECT_EQ(base64_decode(base64_encode(data)), data);
}

TEST(Image, HsvHueRoundTrip) {
  for (int i = 0; i < 360; i += 7) {
    const double h = i / 360.0;
    float r, g, b;
    hsv_to_rgb(h, 1.0, 1.0, r, g, b);
    EXPECT_NEAR(rgb_to_hue(r, g, b), h, 1e-6) << "hue " << h;
  }
}
