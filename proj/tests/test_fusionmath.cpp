#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "salvs/fusionmath.hpp"
#include "support.hpp"

using namespace salvs;
using namespace salvs::fusion;
using salvs::test::expect_error;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Dense reference: full logits with explicit -inf entries, plain softmax.
Eigen::MatrixXd dense_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v,
                                const Eigen::MatrixXd& m, double d) {
  const Eigen::MatrixXd logits = (q * k.transpose() + m) / std::sqrt(d);
  Eigen::MatrixXd w(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    double s = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) s += std::exp(logits(i, j) - mx);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) w(i, j) = std::exp(logits(i, j) - mx) / s;
  }
  return w * v;
}

SaliencyMap random_map(std::mt19937_64& rng, int w, int h, bool binary) {
  std::uniform_real_distribution<double> u(0.02, 0.98);
  SaliencyMap m(w, h);
  for (double& x : m.values()) x = binary ? (u(rng) < 0.5 ? 0.0 : 1.0) : u(rng);
  return m;
}

}  // namespace

TEST(FuseTokens, TextTokenFirst) {
  const Eigen::RowVector2d t(9, 8);
  const Eigen::MatrixXd img{{1, 2}, {3, 4}, {5, 6}};
  const TokenMatrix x = fuse_tokens(t, img);
  EXPECT_EQ(x.rows(), 4);
  EXPECT_EQ(Eigen::RowVectorXd(x.row(0)), Eigen::RowVectorXd(t));
  EXPECT_EQ(Eigen::MatrixXd(x.bottomRows(3)), img);
  expect_error(ErrorCode::ShapeMismatch, [&] { fuse_tokens(Eigen::RowVector3d(1, 2, 3), img); });
  const Eigen::MatrixXd pt = Eigen::MatrixXd::Identity(2, 2), pi = 2 * Eigen::MatrixXd::Identity(2, 2);
  EXPECT_EQ(project_and_fuse(t, img, pt, pi).row(3), Eigen::RowVector2d(10, 12));
}

TEST(BuildMask, Pattern) {
  const AttentionMask m1 = build_mask(1);
  EXPECT_EQ(m1(0, 0), 0.0);
  EXPECT_EQ(m1(0, 1), kNegInf);
  EXPECT_EQ(m1(1, 0), 0.0);
  EXPECT_EQ(m1(1, 1), 0.0);
  const AttentionMask m = build_mask(6);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) EXPECT_EQ(m(i, j), (i == j || j == 0) ? 0.0 : kNegInf) << i << "," << j;
  expect_error(ErrorCode::InvalidArgument, [] { build_mask(0); });
}

TEST(MaskedAttention, ZeroQueriesAverageTextAndSelf) {
  std::mt19937_64 rng(1);
  const int L = 4, D = 3;
  const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(L + 1, D);
  const Eigen::MatrixXd v = random_matrix(rng, L + 1, D);
  const Eigen::MatrixXd out = masked_attention(z, z, v, build_mask(L), D);
  EXPECT_LT((out.row(0) - v.row(0)).norm(), 1e-15);
  for (int i = 1; i <= L; ++i) EXPECT_LT((out.row(i) - 0.5 * (v.row(0) + v.row(i))).norm(), 1e-15);
}

TEST(MaskedAttention, IdentityValuesExposeWeights) {
  std::mt19937_64 rng(2);
  const int L = 5, D = 4;
  const Eigen::MatrixXd q = random_matrix(rng, L + 1, D), k = random_matrix(rng, L + 1, D);
  const Eigen::MatrixXd out = masked_attention(q, k, Eigen::MatrixXd::Identity(L + 1, L + 1), build_mask(L), D);
  EXPECT_EQ(out, attention_weights(q, k, build_mask(L), D));
  for (int i = 0; i <= L; ++i) {
    EXPECT_NEAR(out.row(i).sum(), 1.0, 1e-12);
    for (int j = 1; j <= L; ++j) {
      if (j != i) {
        EXPECT_EQ(out(i, j), 0.0);
      }
    }
  }
}

TEST(MaskedAttention, MatchesDenseOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 60; ++t) {
    const int L = 1 + t % 16, D = 1 + (t * 7) % 32;
    const Eigen::MatrixXd q = random_matrix(rng, L + 1, D), k = random_matrix(rng, L + 1, D),
                          v = random_matrix(rng, L + 1, D);
    const auto m = build_mask(L);
    EXPECT_LT((masked_attention(q, k, v, m, D) - dense_attention(q, k, v, m, D)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(MaskedAttention, ImageTokenPermutationEquivariance) {
  std::mt19937_64 rng(4);
  const int L = 7, D = 5;
  const Eigen::MatrixXd q = random_matrix(rng, L + 1, D), k = random_matrix(rng, L + 1, D),
                        v = random_matrix(rng, L + 1, D);
  std::vector<int> perm(L + 1);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin() + 1, perm.end(), rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> P(L + 1);
  for (int i = 0; i <= L; ++i) P.indices()(i) = perm[i];
  const auto m = build_mask(L);
  const Eigen::MatrixXd a = P * masked_attention(q, k, v, m, D);
  const Eigen::MatrixXd b = masked_attention(P * q, P * k, P * v, m, D);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MaskedAttention, ShapeChecks) {
  const Eigen::MatrixXd q = Eigen::MatrixXd::Zero(3, 2);
  expect_error(ErrorCode::ShapeMismatch, [&] { attention_weights(q, Eigen::MatrixXd::Zero(2, 2), build_mask(2), 2); });
  expect_error(ErrorCode::ShapeMismatch, [&] { attention_weights(q, q, build_mask(3), 2); });
  expect_error(ErrorCode::ShapeMismatch, [&] { masked_attention(q, q, Eigen::MatrixXd::Zero(2, 2), build_mask(2), 2); });
}

TEST(DiceLoss, Examples) {
  SaliencyMap gt(40, 40);
  for (int y = 5; y < 37; ++y)
    for (int x = 5; x < 37; ++x) gt(x, y) = 1.0;
  EXPECT_LT(dice_loss(gt, gt), 1e-3);
  EXPECT_GE(dice_loss(gt, gt), 0.0);
  EXPECT_NEAR(dice_loss(SaliencyMap(10, 10), SaliencyMap(10, 10, 1.0)), 1.0 - 1.0 / 101.0, 1e-15);
  EXPECT_EQ(dice_loss(SaliencyMap(10, 10), SaliencyMap(10, 10)), 0.0);
  expect_error(ErrorCode::ShapeMismatch, [] { dice_loss(SaliencyMap(2, 2), SaliencyMap(2, 3)); });
}

TEST(FocalLoss, Examples) {
  SaliencyMap gt(4, 4);
  gt(1, 1) = gt(2, 2) = 1.0;
  EXPECT_LT(focal_loss(gt, gt), 1e-5);
  const SaliencyMap half(1, 1, std::vector<double>{0.5});
  const SaliencyMap one(1, 1, std::vector<double>{1.0});
  EXPECT_NEAR(focal_loss(half, one), 0.25 * 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(focal_loss(half, one), 0.04332, 1e-5);
}

TEST(FocalLoss, ReducesToHalfBceWithoutFocusing) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const SaliencyMap p = random_map(rng, 9, 7, false), g = random_map(rng, 9, 7, true);
    double bce = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double pi = p.values()[i], gi = g.values()[i];
      bce += -(gi * std::log(pi) + (1 - gi) * std::log(1 - pi));
    }
    bce /= static_cast<double>(p.size());
    EXPECT_NEAR(focal_loss(p, g, {0.0, 0.5}), 0.5 * bce, 1e-9);
  }
}

TEST(Losses, RangeAndMonotoneTowardTarget) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    const SaliencyMap p0 = random_map(rng, 8, 8, false), g = random_map(rng, 8, 8, true);
    double last_dice = 2.0, last_focal = 1e9;
    for (int s = 0; s <= 20; ++s) {
      const double a = s / 20.0;
      SaliencyMap p = p0;
      for (std::size_t i = 0; i < p.size(); ++i) p.values()[i] += a * (g.values()[i] - p0.values()[i]);
      const double d = dice_loss(p, g), f = focal_loss(p, g);
      EXPECT_GE(d, 0.0);
      EXPECT_LT(d, 1.0);
      EXPECT_GE(f, 0.0);
      EXPECT_LE(d, last_dice + 1e-12);
      EXPECT_LE(f, last_focal + 1e-12);
      last_dice = d;
      last_focal = f;
    }
  }
}

TEST(TotalLoss, WeightedSum) {
  std::mt19937_64 rng(7);
  const SaliencyMap g = random_map(rng, 32, 32, true);
  const std::array<SaliencyMap, 4> perfect{g, g, g, g};
  EXPECT_LT(total_loss(g, perfect, g), 5e-3);

  const SaliencyMap p = random_map(rng, 32, 32, false);
  const std::array<SaliencyMap, 4> same{p, p, p, p};
  EXPECT_NEAR(total_loss(p, same, g), 5.0 * output_loss(p, g), 1e-12);
  LossWeights only_fuse;
  only_fuse.side = {0, 0, 0, 0};
  EXPECT_EQ(total_loss(p, perfect, g, only_fuse), focal_loss(p, g) + dice_loss(p, g));
  LossWeights none;
  none.fuse = 0;
  none.side = {0, 0, 0, 0};
  expect_error(ErrorCode::InvalidArgument, [&] { total_loss(p, same, g, none); });
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 10; ++t) {
    const SaliencyMap g = random_map(rng, 8, 8, true);
    SaliencyMap p = random_map(rng, 8, 8, false);
    const std::array<SaliencyMap, 4> side{random_map(rng, 8, 8, false), random_map(rng, 8, 8, false),
                                          random_map(rng, 8, 8, false), random_map(rng, 8, 8, false)};
    const auto grad = output_loss_gradient(p, g);
    const double h = 1e-6;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x = p.values()[i];
      p.values()[i] = x + h;
      const double up = total_loss(p, side, g);
      p.values()[i] = x - h;
      const double down = total_loss(p, side, g);
      p.values()[i] = x;
      const double fd = (up - down) / (2 * h);
      EXPECT_LE(std::abs(fd - grad[i]), 1e-4 * std::max(1.0, std::abs(fd))) << i;
    }
  }
}
