#pragma once

// Toy-scale numerical kernels for the text/image token fusion: token
// layout, masked self-attention, and the focal + DICE multi-output loss
// with its analytic gradient.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "salvs/error.hpp"
#include "salvs/saliency.hpp"

namespace salvs::fusion {

using TokenMatrix = Eigen::MatrixXd;    // (L+1) x D, row 0 is the text token
using AttentionMask = Eigen::MatrixXd;  // (L+1) x (L+1), entries 0 or -inf

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Stacks the projected text token on top of the projected image tokens.
inline TokenMatrix fuse_tokens(const Eigen::RowVectorXd& text_token, const TokenMatrix& image_tokens) {
  if (image_tokens.rows() < 1 || text_token.size() != image_tokens.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "text token width must match image tokens");
  }
  TokenMatrix x(image_tokens.rows() + 1, image_tokens.cols());
  x.row(0) = text_token;
  x.bottomRows(image_tokens.rows()) = image_tokens;
  return x;
}

/// Linear projections into the joint space followed by `fuse_tokens`; the
/// image [CLS] token is dropped in favour of the text token.
inline TokenMatrix project_and_fuse(const Eigen::RowVectorXd& text, const TokenMatrix& image,
                                    const Eigen::MatrixXd& proj_text, const Eigen::MatrixXd& proj_image) {
  if (text.size() != proj_text.rows() || image.cols() != proj_image.rows() || proj_text.cols() != proj_image.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "projection shapes do not agree");
  }
  return fuse_tokens(text * proj_text, image * proj_image);
}

/// M(i, j) = 0 if i == j or j is the text token, -inf otherwise.
inline AttentionMask build_mask(int image_tokens) {
  if (image_tokens < 1) throw Error(ErrorCode::InvalidArgument, "need at least one image token");
  const int n = image_tokens + 1;
  AttentionMask m = AttentionMask::Constant(n, n, kNegInf);
  for (int i = 0; i < n; ++i) {
    m(i, i) = 0.0;
    m(i, 0) = 0.0;
  }
  return m;
}

/// Row-softmax of (Q K^T + M) / sqrt(D). Masked logits are skipped, so
/// their weights are exactly zero.
inline Eigen::MatrixXd attention_weights(const TokenMatrix& q, const TokenMatrix& k, const AttentionMask& m,
                                         double scale_dim) {
  const Eigen::Index n = q.rows();
  if (k.rows() != n || q.cols() != k.cols() || m.rows() != n || m.cols() != n || !(scale_dim > 0)) {
    throw Error(ErrorCode::ShapeMismatch, "attention operand shapes do not agree");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(scale_dim);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double row_max = kNegInf;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (m(i, j) == kNegInf) continue;
      const double logit = (q.row(i).dot(k.row(j)) + m(i, j)) * inv_sqrt_d;
      w(i, j) = logit;
      row_max = std::max(row_max, logit);
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (m(i, j) == kNegInf) continue;
      w(i, j) = std::exp(w(i, j) - row_max);
      sum += w(i, j);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (m(i, j) != kNegInf) w(i, j) /= sum;
    }
  }
  return w;
}

inline TokenMatrix masked_attention(const TokenMatrix& q, const TokenMatrix& k, const TokenMatrix& v,
                                    const AttentionMask& m, double scale_dim) {
  if (v.rows() != q.rows()) throw Error(ErrorCode::ShapeMismatch, "V must have one row per token");
  return attention_weights(q, k, m, scale_dim) * v;
}

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.25;
};

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDiceSmooth = 1.0;

inline double dice_loss(const SaliencyMap& pred, const SaliencyMap& gt, double eps = kDiceSmooth) {
  require_same_shape(pred, gt);
  double pg = 0.0, sp = 0.0, sg = 0.0;
  const auto p = pred.values();
  const auto g = gt.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    pg += p[i] * g[i];
    sp += p[i];
    sg += g[i];
  }
  return 1.0 - (2.0 * pg + eps) / (sp + sg + eps);
}

/// Mean over pixels of g * [-a (1-p)^gamma log p] + (1-g) * [-(1-a) p^gamma log(1-p)],
/// which is the usual alpha_t / p_t form for binary targets.
inline double focal_loss(const SaliencyMap& pred, const SaliencyMap& gt, FocalParams fp = {}) {
  require_same_shape(pred, gt);
  const auto p = pred.values();
  const auto g = gt.values();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    const double pos = -fp.alpha * std::pow(1.0 - pi, fp.gamma) * std::log(pi);
    const double neg = -(1.0 - fp.alpha) * std::pow(pi, fp.gamma) * std::log(1.0 - pi);
    total += g[i] * pos + (1.0 - g[i]) * neg;
  }
  return total / static_cast<double>(p.size());
}

inline double output_loss(const SaliencyMap& pred, const SaliencyMap& gt, FocalParams fp = {}) {
  return focal_loss(pred, gt, fp) + dice_loss(pred, gt);
}

struct LossWeights {
  double fuse = 1.0;
  std::array<double, 4> side{1.0, 1.0, 1.0, 1.0};

  void validate() const {
    bool any = fuse > 0;
    for (double s : side) any = any || s > 0;
    if (fuse < 0 || std::any_of(side.begin(), side.end(), [](double s) { return s < 0; }) || !any) {
      throw Error(ErrorCode::InvalidArgument, "loss weights must be nonnegative with one positive");
    }
  }
};

/// Weighted sum of the per-output losses of the fused map and four side maps.
inline double total_loss(const SaliencyMap& fuse, const std::array<SaliencyMap, 4>& side, const SaliencyMap& gt,
                         const LossWeights& w = {}, FocalParams fp = {}) {
  w.validate();
  double l = w.fuse * output_loss(fuse, gt, fp);
  for (std::size_t k = 0; k < 4; ++k) l += w.side[k] * output_loss(side[k], gt, fp);
  return l;
}

/// d(focal + dice)/d pred, pixelwise.
inline std::vector<double> output_loss_gradient(const SaliencyMap& pred, const SaliencyMap& gt, FocalParams fp = {}) {
  require_same_shape(pred, gt);
  const auto p = pred.values();
  const auto g = gt.values();
  const double n = static_cast<double>(p.size());
  double pg = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    pg += p[i] * g[i];
    sp += p[i];
    sg += g[i];
  }
  const double den = sp + sg + kDiceSmooth;
  const double num = 2.0 * pg + kDiceSmooth;
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    double focal = 0.0;
    if (p[i] > kProbClamp && p[i] < 1.0 - kProbClamp) {
      const double x = p[i];
      const double a = fp.alpha, gm = fp.gamma;
      const double dpos = -a * (-gm * std::pow(1.0 - x, gm - 1.0) * std::log(x) + std::pow(1.0 - x, gm) / x);
      const double dneg = -(1.0 - a) * (gm * std::pow(x, gm - 1.0) * std::log(1.0 - x) - std::pow(x, gm) / (1.0 - x));
      focal = (g[i] * dpos + (1.0 - g[i]) * dneg) / n;
    }
    const double dice = -(2.0 * g[i] * den - num) / (den * den);
    grad[i] = focal + dice;
  }
  return grad;
}

}  // namespace salvs::fusion
