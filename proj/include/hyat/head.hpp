#pragma once

#include "hyat/autograd.hpp"
#include "hyat/hsdata.hpp"

#include <array>
#include <optional>

namespace hyat {

// Binned-coordinate box head output: one B-bin logit vector per coordinate
// (cx, cy, w, h) in normalized search coordinates, plus a confidence score.
template <typename S>
struct BoxLogits {
  Mat<S> logits;  // 4 x B
  double confidence = 0.0;
};

// Geometry of a search crop: maps normalized [0,1] crop coordinates to frame
// pixels.
struct SearchGeometry {
  double origin_x = 0, origin_y = 0, side = 0;

  static SearchGeometry around(const BBox& box, double context_factor) {
    SearchGeometry g;
    g.side = context_factor * std::sqrt(box.w * box.h);
    g.origin_x = box.cx() - g.side / 2;
    g.origin_y = box.cy() - g.side / 2;
    return g;
  }
};

template <typename S>
Mat<S> softmax_rows_plain(const Mat<S>& x) {
  Mat<S> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    S m = x.row(i).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(i).array() - m).exp();
    y.row(i) = e / e.sum();
  }
  return y;
}

// Confidence S = geometric mean of the four max softmax probabilities.
// Only its ordering is meaningful; it gates the online template update.
template <typename S>
BoxLogits<S> make_box_logits(const Mat<S>& logits) {
  if (logits.rows() != 4 || logits.cols() < 2)
    throw shape_error("make_box_logits: expected 4 x B logits with B >= 2");
  BoxLogits<S> out;
  out.logits = logits;
  Mat<S> p = softmax_rows_plain(logits);
  double prod = 1.0;
  for (int i = 0; i < 4; ++i) prod *= double(p.row(i).maxCoeff());
  out.confidence = std::pow(prod, 0.25);
  return out;
}

// Normalized Hanning weights over B bins, peaked at the crop center.
inline std::vector<double> hanning_bins(int B) {
  std::vector<double> w(static_cast<std::size_t>(B));
  double sum = 0;
  for (int b = 0; b < B; ++b) {
    double s = std::sin(M_PI * (b + 0.5) / B);
    w[std::size_t(b)] = s * s;
    sum += s * s;
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Soft-argmax decoding. The Hanning mix is applied to the cx/cy distributions
// only; scale bins are left untouched.
template <typename S>
BBox box_from_logits(const BoxLogits<S>& l, double lambda,
                     const SearchGeometry& geo) {
  if (lambda < 0.0 || lambda > 1.0)
    throw config_error("box_from_logits: lambda must be in [0,1]");
  int B = int(l.logits.cols());
  Mat<S> p = softmax_rows_plain(l.logits);
  auto hann = hanning_bins(B);

  std::array<double, 4> coord{};
  for (int i = 0; i < 4; ++i) {
    std::vector<double> q(static_cast<std::size_t>(B));
    double z = 0;
    for (int b = 0; b < B; ++b) {
      double v = double(p(i, b));
      if (i < 2) v = (1 - lambda) * v + lambda * hann[std::size_t(b)];
      q[std::size_t(b)] = v;
      z += v;
    }
    double e = 0;
    for (int b = 0; b < B; ++b) e += (q[std::size_t(b)] / z) * ((b + 0.5) / B);
    coord[std::size_t(i)] = e;
  }

  BBox box;
  box.w = coord[2] * geo.side;
  box.h = coord[3] * geo.side;
  box.x = geo.origin_x + coord[0] * geo.side - box.w / 2;
  box.y = geo.origin_y + coord[1] * geo.side - box.h / 2;
  return box;
}

// Ground-truth bin indices in normalized search coordinates, or nullopt if
// the box center falls outside the crop (training-time skip signal).
inline std::optional<std::array<int, 4>> gt_bins(const BBox& gt,
                                                 const SearchGeometry& geo,
                                                 int B) {
  std::array<double, 4> n = {(gt.cx() - geo.origin_x) / geo.side,
                             (gt.cy() - geo.origin_y) / geo.side,
                             gt.w / geo.side, gt.h / geo.side};
  for (double v : n)
    if (v < 0.0 || v > 1.0) return std::nullopt;
  std::array<int, 4> bins{};
  for (int i = 0; i < 4; ++i)
    bins[std::size_t(i)] = std::clamp(int(std::floor(n[std::size_t(i)] * B)), 0, B - 1);
  return bins;
}

// Mean cross-entropy over the four coordinates (plain evaluation).
template <typename S>
double ce_loss(const BoxLogits<S>& l, const BBox& gt, const SearchGeometry& geo) {
  auto bins = gt_bins(gt, geo, int(l.logits.cols()));
  if (!bins) throw input_error("ce_loss: ground truth outside search region");
  double loss = 0;
  for (int i = 0; i < 4; ++i) {
    S m = l.logits.row(i).maxCoeff();
    double z = double((l.logits.row(i).array() - m).exp().sum());
    loss += std::log(z) + double(m) - double(l.logits(i, (*bins)[std::size_t(i)]));
  }
  return loss / 4.0;
}

// Tape-side loss: reshape the 1 x 4B head output into 4 x B rows and apply
// mean cross-entropy against the target bins.
template <typename S>
int ce_loss_node(Tape<S>& tape, int logits_1x4b, const std::array<int, 4>& bins,
                 int B) {
  int rows4 = -1;
  for (int i = 0; i < 4; ++i) {
    int r = tape.cols(logits_1x4b, Eigen::Index(i) * B, B);
    rows4 = (i == 0) ? r : tape.vcat(rows4, r);
  }
  return tape.ce_rows(rows4, {bins[0], bins[1], bins[2], bins[3]});
}

}  // namespace hyat
