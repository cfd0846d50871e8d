#pragma once

#include "hyat/autograd.hpp"
#include "hyat/hsdata.hpp"

namespace hyat {

// Image-level spectral enhancement: spectral attention over the flattened
// HS cube followed by parameter-free softmax fusion into a 3-channel image.

template <typename S>
struct HeiParams {
  Mat<S> w_down;  // 3 x C
  Mat<S> w_up;    // C x 3
};

template <typename S>
HeiParams<S> init_hei(int C, Rng& rng, double stddev = 0.02) {
  HeiParams<S> p;
  p.w_down = rng.template gaussian<S>(3, C, stddev);
  p.w_up = rng.template gaussian<S>(C, 3, stddev);
  return p;
}

// Row c of the result is the row-major scan of band c.
template <typename S>
Mat<S> flatten(const HSFrame& img) {
  Mat<S> m(img.C, Eigen::Index(img.H) * img.W);
  for (int c = 0; c < img.C; ++c)
    for (int y = 0; y < img.H; ++y)
      for (int x = 0; x < img.W; ++x)
        m(c, Eigen::Index(y) * img.W + x) = S(img.at(c, y, x));
  return m;
}

template <typename S>
Mat<S> flatten(const RGBImage& img) {
  Mat<S> m(3, Eigen::Index(img.H) * img.W);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.H; ++y)
      for (int x = 0; x < img.W; ++x)
        m(c, Eigen::Index(y) * img.W + x) = S(img.at(c, y, x));
  return m;
}

template <typename S>
RGBImage unflatten(const Mat<S>& m, int H, int W) {
  if (m.rows() != 3 || m.cols() != Eigen::Index(H) * W)
    throw shape_error("unflatten: expected 3 x H*W matrix");
  RGBImage img;
  img.H = H;
  img.W = W;
  img.data.resize(std::size_t(3) * H * W);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        img.at(c, y, x) = float(m(c, Eigen::Index(y) * W + x));
  return img;
}

// V_SA = W_up * ReLU(W_down * V_HS)
template <typename S>
int spectral_attention_node(Tape<S>& tape, int v_hs, int w_down, int w_up) {
  return tape.matmul(w_up, tape.relu(tape.matmul(w_down, v_hs)));
}

// V_E = softmax(V_FRGB * V_SA^T) * V_SA, softmax over the C axis, so each
// output row is a convex combination of V_SA rows.
template <typename S>
int image_fusion_node(Tape<S>& tape, int v_frgb, int v_sa) {
  if (tape.val(v_frgb).rows() != 3)
    throw shape_error("image_fusion: V_FRGB must have 3 rows");
  if (tape.val(v_frgb).cols() != tape.val(v_sa).cols())
    throw shape_error("image_fusion: column counts disagree");
  int logits = tape.matmul(v_frgb, tape.transpose(v_sa));
  return tape.matmul(tape.softmax_rows(logits), v_sa);
}

template <typename S>
Mat<S> spectral_attention(const Mat<S>& v_hs, const HeiParams<S>& p) {
  if (v_hs.rows() != p.w_down.cols())
    throw shape_error("spectral_attention: V_HS row count != C");
  Tape<S> tape;
  return tape.val(spectral_attention_node(tape, tape.input(v_hs),
                                          tape.input(p.w_down),
                                          tape.input(p.w_up)));
}

template <typename S>
Mat<S> image_fusion(const Mat<S>& v_frgb, const Mat<S>& v_sa) {
  Tape<S> tape;
  return tape.val(image_fusion_node(tape, tape.input(v_frgb), tape.input(v_sa)));
}

template <typename S>
RGBImage enhance(const HSFrame& hs, const RGBImage& frgb, const HeiParams<S>& p,
                 bool residual = false) {
  if (hs.H != frgb.H || hs.W != frgb.W)
    throw shape_error("enhance: HS and false-color image sizes disagree");
  Mat<S> v_sa = spectral_attention(flatten<S>(hs), p);
  Mat<S> v_e = image_fusion(flatten<S>(frgb), v_sa);
  if (residual) v_e += flatten<S>(frgb);
  return unflatten(v_e, hs.H, hs.W);
}

}  // namespace hyat
