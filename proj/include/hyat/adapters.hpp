#pragma once

#include "hyat/autograd.hpp"

#include <functional>

namespace hyat {

// Bias-free low-rank adapter: y = ReLU(x * W_down) * W_up. With W_up = 0 the
// contribution is exactly zero, which is what keeps the adapted network equal
// to the frozen base at step 0.
template <typename S>
struct LowRankAdapter {
  Mat<S> w_down;  // D_in x r
  Mat<S> w_up;    // r x D_out
};

template <typename S>
LowRankAdapter<S> init_adapter(int d_in, int r, int d_out, Rng& rng,
                               double stddev = 0.02) {
  if (r > std::min(d_in, d_out))
    throw config_error("init_adapter: rank exceeds min(D_in, D_out)");
  LowRankAdapter<S> a;
  a.w_down = rng.template gaussian<S>(d_in, r, stddev);
  a.w_up = Mat<S>::Zero(r, d_out);
  return a;
}

template <typename S>
int lowrank_node(Tape<S>& tape, int x, int w_down, int w_up) {
  return tape.matmul(tape.relu(tape.matmul(x, w_down)), w_up);
}

template <typename S>
Mat<S> lowrank_forward(const Mat<S>& x, const LowRankAdapter<S>& a) {
  if (x.cols() != a.w_down.rows())
    throw shape_error("lowrank_forward: feature dim != adapter D_in");
  Tape<S> tape;
  return tape.val(lowrank_node(tape, tape.input(x), tape.input(a.w_down),
                               tape.input(a.w_up)));
}

// State of the chained HAS adapters threaded through the encoder. Both
// branches start from F^HS; each layer's output is simultaneously the
// augmentation added to q/v and the next layer's chain input.
template <typename S>
struct HasChainState {
  Mat<S> f_q;
  Mat<S> f_v;
  int layer_index = 0;
  int total_layers = 0;
};

template <typename S>
HasChainState<S> has_chain_init(const Mat<S>& f_hs, int total_layers) {
  return HasChainState<S>{f_hs, f_hs, 0, total_layers};
}

template <typename S>
HasChainState<S> has_step(const HasChainState<S>& state,
                          const LowRankAdapter<S>& a_q,
                          const LowRankAdapter<S>& a_v) {
  if (state.layer_index >= state.total_layers)
    throw state_error("has_step: stepping past the last encoder layer");
  HasChainState<S> next;
  next.f_q = lowrank_forward(state.f_q, a_q);
  next.f_v = lowrank_forward(state.f_v, a_v);
  next.layer_index = state.layer_index + 1;
  next.total_layers = state.total_layers;
  return next;
}

// Splits the feature axis of f into contiguous head slices and adds them to
// the per-head tensors. Addition in token space with a contiguous split is
// identical, so this helper mostly exists as the testable reshape contract.
template <typename S>
std::vector<Mat<S>> split_heads(const Mat<S>& f, int heads) {
  if (f.cols() % heads != 0)
    throw config_error("split_heads: feature dim not divisible by head count");
  Eigen::Index dh = f.cols() / heads;
  std::vector<Mat<S>> out;
  out.reserve(std::size_t(heads));
  for (int h = 0; h < heads; ++h) out.push_back(f.middleCols(h * dh, dh));
  return out;
}

template <typename S>
std::pair<std::vector<Mat<S>>, std::vector<Mat<S>>> augment_qv(
    const std::vector<Mat<S>>& q, const std::vector<Mat<S>>& v,
    const Mat<S>& f_q, const Mat<S>& f_v, int heads) {
  auto fq = split_heads(f_q, heads);
  auto fv = split_heads(f_v, heads);
  std::vector<Mat<S>> q2(q), v2(v);
  for (int h = 0; h < heads; ++h) {
    q2[std::size_t(h)] += fq[std::size_t(h)];
    v2[std::size_t(h)] += fv[std::size_t(h)];
  }
  return {q2, v2};
}

template <typename S>
struct HamParams {
  LowRankAdapter<S> pha;  // D -> r -> D, input F_MSA
  LowRankAdapter<S> sha;  // D -> r -> D, input F_MLP
};

// F = F_MSA + F_MLP + F_PHA + F_SHA with F_MLP = mlp(F_MSA).
template <typename S>
Mat<S> ham_apply(const Mat<S>& f_msa,
                 const std::function<Mat<S>(const Mat<S>&)>& mlp,
                 const HamParams<S>& p) {
  Mat<S> f_mlp = mlp(f_msa);
  if (f_mlp.rows() != f_msa.rows() || f_mlp.cols() != f_msa.cols())
    throw shape_error("ham_apply: MLP must preserve shape");
  Mat<S> f_pha = lowrank_forward(f_msa, p.pha);
  Mat<S> f_sha = lowrank_forward(f_mlp, p.sha);
  return f_msa + f_mlp + f_pha + f_sha;
}

}  // namespace hyat
