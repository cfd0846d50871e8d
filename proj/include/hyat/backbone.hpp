#pragma once

#include "hyat/head.hpp"
#include "hyat/model.hpp"

namespace hyat {

// Model tensors staged as tape leaves, one node per named tensor, so the
// same map drives forward evaluation, backward gradients and the optimizer.
template <typename S>
struct TapeModel {
  Tape<S>* tape = nullptr;
  const ModelConfig* cfg = nullptr;
  std::map<std::string, int> var;

  int operator()(const std::string& name) const {
    auto it = var.find(name);
    if (it == var.end()) throw state_error("TapeModel: missing tensor " + name);
    return it->second;
  }
};

template <typename S>
TapeModel<S> stage_model(Tape<S>& tape, const Model<S>& m) {
  TapeModel<S> tm;
  tm.tape = &tape;
  tm.cfg = &m.cfg;
  for (const auto& [name, mat] : m.t) tm.var[name] = tape.input(mat);
  return tm;
}

// Per-forward instrumentation: HAS chain wiring and attention row sums.
template <typename S>
struct EncoderTrace {
  Mat<S> chain_seed;  // F^HS fed to layer 0
  std::vector<Mat<S>> chain_q_in, chain_q_out;
  std::vector<Mat<S>> chain_v_in, chain_v_out;
  double max_attention_rowsum_err = 0.0;
};

// HEI variants. `full` is the spectral-attention + softmax-fusion module;
// the other modes are the input-augmentation baselines used in ablations.
template <typename S>
int hei_node(Tape<S>& tape, const TapeModel<S>& tm, int v_hs, int v_frgb) {
  const ModelConfig& cfg = *tm.cfg;
  switch (cfg.hei) {
    case HeiMode::off:
      return v_frgb;
    case HeiMode::concat_downsample:
      return tape.matmul(tm("hei.w_cd"), tape.vcat(v_hs, v_frgb));
    case HeiMode::downsample_add:
      return tape.add(tape.matmul(tm("hei.w_ds"), v_hs), v_frgb);
    case HeiMode::sa_downsample_add: {
      int v_sa = spectral_attention_node(tape, v_hs, tm("hei.w_down"),
                                         tm("hei.w_up"));
      return tape.add(tape.matmul(tm("hei.w_ds"), v_sa), v_frgb);
    }
    case HeiMode::full: {
      int v_sa = spectral_attention_node(tape, v_hs, tm("hei.w_down"),
                                         tm("hei.w_up"));
      int v_e = image_fusion_node(tape, v_frgb, v_sa);
      if (cfg.hei_residual) v_e = tape.add(v_e, v_frgb);
      return v_e;
    }
  }
  throw config_error("hei_node: unknown mode");
}

// Patch embedding of one image (channels x H*W node) into N x D tokens with
// the shared learned positional embedding added.
template <typename S>
int patch_embed_node(Tape<S>& tape, const TapeModel<S>& tm, int img,
                     const std::string& branch) {
  const ModelConfig& cfg = *tm.cfg;
  int expected = branch == "hs" ? cfg.bands : 3;
  if (tape.val(img).rows() != expected)
    throw shape_error("patch_embed: channel count does not match branch");
  int patches = tape.patchify(img, cfg.image_size, cfg.image_size, cfg.patch);
  int tok = tape.add_rowvec(tape.matmul(patches, tm("embed." + branch + ".w")),
                            tm("embed." + branch + ".b"));
  return tape.add(tok, tm("embed.pos"));
}

// Concatenation order is fixed: [search, template, online]. The head's
// slice contract (search tokens are rows [0, N)) depends on it.
template <typename S>
int assemble_node(Tape<S>& tape, int search_seg, int template_seg, int online_seg) {
  if (tape.val(search_seg).rows() != tape.val(template_seg).rows() ||
      tape.val(search_seg).rows() != tape.val(online_seg).rows())
    throw shape_error("assemble: segment token counts disagree");
  return tape.vcat(tape.vcat(search_seg, template_seg), online_seg);
}

template <typename S>
Mat<S> assemble(const Mat<S>& search_seg, const Mat<S>& template_seg,
                const Mat<S>& online_seg) {
  Tape<S> tape;
  return tape.val(assemble_node(tape, tape.input(search_seg),
                                tape.input(template_seg),
                                tape.input(online_seg)));
}

// Multi-head attention over already-augmented q/v. Contiguous head split of
// the feature axis, frozen output projection applied by the caller.
template <typename S>
int msa_node(Tape<S>& tape, int q, int k, int v, int heads,
             EncoderTrace<S>* trace = nullptr) {
  Eigen::Index D = tape.val(q).cols();
  if (D % heads != 0) throw config_error("msa: dim not divisible by heads");
  Eigen::Index dh = D / heads;
  S inv_sqrt = S(1) / S(std::sqrt(double(dh)));
  int out = -1;
  for (int h = 0; h < heads; ++h) {
    int qh = tape.cols(q, h * dh, dh);
    int kh = tape.cols(k, h * dh, dh);
    int vh = tape.cols(v, h * dh, dh);
    int att = tape.softmax_rows(
        tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt));
    if (trace) {
      const auto& a = tape.val(att);
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        trace->max_attention_rowsum_err =
            std::max(trace->max_attention_rowsum_err,
                     std::abs(double(a.row(i).sum()) - 1.0));
    }
    int oh = tape.matmul(att, vh);
    out = (h == 0) ? oh : tape.hcat(out, oh);
  }
  return out;
}

// Pre-norm encoder: x += out_proj(MSA(LN(x))) then the HAM-fused MLP path.
// HAS chains are seeded once with F^HS and threaded through all layers.
template <typename S>
int encoder_forward_node(Tape<S>& tape, const TapeModel<S>& tm, int f_e,
                         int f_hs, EncoderTrace<S>* trace = nullptr) {
  const ModelConfig& cfg = *tm.cfg;
  int x = f_e;
  int chain_q = f_hs, chain_k = f_hs, chain_v = f_hs;
  if (trace && f_hs >= 0) trace->chain_seed = tape.val(f_hs);

  for (int i = 0; i < cfg.layers; ++i) {
    int xn = tape.layernorm_rows(x, tm(names::enc(i, "ln1.g")),
                                 tm(names::enc(i, "ln1.b")));
    int q = tape.add_rowvec(tape.matmul(xn, tm(names::enc(i, "wq"))),
                            tm(names::enc(i, "bq")));
    int k = tape.add_rowvec(tape.matmul(xn, tm(names::enc(i, "wk"))),
                            tm(names::enc(i, "bk")));
    int v = tape.add_rowvec(tape.matmul(xn, tm(names::enc(i, "wv"))),
                            tm(names::enc(i, "bv")));

    if (cfg.has_q) {
      if (trace) trace->chain_q_in.push_back(tape.val(chain_q));
      chain_q = lowrank_node(tape, chain_q, tm(names::enc(i, "hasq.down")),
                             tm(names::enc(i, "hasq.up")));
      if (trace) trace->chain_q_out.push_back(tape.val(chain_q));
      q = tape.add(q, chain_q);
    }
    if (cfg.has_k) {
      chain_k = lowrank_node(tape, chain_k, tm(names::enc(i, "hask.down")),
                             tm(names::enc(i, "hask.up")));
      k = tape.add(k, chain_k);
    }
    if (cfg.has_v) {
      if (trace) trace->chain_v_in.push_back(tape.val(chain_v));
      chain_v = lowrank_node(tape, chain_v, tm(names::enc(i, "hasv.down")),
                             tm(names::enc(i, "hasv.up")));
      if (trace) trace->chain_v_out.push_back(tape.val(chain_v));
      v = tape.add(v, chain_v);
    }

    int att = msa_node(tape, q, k, v, cfg.heads, trace);
    int f_msa = tape.add(
        x, tape.add_rowvec(tape.matmul(att, tm(names::enc(i, "wo"))),
                           tm(names::enc(i, "bo"))));

    int xn2 = tape.layernorm_rows(f_msa, tm(names::enc(i, "ln2.g")),
                                  tm(names::enc(i, "ln2.b")));
    int h1 = tape.gelu(tape.add_rowvec(tape.matmul(xn2, tm(names::enc(i, "mlp.w1"))),
                                       tm(names::enc(i, "mlp.b1"))));
    int f_mlp = tape.add_rowvec(tape.matmul(h1, tm(names::enc(i, "mlp.w2"))),
                                tm(names::enc(i, "mlp.b2")));

    int f = tape.add(f_msa, f_mlp);
    if (cfg.ham_par)
      f = tape.add(f, lowrank_node(tape, f_msa, tm(names::enc(i, "pha.down")),
                                   tm(names::enc(i, "pha.up"))));
    if (cfg.ham_seq)
      f = tape.add(f, lowrank_node(tape, f_mlp, tm(names::enc(i, "sha.down")),
                                   tm(names::enc(i, "sha.up"))));
    x = f;
  }
  return x;
}

// Attention-pool the search tokens and project to 4B coordinate logits.
template <typename S>
int head_logits_node(Tape<S>& tape, const TapeModel<S>& tm, int f_final) {
  const ModelConfig& cfg = *tm.cfg;
  int N = cfg.tokens_per_image();
  int f_s = tape.rows(f_final, 0, N);  // search tokens occupy the first N rows
  S inv_sqrt = S(1) / S(std::sqrt(double(cfg.dim)));
  int w = tape.softmax_rows(tape.scale(
      tape.matmul(tm("head.pool"), tape.transpose(f_s)), inv_sqrt));
  int pooled = tape.matmul(w, f_s);
  return tape.add_rowvec(tape.matmul(pooled, tm("head.w")), tm("head.b"));
}

template <typename S>
struct PipelineInput {
  HSFrame search_hs, template_hs, online_hs;
  CMFMatrix cmf;
};

template <typename S>
struct PipelineNodes {
  int logits = -1;   // 1 x 4B
  int f_final = -1;  // 3N x D
};

template <typename S>
PipelineNodes<S> pipeline_forward(Tape<S>& tape, const TapeModel<S>& tm,
                                  const PipelineInput<S>& in,
                                  EncoderTrace<S>* trace = nullptr) {
  const ModelConfig& cfg = *tm.cfg;
  const std::array<const HSFrame*, 3> pairs = {&in.search_hs, &in.template_hs,
                                               &in.online_hs};
  std::array<int, 3> fc_tokens{};
  std::array<int, 3> hs_tokens{-1, -1, -1};
  for (int p = 0; p < 3; ++p) {
    const HSFrame& hs = *pairs[std::size_t(p)];
    if (hs.H != cfg.image_size || hs.W != cfg.image_size || hs.C != cfg.bands)
      throw shape_error("pipeline_forward: crop shape does not match config");
    int v_hs = tape.input(flatten<S>(hs));
    int v_frgb = tape.input(flatten<S>(to_false_color(hs, in.cmf)));
    int enhanced = hei_node(tape, tm, v_hs, v_frgb);
    fc_tokens[std::size_t(p)] = patch_embed_node(tape, tm, enhanced, "fc");
    if (cfg.has_any())
      hs_tokens[std::size_t(p)] = patch_embed_node(tape, tm, v_hs, "hs");
  }

  int f_e = assemble_node(tape, fc_tokens[0], fc_tokens[1], fc_tokens[2]);
  int f_hs = -1;
  if (cfg.has_any())
    f_hs = assemble_node(tape, hs_tokens[0], hs_tokens[1], hs_tokens[2]);

  PipelineNodes<S> out;
  out.f_final = encoder_forward_node(tape, tm, f_e, f_hs, trace);
  out.logits = head_logits_node(tape, tm, out.f_final);
  return out;
}

// Forward-only convenience: crop triple in, box logits out.
template <typename S>
BoxLogits<S> infer(const Model<S>& m, const PipelineInput<S>& in) {
  Tape<S> tape;
  TapeModel<S> tm = stage_model(tape, m);
  auto nodes = pipeline_forward(tape, tm, in);
  Mat<S> flat = tape.val(nodes.logits);
  int B = m.cfg.bins;
  Mat<S> l(4, B);
  for (int i = 0; i < 4; ++i) l.row(i) = flat.middleCols(Eigen::Index(i) * B, B);
  return make_box_logits(l);
}

}  // namespace hyat
