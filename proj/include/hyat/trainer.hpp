#pragma once

#include "hyat/backbone.hpp"
#include "hyat/checkpoint.hpp"

namespace hyat {

struct TrainConfig {
  double lr_hei_has = 1e-4;   // HEI + HAS + hs patch embed group
  double lr_ham = 1e-5;       // HAM group
  double lr_base = 1e-3;      // pretraining (all base tensors)
  double weight_decay = 1e-4;
  int batch_size = 8;
  int epochs = 30;
  int decay_epoch = 24;       // step-decay both rates after this epoch
  double decay_factor = 0.1;
  int samples_per_epoch = 64;
  double grad_clip = 0.0;     // 0 = off
  double context_search = 4.0;
  double context_template = 2.0;
  double center_jitter = 0.2;  // search-center jitter, fraction of crop side
  double scale_jitter = 0.25;  // log-scale jitter of the search crop side
  std::uint64_t seed = 0;

  void validate() const {
    if (lr_hei_has <= 0 || lr_ham <= 0 || lr_base <= 0)
      throw config_error("TrainConfig: learning rates must be positive");
    if (decay_epoch >= epochs)
      throw config_error("TrainConfig: decay_epoch must be < epochs");
    if (batch_size < 1 || samples_per_epoch < 1)
      throw config_error("TrainConfig: batch/epoch sizes must be positive");
  }
};

// AdamW with decoupled weight decay. Moment defaults 0.9/0.999, eps 1e-8.
template <typename S>
class AdamW {
 public:
  AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void set_lr(const std::string& name, double lr) { lr_[name] = lr; }

  void step(Model<S>& model, const std::map<std::string, Mat<S>>& grads,
            double lr_scale) {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, t_);
    double bc2 = 1.0 - std::pow(b2_, t_);
    for (const auto& [name, g] : grads) {
      auto lr_it = lr_.find(name);
      if (lr_it == lr_.end())
        throw partition_error("AdamW: gradient for unregistered tensor " + name);
      double lr = lr_it->second * lr_scale;
      Mat<S>& p = model.t.at(name);
      Mat<S>& m = m_[name];
      Mat<S>& v = v_[name];
      if (m.size() == 0) {
        m = Mat<S>::Zero(p.rows(), p.cols());
        v = Mat<S>::Zero(p.rows(), p.cols());
      }
      m = S(b1_) * m + S(1 - b1_) * g;
      v = (S(b2_) * v.array() + S(1 - b2_) * g.array().square()).matrix();
      Mat<S> mhat = m / S(bc1);
      Mat<S> vhat = v / S(bc2);
      p.array() -= S(lr) * (mhat.array() / (vhat.array().sqrt() + S(eps_)) +
                            S(wd_) * p.array());
    }
  }

  bool manages(const std::string& name) const { return lr_.count(name) > 0; }

 private:
  double wd_, b1_, b2_, eps_;
  std::map<std::string, double> lr_;
  std::map<std::string, Mat<S>> m_, v_;
  long t_ = 0;
};

// One training sample: crop triple plus target bins in search coordinates.
template <typename S>
struct TrainSample {
  PipelineInput<S> input;
  std::array<int, 4> bins{};
};

// Template/search pairs drawn from one sequence: template and online template
// at their ground-truth boxes, search crop jittered around the ground truth.
template <typename S>
std::optional<TrainSample<S>> draw_sample(const std::vector<Sequence>& data,
                                          const ModelConfig& mcfg,
                                          const TrainConfig& cfg, Rng& rng) {
  const Sequence& seq = data[std::size_t(rng.uniform_int(int(data.size())))];
  int n = seq.meta.frame_count;
  int t_tmpl = rng.uniform_int(n);
  int t_online = rng.uniform_int(n);
  int t_search = rng.uniform_int(n);

  const BBox& gt = seq.groundtruth[std::size_t(t_search)];
  SearchGeometry geo = SearchGeometry::around(gt, cfg.context_search);
  // Scale jitter keeps the apparent target size variable; without it the
  // network learns a constant w/side and the tracker's scale feedback
  // drifts exponentially off the bin-center quantization bias.
  double cx = geo.origin_x + geo.side / 2, cy = geo.origin_y + geo.side / 2;
  geo.side *= std::exp(cfg.scale_jitter * rng.uniform(-1.0, 1.0));
  geo.origin_x = cx - geo.side / 2 + cfg.center_jitter * geo.side * rng.uniform(-1.0, 1.0);
  geo.origin_y = cy - geo.side / 2 + cfg.center_jitter * geo.side * rng.uniform(-1.0, 1.0);
  auto bins = gt_bins(gt, geo, mcfg.bins);
  if (!bins) return std::nullopt;  // jittered out of the crop: skip sample

  BBox search_box;  // box whose context crop reproduces geo
  search_box.w = search_box.h = geo.side / cfg.context_search;
  search_box.x = geo.origin_x + geo.side / 2 - search_box.w / 2;
  search_box.y = geo.origin_y + geo.side / 2 - search_box.h / 2;

  TrainSample<S> s;
  s.input.cmf = seq.meta.cmf;
  s.input.search_hs = crop_resize(seq.frame(t_search), search_box,
                                  cfg.context_search, mcfg.image_size);
  s.input.template_hs = crop_resize(seq.frame(t_tmpl),
                                    seq.groundtruth[std::size_t(t_tmpl)],
                                    cfg.context_template, mcfg.image_size);
  s.input.online_hs = crop_resize(seq.frame(t_online),
                                  seq.groundtruth[std::size_t(t_online)],
                                  cfg.context_template, mcfg.image_size);
  s.bins = *bins;
  return s;
}

template <typename S>
double loss_value(const Model<S>& m, const PipelineInput<S>& in,
                  const std::array<int, 4>& bins) {
  Tape<S> tape;
  TapeModel<S> tm = stage_model(tape, m);
  auto nodes = pipeline_forward(tape, tm, in);
  int loss = ce_loss_node(tape, nodes.logits, bins, m.cfg.bins);
  return double(tape.val(loss)(0, 0));
}

// Forward + backward for one sample; accumulates gradients of the tensors in
// `trainable` into `grads`. Returns the sample loss.
template <typename S>
double accumulate_gradients(const Model<S>& m, const TrainSample<S>& sample,
                            const std::vector<std::string>& trainable,
                            std::map<std::string, Mat<S>>& grads) {
  Tape<S> tape;
  TapeModel<S> tm = stage_model(tape, m);
  auto nodes = pipeline_forward(tape, tm, sample.input);
  int loss = ce_loss_node(tape, nodes.logits, sample.bins, m.cfg.bins);
  tape.backward(loss);
  for (const auto& name : trainable) {
    const Mat<S>& g = tape.grad(tm(name));
    auto it = grads.find(name);
    if (it == grads.end()) grads[name] = g;
    else it->second += g;
  }
  return double(tape.val(loss)(0, 0));
}

struct TrainStats {
  std::vector<double> epoch_loss;
};

// Shared epoch loop. `trainable` picks the partition, `lr_of` the per-group
// rates; the step decay multiplies all rates by decay_factor past
// decay_epoch.
template <typename S>
TrainStats train_loop(Model<S>& model, const std::vector<Sequence>& data,
                      const TrainConfig& cfg,
                      const std::vector<std::string>& trainable,
                      const std::function<double(const std::string&)>& lr_of) {
  cfg.validate();
  if (data.empty()) throw input_error("train_loop: no training sequences");
  AdamW<S> opt(cfg.weight_decay);
  for (const auto& name : trainable) opt.set_lr(name, lr_of(name));

  Rng rng(cfg.seed);
  TrainStats stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr_scale = epoch >= cfg.decay_epoch ? cfg.decay_factor : 1.0;
    double epoch_loss = 0;
    int counted = 0;
    int steps = (cfg.samples_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
    for (int s = 0; s < steps; ++s) {
      std::map<std::string, Mat<S>> grads;
      int in_batch = 0;
      for (int b = 0; b < cfg.batch_size; ++b) {
        auto sample = draw_sample<S>(data, model.cfg, cfg, rng);
        if (!sample) continue;
        double l = accumulate_gradients(model, *sample, trainable, grads);
        if (!std::isfinite(l))
          throw state_error("train_loop: non-finite loss, aborting");
        epoch_loss += l;
        ++counted;
        ++in_batch;
      }
      if (in_batch == 0) continue;
      for (auto& [name, g] : grads) {
        g /= S(in_batch);
        if (cfg.grad_clip > 0) {
          double norm = std::sqrt(double(g.array().square().sum()));
          if (norm > cfg.grad_clip) g *= S(cfg.grad_clip / norm);
        }
      }
      opt.step(model, grads, lr_scale);
    }
    stats.epoch_loss.push_back(counted > 0 ? epoch_loss / counted : 0.0);
  }
  return stats;
}

// Phase 1: manufacture the frozen base at desk scale. Trains the false-color
// patch embedding, encoder and head end to end; adapters are absent.
template <typename S>
TrainStats pretrain_base(Model<S>& model, const std::vector<Sequence>& data,
                         const TrainConfig& cfg) {
  if (model.cfg.hei != HeiMode::off || model.cfg.has_any() ||
      model.cfg.ham_seq || model.cfg.ham_par)
    throw config_error("pretrain_base: base model must have all adapters off");
  auto part = partition_params(model, Phase::pretrain);
  return train_loop(model, data, cfg, part.trainable,
                    [&](const std::string&) { return cfg.lr_base; });
}

// Phase 2: adapter fine-tuning with frozen-base enforcement. Two parameter
// groups: HEI + HAS + hs patch embed at lr_hei_has, HAM at lr_ham.
template <typename S>
TrainStats finetune(Model<S>& model, const std::vector<Sequence>& data,
                    const TrainConfig& cfg) {
  auto part = partition_params(model, Phase::finetune);
  auto frozen_before = tensor_digest(model, part.frozen);
  auto lr_of = [&](const std::string& name) {
    bool ham = name.find(".pha.") != std::string::npos ||
               name.find(".sha.") != std::string::npos;
    return ham ? cfg.lr_ham : cfg.lr_hei_has;
  };
  TrainStats stats = part.trainable.empty()
                         ? TrainStats{}
                         : train_loop(model, data, cfg, part.trainable, lr_of);
  if (tensor_digest(model, part.frozen) != frozen_before)
    throw state_error("finetune: frozen tensor changed during fine-tuning");
  return stats;
}

// Builds the fine-tuning model from a pretrained base checkpoint: base
// tensors are carried over, adapter tensors allocated fresh from `seed`.
template <typename S>
Model<S> model_from_base(const Model<S>& base, const ModelConfig& target_cfg,
                         std::uint64_t seed) {
  target_cfg.validate();
  Model<S> m;
  m.cfg = target_cfg;
  for (const auto& [name, mat] : base.t) {
    if (!is_base_tensor(name))
      throw partition_error("model_from_base: base checkpoint carries adapter tensor " +
                            name);
    m.t[name] = mat;
  }
  Rng rng(seed);
  add_adapter_tensors(m, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Gradient check harness

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass = true;
};

// Central finite differences against the tape gradients for every trainable
// tensor of `model` on one sample. float64 only; callers use tiny configs.
template <typename S>
GradCheckReport grad_check(Model<S> model, const TrainSample<S>& sample,
                           double step = 1e-5, double tol = 1e-4) {
  auto part = partition_params(model, Phase::finetune);

  Tape<S> tape;
  TapeModel<S> tm = stage_model(tape, model);
  auto nodes = pipeline_forward(tape, tm, sample.input);
  int loss = ce_loss_node(tape, nodes.logits, sample.bins, model.cfg.bins);
  tape.backward(loss);

  GradCheckReport report;
  for (const auto& name : part.trainable) {
    const Mat<S>& analytic = tape.grad(tm(name));
    Mat<S>& p = model.t.at(name);
    double max_rel = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        S orig = p(i, j);
        p(i, j) = orig + S(step);
        double lp = loss_value(model, sample.input, sample.bins);
        p(i, j) = orig - S(step);
        double lm = loss_value(model, sample.input, sample.bins);
        p(i, j) = orig;
        double fd = (lp - lm) / (2 * step);
        double a = double(analytic(i, j));
        // Denominator floor sits above the FD noise floor (~1e-9 absolute at
        // this step size) so near-zero gradients do not read as mismatches.
        double rel = std::abs(a - fd) / std::max({1e-4, std::abs(a), std::abs(fd)});
        max_rel = std::max(max_rel, rel);
      }
    GradCheckEntry e{name, max_rel, max_rel < tol};
    report.all_pass = report.all_pass && e.pass;
    report.entries.push_back(std::move(e));
  }
  return report;
}

// Deterministic synthetic sample for gradient checking: random in-range
// reflectance crops and a mid-crop target.
template <typename S>
TrainSample<S> random_sample(const ModelConfig& cfg, Rng& rng) {
  auto random_crop = [&] {
    HSFrame f;
    f.C = cfg.bands;
    f.H = f.W = cfg.image_size;
    f.wavelengths.resize(cfg.bands);
    for (int c = 0; c < cfg.bands; ++c) f.wavelengths[c] = 450.0 + 10.0 * c;
    f.data.resize(std::size_t(cfg.bands) * cfg.image_size * cfg.image_size);
    for (auto& v : f.data) v = float(rng.uniform(0.05, 0.95));
    return f;
  };
  TrainSample<S> s;
  s.input.cmf = make_cmf(cfg.bands, rng);
  s.input.search_hs = random_crop();
  s.input.template_hs = random_crop();
  s.input.online_hs = random_crop();
  for (int i = 0; i < 4; ++i) s.bins[std::size_t(i)] = rng.uniform_int(cfg.bins);
  return s;
}

}  // namespace hyat
