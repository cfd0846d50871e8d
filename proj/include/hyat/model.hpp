#pragma once

#include "hyat/adapters.hpp"
#include "hyat/hei.hpp"

#include <json.hpp>

#include <map>
#include <string>

namespace hyat {

enum class HeiMode { off, concat_downsample, downsample_add, sa_downsample_add, full };

inline std::string to_string(HeiMode m) {
  switch (m) {
    case HeiMode::off: return "off";
    case HeiMode::concat_downsample: return "concat_downsample";
    case HeiMode::downsample_add: return "downsample_add";
    case HeiMode::sa_downsample_add: return "sa_downsample_add";
    case HeiMode::full: return "full";
  }
  throw config_error("unknown HeiMode");
}

inline HeiMode hei_mode_from_string(const std::string& s) {
  if (s == "off") return HeiMode::off;
  if (s == "concat_downsample") return HeiMode::concat_downsample;
  if (s == "downsample_add") return HeiMode::downsample_add;
  if (s == "sa_downsample_add") return HeiMode::sa_downsample_add;
  if (s == "full") return HeiMode::full;
  throw config_error("unknown HEI mode: " + s);
}

struct ModelConfig {
  int image_size = 32;   // side of every crop fed to the network
  int patch = 8;
  int bands = 8;         // C
  int dim = 32;          // D
  int layers = 3;        // L
  int heads = 4;
  int rank = 4;          // adapter rank r
  int bins = 16;         // head coordinate bins B
  int mlp_hidden = 0;    // 0 -> 4*dim
  HeiMode hei = HeiMode::full;
  bool has_q = true, has_k = false, has_v = true;
  bool ham_seq = true, ham_par = true;
  // The fused image starts near zero (both HEI matrices are small Gaussians),
  // which would wreck the frozen encoder's input; the residual keeps the
  // enhancement additive so fine-tuning starts from the base behaviour.
  bool hei_residual = true;

  int hidden() const { return mlp_hidden > 0 ? mlp_hidden : 4 * dim; }
  int tokens_per_image() const {
    int g = image_size / patch;
    return g * g;
  }
  bool has_any() const { return has_q || has_k || has_v; }

  void validate() const {
    if (image_size % patch != 0)
      throw config_error("ModelConfig: image_size not divisible by patch");
    if (dim % heads != 0)
      throw config_error("ModelConfig: dim not divisible by heads");
    if (bins < 2) throw config_error("ModelConfig: bins must be >= 2");
    if (rank > dim) throw config_error("ModelConfig: rank exceeds dim");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["image_size"] = image_size;
    j["patch"] = patch;
    j["bands"] = bands;
    j["dim"] = dim;
    j["layers"] = layers;
    j["heads"] = heads;
    j["rank"] = rank;
    j["bins"] = bins;
    j["mlp_hidden"] = mlp_hidden;
    j["hei"] = to_string(hei);
    j["has_q"] = has_q;
    j["has_k"] = has_k;
    j["has_v"] = has_v;
    j["ham_seq"] = ham_seq;
    j["ham_par"] = ham_par;
    j["hei_residual"] = hei_residual;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.patch = j.at("patch").get<int>();
    c.bands = j.at("bands").get<int>();
    c.dim = j.at("dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.rank = j.at("rank").get<int>();
    c.bins = j.at("bins").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.hei = hei_mode_from_string(j.at("hei").get<std::string>());
    c.has_q = j.at("has_q").get<bool>();
    c.has_k = j.at("has_k").get<bool>();
    c.has_v = j.at("has_v").get<bool>();
    c.ham_seq = j.at("ham_seq").get<bool>();
    c.ham_par = j.at("ham_par").get<bool>();
    c.hei_residual = j.at("hei_residual").get<bool>();
    c.validate();
    return c;
  }
};

// The whole network is a named-tensor map; structure lives in the names.
// Frozen/trainable classification and checkpointing key off these names.
template <typename S>
struct Model {
  ModelConfig cfg;
  std::map<std::string, Mat<S>> t;

  const Mat<S>& at(const std::string& name) const {
    auto it = t.find(name);
    if (it == t.end()) throw state_error("Model: missing tensor " + name);
    return it->second;
  }
};

namespace names {
inline std::string enc(int i, const std::string& suffix) {
  return "enc" + std::to_string(i) + "." + suffix;
}
}  // namespace names

// True for every tensor that belongs to the pretrained base (frozen during
// adapter fine-tuning).
inline bool is_base_tensor(const std::string& n) {
  if (n.rfind("embed.fc.", 0) == 0 || n == "embed.pos") return true;
  if (n.rfind("head.", 0) == 0) return true;
  if (n.rfind("enc", 0) == 0) {
    return n.find(".has") == std::string::npos &&
           n.find(".pha.") == std::string::npos &&
           n.find(".sha.") == std::string::npos;
  }
  return false;
}

// True for every tensor introduced for hyperspectral adaptation.
inline bool is_adapter_tensor(const std::string& n) {
  if (n.rfind("hei.", 0) == 0 || n.rfind("embed.hs.", 0) == 0) return true;
  if (n.rfind("enc", 0) == 0) {
    return n.find(".has") != std::string::npos ||
           n.find(".pha.") != std::string::npos ||
           n.find(".sha.") != std::string::npos;
  }
  return false;
}

template <typename S>
Model<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Model<S> m;
  m.cfg = cfg;
  const int D = cfg.dim, C = cfg.bands, P = cfg.patch, N = cfg.tokens_per_image();
  const int Hh = cfg.hidden();
  const double sd = 0.02;

  auto g = [&](int r, int c) { return rng.template gaussian<S>(r, c, sd); };
  auto zeros = [&](int r, int c) { return Mat<S>::Zero(r, c); };
  auto ones = [&](int r, int c) { return Mat<S>::Ones(r, c); };

  m.t["embed.fc.w"] = g(3 * P * P, D);
  m.t["embed.fc.b"] = zeros(1, D);
  m.t["embed.pos"] = g(N, D);

  for (int i = 0; i < cfg.layers; ++i) {
    m.t[names::enc(i, "ln1.g")] = ones(1, D);
    m.t[names::enc(i, "ln1.b")] = zeros(1, D);
    m.t[names::enc(i, "wq")] = g(D, D);
    m.t[names::enc(i, "bq")] = zeros(1, D);
    m.t[names::enc(i, "wk")] = g(D, D);
    m.t[names::enc(i, "bk")] = zeros(1, D);
    m.t[names::enc(i, "wv")] = g(D, D);
    m.t[names::enc(i, "bv")] = zeros(1, D);
    m.t[names::enc(i, "wo")] = g(D, D);
    m.t[names::enc(i, "bo")] = zeros(1, D);
    m.t[names::enc(i, "ln2.g")] = ones(1, D);
    m.t[names::enc(i, "ln2.b")] = zeros(1, D);
    m.t[names::enc(i, "mlp.w1")] = g(D, Hh);
    m.t[names::enc(i, "mlp.b1")] = zeros(1, Hh);
    m.t[names::enc(i, "mlp.w2")] = g(Hh, D);
    m.t[names::enc(i, "mlp.b2")] = zeros(1, D);
  }

  m.t["head.pool"] = g(1, D);
  m.t["head.w"] = g(D, 4 * cfg.bins);
  m.t["head.b"] = zeros(1, 4 * cfg.bins);

  add_adapter_tensors(m, rng);
  return m;
}

// Allocates the hyperspectral-adaptation tensors the config calls for.
// Down-projections are small Gaussians, up-projections zero, so the adapted
// network reproduces the base bit-for-bit until training moves them. HEI's
// full mode has no identity path and gets Gaussian init on both matrices.
template <typename S>
void add_adapter_tensors(Model<S>& m, Rng& rng) {
  const ModelConfig& cfg = m.cfg;
  const int D = cfg.dim, C = cfg.bands, P = cfg.patch, r = cfg.rank;
  const double sd = 0.02;
  auto g = [&](int rows, int c) { return rng.template gaussian<S>(rows, c, sd); };
  auto zeros = [](int rows, int c) { return Mat<S>::Zero(rows, c); };

  switch (cfg.hei) {
    case HeiMode::off:
      break;
    case HeiMode::concat_downsample: {
      Mat<S> w = zeros(3, C + 3);
      for (int k = 0; k < 3; ++k) w(k, C + k) = S(1);  // start as identity on FRGB
      m.t["hei.w_cd"] = w;
      break;
    }
    case HeiMode::downsample_add:
      m.t["hei.w_ds"] = zeros(3, C);
      break;
    case HeiMode::sa_downsample_add:
      m.t["hei.w_down"] = g(3, C);
      m.t["hei.w_up"] = g(C, 3);
      m.t["hei.w_ds"] = zeros(3, C);
      break;
    case HeiMode::full:
      m.t["hei.w_down"] = g(3, C);
      m.t["hei.w_up"] = g(C, 3);
      break;
  }

  if (cfg.has_any()) {
    m.t["embed.hs.w"] = g(C * P * P, cfg.dim);
    m.t["embed.hs.b"] = zeros(1, cfg.dim);
  }
  for (int i = 0; i < cfg.layers; ++i) {
    auto add_pair = [&](const std::string& base) {
      m.t[names::enc(i, base + ".down")] = g(D, r);
      m.t[names::enc(i, base + ".up")] = zeros(r, D);
    };
    if (cfg.has_q) add_pair("hasq");
    if (cfg.has_k) add_pair("hask");
    if (cfg.has_v) add_pair("hasv");
    if (cfg.ham_par) add_pair("pha");
    if (cfg.ham_seq) add_pair("sha");
  }
}

enum class Phase { pretrain, finetune };

struct ParamPartition {
  std::vector<std::string> frozen;
  std::vector<std::string> trainable;
};

// Fail-closed classification: a tensor that is neither base nor adapter is a
// partition error, never silently trained or silently frozen.
template <typename S>
ParamPartition partition_params(const Model<S>& m, Phase phase) {
  ParamPartition p;
  for (const auto& [name, mat] : m.t) {
    bool base = is_base_tensor(name);
    bool adapter = is_adapter_tensor(name);
    if (base == adapter)
      throw partition_error("partition_params: unclassified tensor " + name);
    bool train = (phase == Phase::pretrain) ? base : adapter;
    (train ? p.trainable : p.frozen).push_back(name);
  }
  return p;
}

template <typename S>
std::size_t param_count(const Model<S>& m, const std::vector<std::string>& names) {
  std::size_t n = 0;
  for (const auto& name : names) n += std::size_t(m.at(name).size());
  return n;
}

template <typename S>
double trainable_ratio(const Model<S>& m) {
  auto part = partition_params(m, Phase::finetune);
  std::size_t tr = param_count(m, part.trainable);
  std::size_t fr = param_count(m, part.frozen);
  return double(tr) / double(tr + fr);
}

}  // namespace hyat
