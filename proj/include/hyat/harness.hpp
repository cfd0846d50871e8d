#pragma once

#include "hyat/tracker.hpp"
#include "hyat/trainer.hpp"

namespace hyat {

inline double iou(const BBox& a, const BBox& b) {
  a.validate();
  b.validate();
  double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  double inter = ix * iy;
  double uni = a.w * a.h + b.w * b.h - inter;
  return inter / uni;
}

inline double center_error(const BBox& a, const BBox& b) {
  double dx = a.cx() - b.cx();
  double dy = a.cy() - b.cy();
  return std::sqrt(dx * dx + dy * dy);
}

// OTB-style curves: 21 IoU thresholds 0.00..1.00, 51 pixel thresholds 0..50.
struct SuccessCurve {
  std::array<double, 21> thresholds{};
  std::array<double, 21> rates{};
};

struct PrecisionCurve {
  std::array<double, 51> thresholds{};
  std::array<double, 51> rates{};
};

struct SequenceScore {
  SuccessCurve success;
  PrecisionCurve precision;
  double auc = 0.0;
  double dp20 = 0.0;
};

// Frame 0 is the initialization frame and is excluded from scoring.
inline SequenceScore score_sequence(const std::vector<BBox>& pred,
                                    const std::vector<BBox>& gt) {
  if (pred.size() != gt.size())
    throw data_error("score_sequence: prediction/groundtruth count mismatch");
  if (pred.size() < 2)
    throw data_error("score_sequence: need at least 2 frames");

  std::vector<double> ious, errs;
  for (std::size_t t = 1; t < pred.size(); ++t) {
    ious.push_back(iou(pred[t], gt[t]));
    errs.push_back(center_error(pred[t], gt[t]));
  }

  SequenceScore s;
  for (int i = 0; i < 21; ++i) {
    double th = i * 0.05;
    s.success.thresholds[std::size_t(i)] = th;
    int n = 0;
    for (double v : ious)
      if (v > th) ++n;
    s.success.rates[std::size_t(i)] = double(n) / double(ious.size());
  }
  for (int i = 0; i <= 50; ++i) {
    s.precision.thresholds[std::size_t(i)] = i;
    int n = 0;
    for (double v : errs)
      if (v <= i) ++n;
    s.precision.rates[std::size_t(i)] = double(n) / double(errs.size());
  }
  for (double r : s.success.rates) s.auc += r;
  s.auc /= 21.0;
  s.dp20 = s.precision.rates[20];
  return s;
}

struct EvalReport {
  double auc = 0.0;
  double dp20 = 0.0;
  SuccessCurve success;    // mean curve over sequences
  PrecisionCurve precision;
  std::map<std::string, double> attribute_auc;
  std::vector<SequenceScore> per_sequence;
};

struct EvalInput {
  std::vector<BBox> pred;
  std::vector<BBox> gt;
  std::vector<std::string> attributes;
};

inline EvalReport evaluate(const std::vector<EvalInput>& inputs) {
  if (inputs.empty()) throw input_error("evaluate: no sequences");
  EvalReport r;
  std::map<std::string, std::pair<double, int>> attr_acc;
  for (const auto& in : inputs) {
    SequenceScore s = score_sequence(in.pred, in.gt);
    r.auc += s.auc;
    r.dp20 += s.dp20;
    for (int i = 0; i < 21; ++i) {
      r.success.thresholds[std::size_t(i)] = s.success.thresholds[std::size_t(i)];
      r.success.rates[std::size_t(i)] += s.success.rates[std::size_t(i)];
    }
    for (int i = 0; i <= 50; ++i) {
      r.precision.thresholds[std::size_t(i)] = s.precision.thresholds[std::size_t(i)];
      r.precision.rates[std::size_t(i)] += s.precision.rates[std::size_t(i)];
    }
    for (const auto& a : in.attributes) {
      attr_acc[a].first += s.auc;
      attr_acc[a].second += 1;
    }
    r.per_sequence.push_back(std::move(s));
  }
  double n = double(inputs.size());
  r.auc /= n;
  r.dp20 /= n;
  for (auto& v : r.success.rates) v /= n;
  for (auto& v : r.precision.rates) v /= n;
  for (const auto& [tag, acc] : attr_acc)
    r.attribute_auc[tag] = acc.first / acc.second;
  return r;
}

// ---------------------------------------------------------------------------
// Ablation grids (Tables 4/5/6/8 layout)

struct AblationCell {
  std::string label;
  HeiMode hei = HeiMode::off;
  bool has_q = false, has_k = false, has_v = false;
  bool ham_seq = false, ham_par = false;
};

inline std::vector<AblationCell> ablation_grid(const std::string& name) {
  auto cell = [](std::string label, HeiMode hei, bool q, bool k, bool v,
                 bool seq, bool par) {
    return AblationCell{std::move(label), hei, q, k, v, seq, par};
  };
  if (name == "table4")
    return {cell("baseline", HeiMode::off, false, false, false, false, false),
            cell("+HEI", HeiMode::full, false, false, false, false, false),
            cell("+HEI+HAS", HeiMode::full, true, false, true, false, false),
            cell("+HEI+HAS+HAM", HeiMode::full, true, false, true, true, true)};
  if (name == "table5")
    return {cell("baseline", HeiMode::off, false, false, false, false, false),
            cell("concat_downsample", HeiMode::concat_downsample, false, false,
                 false, false, false),
            cell("downsample_add", HeiMode::downsample_add, false, false, false,
                 false, false),
            cell("sa_downsample_add", HeiMode::sa_downsample_add, false, false,
                 false, false, false),
            cell("hei", HeiMode::full, false, false, false, false, false)};
  if (name == "table6") {
    std::vector<AblationCell> cells;
    // Row order: -, q, k, v, qk, qv, kv, qkv.
    const std::array<std::array<bool, 3>, 8> combos = {{{false, false, false},
                                                        {true, false, false},
                                                        {false, true, false},
                                                        {false, false, true},
                                                        {true, true, false},
                                                        {true, false, true},
                                                        {false, true, true},
                                                        {true, true, true}}};
    for (const auto& c : combos) {
      std::string label = "has_";
      label += c[0] ? 'q' : '-';
      label += c[1] ? 'k' : '-';
      label += c[2] ? 'v' : '-';
      cells.push_back(cell(label, HeiMode::full, c[0], c[1], c[2], false, false));
    }
    return cells;
  }
  if (name == "table8")
    return {cell("ham_none", HeiMode::full, true, false, true, false, false),
            cell("ham_seq", HeiMode::full, true, false, true, true, false),
            cell("ham_par", HeiMode::full, true, false, true, false, true),
            cell("ham_both", HeiMode::full, true, false, true, true, true)};
  throw config_error("ablation_grid: unknown grid " + name);
}

struct AblationRow {
  std::string label;
  double auc = 0.0, dp20 = 0.0;
  double d_auc = 0.0, d_dp20 = 0.0;
};

// Trains every cell from the shared base with the identical seed and budget,
// tracks the evaluation sequences and reports AUC/DP@20P with deltas against
// the first (baseline) row.
template <typename S>
std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells,
                                      const Model<S>& base,
                                      const std::vector<Sequence>& train_data,
                                      const std::vector<std::string>& eval_dirs,
                                      const TrainConfig& tcfg,
                                      const TrackerConfig& kcfg,
                                      const std::string& work_dir) {
  namespace fs = std::filesystem;
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    ModelConfig cfg = base.cfg;
    cfg.hei = cell.hei;
    cfg.has_q = cell.has_q;
    cfg.has_k = cell.has_k;
    cfg.has_v = cell.has_v;
    cfg.ham_seq = cell.ham_seq;
    cfg.ham_par = cell.ham_par;
    Model<S> m = model_from_base(base, cfg, tcfg.seed);
    finetune(m, train_data, tcfg);

    std::string cell_dir = work_dir + "/" + cell.label;
    fs::create_directories(cell_dir);
    std::vector<EvalInput> evals;
    for (std::size_t i = 0; i < eval_dirs.size(); ++i) {
      std::string res = cell_dir + "/result_" + std::to_string(i) + ".txt";
      run_sequence(eval_dirs[i], m, kcfg, res);
      Sequence seq = load_sequence(eval_dirs[i]);
      EvalInput ev;
      for (const auto& r : load_results(res)) ev.pred.push_back(r.box);
      ev.gt = seq.groundtruth;
      ev.attributes = seq.meta.attributes;
      evals.push_back(std::move(ev));
    }
    EvalReport rep = evaluate(evals);
    rows.push_back({cell.label, rep.auc, rep.dp20, 0.0, 0.0});
  }
  for (auto& r : rows) {
    r.d_auc = r.auc - rows.front().auc;
    r.d_dp20 = r.dp20 - rows.front().dp20;
  }
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows,
                               const std::string& path) {
  std::ofstream os(path);
  if (!os) throw input_error("write_ablation_csv: cannot open " + path);
  os << "label,auc,dp20,d_auc,d_dp20\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f,%.6f\n",
                  r.label.c_str(), r.auc, r.dp20, r.d_auc, r.d_dp20);
    os << line;
  }
}

template <std::size_t N>
void write_curve_csv(const std::array<double, N>& thresholds,
                     const std::array<double, N>& rates,
                     const std::string& path) {
  std::ofstream os(path);
  if (!os) throw input_error("write_curve_csv: cannot open " + path);
  os << "threshold,rate\n";
  char line[64];
  for (std::size_t i = 0; i < N; ++i) {
    std::snprintf(line, sizeof line, "%.2f,%.6f\n", thresholds[i], rates[i]);
    os << line;
  }
}

// ---------------------------------------------------------------------------
// Flat key=value config files

inline std::map<std::string, std::string> parse_config_file(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw input_error("parse_config_file: cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("parse_config_file: bad line: " + line);
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
    };
    trim(key);
    trim(val);
    out[key] = val;
  }
  return out;
}

class ConfigMap {
 public:
  ConfigMap() = default;
  explicit ConfigMap(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  int get_int(const std::string& key, int def) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? def : std::stoi(it->second);
  }
  double get_double(const std::string& key, double def) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? def : std::stod(it->second);
  }
  std::string get_str(const std::string& key, const std::string& def) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
  }
  bool get_bool(const std::string& key, bool def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw config_error("ConfigMap: bad boolean for " + key);
  }
  const std::map<std::string, std::string>& raw() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace hyat
