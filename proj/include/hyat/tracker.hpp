#pragma once

#include "hyat/backbone.hpp"

namespace hyat {

struct TrackerConfig {
  double context_search = 4.0;
  double context_template = 2.0;
  double update_threshold = 0.7;  // tau
  double window_weight = 0.3;     // lambda, Hanning mix on cx/cy
  int update_interval = 1;        // gate checked every k-th frame

  void validate() const {
    if (window_weight < 0 || window_weight > 1)
      throw config_error("TrackerConfig: window_weight must be in [0,1]");
    if (update_interval < 1)
      throw config_error("TrackerConfig: update_interval must be >= 1");
  }
};

template <typename S>
struct TrackState {
  BBox current_box;
  double confidence = 1.0;
  HSFrame template_hs;         // first-frame template, never replaced
  HSFrame online_template_hs;  // confidence-gated refresh
  int frame_index = 0;
  TrackerConfig cfg;
  CMFMatrix cmf;
};

template <typename S>
TrackState<S> tracker_init(const HSFrame& frame, const BBox& box,
                           const Model<S>& model, const CMFMatrix& cmf,
                           const TrackerConfig& cfg = {}) {
  cfg.validate();
  box.validate();
  if (box.x < 0 || box.y < 0 || box.x + box.w > frame.W ||
      box.y + box.h > frame.H)
    throw input_error("tracker_init: box not inside frame");
  TrackState<S> st;
  st.cfg = cfg;
  st.cmf = cmf;
  st.current_box = box;
  st.confidence = 1.0;
  st.template_hs =
      crop_resize(frame, box, cfg.context_template, model.cfg.image_size);
  st.online_template_hs = st.template_hs;  // online template starts as template
  st.frame_index = 0;
  return st;
}

template <typename S>
void maybe_update_template(TrackState<S>& st, const HSFrame& frame,
                           const Model<S>& model, double confidence) {
  if (confidence <= st.cfg.update_threshold) return;
  if (st.frame_index % st.cfg.update_interval != 0) return;
  st.online_template_hs = crop_resize(frame, st.current_box,
                                      st.cfg.context_template,
                                      model.cfg.image_size);
}

template <typename S>
std::pair<BBox, double> track_step(TrackState<S>& st, const HSFrame& frame,
                                   const Model<S>& model) {
  SearchGeometry geo =
      SearchGeometry::around(st.current_box, st.cfg.context_search);
  BBox search_box;
  search_box.w = search_box.h = geo.side / st.cfg.context_search;
  search_box.x = geo.origin_x + geo.side / 2 - search_box.w / 2;
  search_box.y = geo.origin_y + geo.side / 2 - search_box.h / 2;

  PipelineInput<S> in;
  in.cmf = st.cmf;
  in.search_hs = crop_resize(frame, search_box, st.cfg.context_search,
                             model.cfg.image_size);
  in.template_hs = st.template_hs;
  in.online_hs = st.online_template_hs;

  BoxLogits<S> logits = infer(model, in);
  BBox pred = box_from_logits(logits, st.cfg.window_weight, geo);

  st.frame_index += 1;
  st.current_box = pred;
  st.confidence = logits.confidence;
  maybe_update_template(st, frame, model, logits.confidence);
  return {pred, logits.confidence};
}

// Runs a whole sequence, writing one "x,y,w,h,confidence" line per frame.
// Frame 0 echoes the ground truth (initialization frame).
template <typename S>
void run_sequence(const std::string& seq_dir, const Model<S>& model,
                  const TrackerConfig& cfg, const std::string& out_path) {
  Sequence seq = load_sequence(seq_dir);
  if (seq.meta.frame_count != int(seq.groundtruth.size()))
    throw data_error("run_sequence: frame count mismatch in " + seq_dir);

  std::ofstream os(out_path);
  if (!os) throw input_error("run_sequence: cannot open " + out_path);

  HSFrame first = seq.frame(0);
  BBox init_box = seq.groundtruth[0];
  TrackState<S> st = tracker_init(first, init_box, model, seq.meta.cmf, cfg);

  char line[160];
  std::snprintf(line, sizeof line, "%.3f,%.3f,%.3f,%.3f,%.6f\n", init_box.x,
                init_box.y, init_box.w, init_box.h, 1.0);
  os << line;

  for (int t = 1; t < seq.meta.frame_count; ++t) {
    HSFrame frame = seq.frame(t);
    auto [box, conf] = track_step(st, frame, model);
    std::snprintf(line, sizeof line, "%.3f,%.3f,%.3f,%.3f,%.6f\n", box.x,
                  box.y, box.w, box.h, conf);
    os << line;
  }
}

struct ResultLine {
  BBox box;
  double confidence = 0.0;
};

inline std::vector<ResultLine> load_results(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw input_error("load_results: cannot open " + path);
  std::vector<ResultLine> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ResultLine r;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &r.box.x, &r.box.y,
                    &r.box.w, &r.box.h, &r.confidence) != 5)
      throw format_error("load_results: bad line: " + line);
    out.push_back(r);
  }
  return out;
}

}  // namespace hyat
