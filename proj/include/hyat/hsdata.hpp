#pragma once

#include "hyat/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace hyat {

// A C-band reflectance cube. Planar band-major layout: band c occupies
// data[c*H*W .. (c+1)*H*W), rows scanned top to bottom.
struct HSFrame {
  int C = 0, H = 0, W = 0;
  int frame_index = 0;
  std::vector<float> data;
  std::vector<double> wavelengths;

  float at(int c, int y, int x) const {
    return data[std::size_t(c) * H * W + std::size_t(y) * W + x];
  }
  float& at(int c, int y, int x) {
    return data[std::size_t(c) * H * W + std::size_t(y) * W + x];
  }

  void validate() const {
    if (C < 4) throw data_error("HSFrame: C must be >= 4");
    if (data.size() != std::size_t(C) * H * W)
      throw shape_error("HSFrame: payload size does not match C*H*W");
    for (float v : data) {
      if (!std::isfinite(v)) throw data_error("HSFrame: non-finite value");
      if (v < 0.0f || v > 1.0f) throw data_error("HSFrame: value outside [0,1]");
    }
    if (int(wavelengths.size()) != C)
      throw shape_error("HSFrame: wavelength count != C");
    for (int c = 1; c < C; ++c)
      if (!(wavelengths[c] > wavelengths[c - 1]))
        throw data_error("HSFrame: wavelengths not strictly increasing");
  }
};

struct RGBImage {
  int H = 0, W = 0;
  std::vector<float> data;  // 3 planes, same layout as HSFrame

  float at(int c, int y, int x) const {
    return data[std::size_t(c) * H * W + std::size_t(y) * W + x];
  }
  float& at(int c, int y, int x) {
    return data[std::size_t(c) * H * W + std::size_t(y) * W + x];
  }
};

// 3 x C nonnegative band weights, each row summing to 1.
struct CMFMatrix {
  Mat<double> w;  // 3 x C

  void validate() const {
    if (w.rows() != 3) throw shape_error("CMFMatrix: must have 3 rows");
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        if (w(i, j) < 0.0) throw data_error("CMFMatrix: negative weight");
      if (std::abs(w.row(i).sum() - 1.0) > 1e-6)
        throw data_error("CMFMatrix: row not normalized");
    }
  }
};

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }

  void validate() const {
    if (!(w > 0) || !(h > 0) || !std::isfinite(x) || !std::isfinite(y) ||
        !std::isfinite(w) || !std::isfinite(h))
      throw input_error("BBox: degenerate or non-finite box");
  }
};

inline const std::vector<std::string>& attribute_vocabulary() {
  static const std::vector<std::string> v = {"OV",  "LR",  "BC", "MB",
                                             "FM",  "IPR", "OPR", "SV",
                                             "IV",  "OCC", "DEF"};
  return v;
}

struct SequenceMeta {
  int frame_count = 0;
  int C = 0, H = 0, W = 0;
  std::vector<double> wavelengths;
  CMFMatrix cmf;
  std::vector<std::string> attributes;

  void validate() const {
    if (frame_count < 2) throw data_error("SequenceMeta: frame_count < 2");
    const auto& vocab = attribute_vocabulary();
    for (const auto& a : attributes)
      if (std::find(vocab.begin(), vocab.end(), a) == vocab.end())
        throw data_error("SequenceMeta: unknown attribute tag " + a);
  }
};

// ---------------------------------------------------------------------------
// HSR frame files: "HSR1" magic, LE u32 C,H,W, then C*H*W float32 LE planar.

inline void save_frame(const HSFrame& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw input_error("save_frame: cannot open " + path);
  os.write("HSR1", 4);
  write_u32(os, std::uint32_t(f.C));
  write_u32(os, std::uint32_t(f.H));
  write_u32(os, std::uint32_t(f.W));
  for (float v : f.data) write_f32(os, v);
  if (!os) throw input_error("save_frame: write failed for " + path);
}

inline HSFrame load_frame(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw input_error("load_frame: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "HSR1")
    throw format_error("load_frame: bad magic in " + path);
  HSFrame f;
  f.C = int(read_u32(is));
  f.H = int(read_u32(is));
  f.W = int(read_u32(is));
  if (f.C <= 0 || f.H <= 0 || f.W <= 0)
    throw format_error("load_frame: bad dimensions in " + path);
  std::size_t n = std::size_t(f.C) * f.H * f.W;
  f.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    f.data[i] = read_f32(is);
    if (!is) throw format_error("load_frame: truncated payload in " + path);
  }
  // Placeholder wavelengths; sequence loaders overwrite from meta.json.
  f.wavelengths.resize(f.C);
  for (int c = 0; c < f.C; ++c)
    f.wavelengths[c] = 400.0 + 600.0 * c / std::max(1, f.C - 1);
  f.validate();
  return f;
}

// ---------------------------------------------------------------------------

inline RGBImage to_false_color(const HSFrame& f, const CMFMatrix& cmf) {
  if (cmf.w.cols() != f.C)
    throw shape_error("to_false_color: CMF column count != frame bands");
  RGBImage out;
  out.H = f.H;
  out.W = f.W;
  out.data.assign(std::size_t(3) * f.H * f.W, 0.0f);
  const std::size_t plane = std::size_t(f.H) * f.W;
  for (int k = 0; k < 3; ++k)
    for (int c = 0; c < f.C; ++c) {
      double wkc = cmf.w(k, c);
      if (wkc == 0.0) continue;
      const float* src = f.data.data() + std::size_t(c) * plane;
      float* dst = out.data.data() + std::size_t(k) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        dst[i] += float(wkc * src[i]);
    }
  return out;
}

// Square crop around the box center with side context_factor*sqrt(w*h),
// bilinear resize (half-pixel centers) to out_size, out-of-frame samples
// padded with the per-band mean of the source frame.
inline HSFrame crop_resize(const HSFrame& f, const BBox& box,
                           double context_factor, int out_size) {
  box.validate();
  if (context_factor < 1.0)
    throw input_error("crop_resize: context_factor must be >= 1");
  double side = context_factor * std::sqrt(box.w * box.h);
  double x0 = box.cx() - side / 2;
  double y0 = box.cy() - side / 2;
  double scale = side / out_size;

  std::vector<float> band_mean(f.C, 0.0f);
  const std::size_t plane = std::size_t(f.H) * f.W;
  for (int c = 0; c < f.C; ++c) {
    double s = 0;
    const float* src = f.data.data() + std::size_t(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) s += src[i];
    band_mean[c] = float(s / double(plane));
  }

  HSFrame out;
  out.C = f.C;
  out.H = out.W = out_size;
  out.frame_index = f.frame_index;
  out.wavelengths = f.wavelengths;
  out.data.resize(std::size_t(f.C) * out_size * out_size);

  auto sample = [&](int c, int yi, int xi) -> float {
    if (yi < 0 || yi >= f.H || xi < 0 || xi >= f.W) return band_mean[c];
    return f.at(c, yi, xi);
  };

  for (int j = 0; j < out_size; ++j) {
    double sy = y0 + (j + 0.5) * scale - 0.5;
    int y_lo = int(std::floor(sy));
    double fy = sy - y_lo;
    for (int i = 0; i < out_size; ++i) {
      double sx = x0 + (i + 0.5) * scale - 0.5;
      int x_lo = int(std::floor(sx));
      double fx = sx - x_lo;
      for (int c = 0; c < f.C; ++c) {
        double v00 = sample(c, y_lo, x_lo);
        double v01 = sample(c, y_lo, x_lo + 1);
        double v10 = sample(c, y_lo + 1, x_lo);
        double v11 = sample(c, y_lo + 1, x_lo + 1);
        double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                   fy * ((1 - fx) * v10 + fx * v11);
        out.at(c, j, i) = float(v);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic sequence generation

struct GenConfig {
  int C = 8, H = 64, W = 64, frames = 40;
  enum class Distractor { none, metamer, clutter };
  Distractor distractor = Distractor::none;
  double target_radius = 6.0;
  int occ_start = -1, occ_end = -1;  // inclusive frame range, -1 = none
  double noise = 0.0;
  std::vector<std::string> attributes;
};

// Smooth Gaussian-bump CMF rows, normalized to sum 1. Slight seeded jitter
// on the band centers so different sequences get different renderings.
inline CMFMatrix make_cmf(int C, Rng& rng) {
  CMFMatrix cmf;
  cmf.w.resize(3, C);
  for (int k = 0; k < 3; ++k) {
    double center = C * (k + 0.5) / 3.0 + 0.3 * rng.normal();
    double width = C / 4.0;
    for (int c = 0; c < C; ++c)
      cmf.w(k, c) = std::exp(-std::pow((c - center) / width, 2));
    cmf.w.row(k) /= cmf.w.row(k).sum();
  }
  cmf.validate();
  return cmf;
}

inline double spectral_angle(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double d = a.dot(b) / (a.norm() * b.norm());
  return std::acos(std::clamp(d, -1.0, 1.0));
}

// Distractor signature = target + alpha * (CMF null-space vector), so the two
// render to the same false color exactly. Throws if no in-range signature with
// spectral angle >= 0.2 rad exists.
inline Eigen::VectorXd make_metamer(const Eigen::VectorXd& target,
                                    const CMFMatrix& cmf) {
  Eigen::JacobiSVD<Mat<double>> svd(cmf.w, Eigen::ComputeFullV);
  const auto& V = svd.matrixV();
  int C = int(target.size());
  for (int k = 3; k < C; ++k) {
    Eigen::VectorXd n = V.col(k);
    for (double sign : {1.0, -1.0}) {
      Eigen::VectorXd dir = sign * n;
      // Largest alpha keeping the signature inside [0.02, 0.98].
      double alpha = 1e30;
      for (int c = 0; c < C; ++c) {
        if (dir(c) > 1e-12) alpha = std::min(alpha, (0.98 - target(c)) / dir(c));
        else if (dir(c) < -1e-12)
          alpha = std::min(alpha, (0.02 - target(c)) / dir(c));
      }
      if (alpha <= 0 || alpha > 1e20) continue;
      Eigen::VectorXd d = target + alpha * dir;
      if (spectral_angle(target, d) >= 0.2) return d;
    }
  }
  throw generation_error(
      "make_metamer: no in-gamut null-space signature reaches 0.2 rad "
      "spectral angle for this CMF");
}

namespace detail {

inline Eigen::VectorXd bump_signature(int C, double center_frac, double amp,
                                      double base) {
  Eigen::VectorXd s(C);
  double mu = center_frac * (C - 1);
  for (int c = 0; c < C; ++c)
    s(c) = base + amp * std::exp(-std::pow((c - mu) / (C / 4.0), 2));
  return s;
}

}  // namespace detail

// Writes frame_%06d.hsr files, groundtruth.txt and meta.json into out_dir.
// Pure function of (cfg, seed): reruns produce bit-identical directories.
inline void synth_sequence(const GenConfig& cfg, std::uint64_t seed,
                           const std::string& out_dir) {
  if (cfg.C < 4) throw generation_error("synth_sequence: C must be >= 4");
  if (cfg.frames < 2) throw generation_error("synth_sequence: frames must be >= 2");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  Rng rng(seed);
  CMFMatrix cmf = make_cmf(cfg.C, rng);

  Eigen::VectorXd bg = detail::bump_signature(cfg.C, 0.9, 0.10, 0.22);
  Eigen::VectorXd target =
      detail::bump_signature(cfg.C, 0.25 + 0.1 * rng.uniform(), 0.55, 0.25);
  Eigen::VectorXd occluder = Eigen::VectorXd::Constant(cfg.C, 0.12);

  bool have_distractor = cfg.distractor != GenConfig::Distractor::none;
  Eigen::VectorXd distractor;
  if (cfg.distractor == GenConfig::Distractor::metamer) {
    distractor = make_metamer(target, cmf);
  } else if (cfg.distractor == GenConfig::Distractor::clutter) {
    distractor = detail::bump_signature(cfg.C, 0.7, 0.5, 0.2);
  }

  const int R = std::max(2, int(std::lround(cfg.target_radius)));
  const int margin = R + 2;

  // Target sweeps left-to-right, distractor right-to-left; the paths cross
  // near the middle of the sequence so appearance-only trackers face a
  // genuine association decision.
  double ty0 = cfg.H * rng.uniform(0.40, 0.60);
  double amp = cfg.H * 0.12;
  auto target_pos = [&](int t) {
    double u = double(t) / (cfg.frames - 1);
    double x = margin + u * (cfg.W - 2 * margin);
    double y = ty0 + amp * std::sin(2 * M_PI * u);
    return std::pair<int, int>{int(std::lround(x)),
                               int(std::lround(std::clamp(y, double(margin),
                                                          double(cfg.H - margin))))};
  };
  auto distractor_pos = [&](int t) {
    double u = double(t) / (cfg.frames - 1);
    double x = (cfg.W - margin) - u * (cfg.W - 2 * margin);
    double y = ty0 + amp * std::sin(2 * M_PI * u + M_PI);
    return std::pair<int, int>{int(std::lround(x)),
                               int(std::lround(std::clamp(y, double(margin),
                                                          double(cfg.H - margin))))};
  };

  std::vector<float> noise_free;
  std::string gt_path = out_dir + "/groundtruth.txt";
  std::ofstream gt(gt_path);
  if (!gt) throw input_error("synth_sequence: cannot write " + gt_path);

  for (int t = 0; t < cfg.frames; ++t) {
    HSFrame f;
    f.C = cfg.C;
    f.H = cfg.H;
    f.W = cfg.W;
    f.frame_index = t;
    f.wavelengths.resize(cfg.C);
    for (int c = 0; c < cfg.C; ++c)
      f.wavelengths[c] = 450.0 + 500.0 * c / (cfg.C - 1);
    f.data.resize(std::size_t(cfg.C) * cfg.H * cfg.W);

    auto [tx, ty] = target_pos(t);
    auto [dx, dy] = distractor_pos(t);
    bool occluded = cfg.occ_start >= 0 && t >= cfg.occ_start && t <= cfg.occ_end;

    for (int y = 0; y < cfg.H; ++y)
      for (int x = 0; x < cfg.W; ++x) {
        const Eigen::VectorXd* sig = &bg;
        if (have_distractor) {
          int ddx = x - dx, ddy = y - dy;
          if (ddx * ddx + ddy * ddy <= R * R) sig = &distractor;
        }
        int tdx = x - tx, tdy = y - ty;
        if (tdx * tdx + tdy * tdy <= R * R) sig = &target;
        if (occluded && std::abs(x - tx) <= R / 2) sig = &occluder;
        for (int c = 0; c < cfg.C; ++c) {
          double v = (*sig)(c);
          if (cfg.noise > 0) v += rng.uniform(-cfg.noise, cfg.noise);
          f.at(c, y, x) = float(std::clamp(v, 0.0, 1.0));
        }
      }

    char name[32];
    std::snprintf(name, sizeof name, "frame_%06d.hsr", t);
    save_frame(f, out_dir + "/" + std::string(name));

    char line[128];
    std::snprintf(line, sizeof line, "%.3f,%.3f,%.3f,%.3f\n", double(tx - R),
                  double(ty - R), double(2 * R), double(2 * R));
    gt << line;
  }
  gt.close();

  nlohmann::ordered_json meta;
  meta["frame_count"] = cfg.frames;
  meta["C"] = cfg.C;
  meta["H"] = cfg.H;
  meta["W"] = cfg.W;
  std::vector<double> wl(cfg.C);
  for (int c = 0; c < cfg.C; ++c) wl[c] = 450.0 + 500.0 * c / (cfg.C - 1);
  meta["wavelengths"] = wl;
  std::vector<std::vector<double>> cm(3, std::vector<double>(cfg.C));
  for (int k = 0; k < 3; ++k)
    for (int c = 0; c < cfg.C; ++c) cm[k][c] = cmf.w(k, c);
  meta["cmf"] = cm;
  std::vector<std::string> attrs = cfg.attributes;
  if (cfg.occ_start >= 0 &&
      std::find(attrs.begin(), attrs.end(), "OCC") == attrs.end())
    attrs.push_back("OCC");
  if (cfg.distractor != GenConfig::Distractor::none &&
      std::find(attrs.begin(), attrs.end(), "BC") == attrs.end())
    attrs.push_back("BC");
  meta["attributes"] = attrs;

  std::ofstream mj(out_dir + "/meta.json");
  mj << meta.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Sequence loading

struct Sequence {
  SequenceMeta meta;
  std::vector<std::string> frame_paths;
  std::vector<BBox> groundtruth;

  HSFrame frame(int t) const {
    HSFrame f = load_frame(frame_paths[std::size_t(t)]);
    f.frame_index = t;
    f.wavelengths = meta.wavelengths;
    return f;
  }
};

inline std::vector<BBox> load_groundtruth(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw input_error("load_groundtruth: cannot open " + path);
  std::vector<BBox> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    BBox b;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &b.x, &b.y, &b.w, &b.h) != 4)
      throw format_error("load_groundtruth: bad line: " + line);
    out.push_back(b);
  }
  return out;
}

inline Sequence load_sequence(const std::string& dir) {
  std::ifstream mj(dir + "/meta.json");
  if (!mj) throw input_error("load_sequence: missing meta.json in " + dir);
  nlohmann::json j = nlohmann::json::parse(mj);
  Sequence s;
  s.meta.frame_count = j.at("frame_count").get<int>();
  s.meta.C = j.at("C").get<int>();
  s.meta.H = j.at("H").get<int>();
  s.meta.W = j.at("W").get<int>();
  s.meta.wavelengths = j.at("wavelengths").get<std::vector<double>>();
  auto cm = j.at("cmf").get<std::vector<std::vector<double>>>();
  s.meta.cmf.w.resize(3, s.meta.C);
  for (int k = 0; k < 3; ++k)
    for (int c = 0; c < s.meta.C; ++c) s.meta.cmf.w(k, c) = cm[k][c];
  s.meta.attributes = j.at("attributes").get<std::vector<std::string>>();
  s.meta.validate();

  for (int t = 0; t < s.meta.frame_count; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06d.hsr", t);
    s.frame_paths.push_back(dir + "/" + std::string(name));
  }
  s.groundtruth = load_groundtruth(dir + "/groundtruth.txt");
  if (int(s.groundtruth.size()) != s.meta.frame_count)
    throw data_error("load_sequence: groundtruth/frame count mismatch in " + dir);
  return s;
}

}  // namespace hyat
