// Command-line surface for the hyperspectral adapter tracker: data
// generation, two-phase training, tracking, evaluation and the ablation
// grids. Every subcommand takes a flat key=value --config file plus --seed
// and --out, and writes the resolved configuration next to its outputs.

#include "hyat/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

using namespace hyat;
namespace fs = std::filesystem;

namespace {

using Scalar = float;

ModelConfig model_config_from(const ConfigMap& c) {
  ModelConfig m;
  m.image_size = c.get_int("image_size", m.image_size);
  m.patch = c.get_int("patch", m.patch);
  m.bands = c.get_int("bands", m.bands);
  m.dim = c.get_int("dim", m.dim);
  m.layers = c.get_int("layers", m.layers);
  m.heads = c.get_int("heads", m.heads);
  m.rank = c.get_int("rank", m.rank);
  m.bins = c.get_int("bins", m.bins);
  m.mlp_hidden = c.get_int("mlp_hidden", m.mlp_hidden);
  m.hei = hei_mode_from_string(c.get_str("hei", to_string(m.hei)));
  m.has_q = c.get_bool("has_q", m.has_q);
  m.has_k = c.get_bool("has_k", m.has_k);
  m.has_v = c.get_bool("has_v", m.has_v);
  m.ham_seq = c.get_bool("ham_seq", m.ham_seq);
  m.ham_par = c.get_bool("ham_par", m.ham_par);
  m.hei_residual = c.get_bool("hei_residual", m.hei_residual);
  m.validate();
  return m;
}

TrainConfig train_config_from(const ConfigMap& c, std::uint64_t seed) {
  TrainConfig t;
  t.lr_hei_has = c.get_double("lr_hei_has", t.lr_hei_has);
  t.lr_ham = c.get_double("lr_ham", t.lr_ham);
  t.lr_base = c.get_double("lr_base", t.lr_base);
  t.weight_decay = c.get_double("weight_decay", t.weight_decay);
  t.batch_size = c.get_int("batch_size", t.batch_size);
  t.epochs = c.get_int("epochs", t.epochs);
  t.decay_epoch = c.get_int("decay_epoch", t.decay_epoch);
  t.decay_factor = c.get_double("decay_factor", t.decay_factor);
  t.samples_per_epoch = c.get_int("samples_per_epoch", t.samples_per_epoch);
  t.grad_clip = c.get_double("grad_clip", t.grad_clip);
  t.context_search = c.get_double("context_search", t.context_search);
  t.context_template = c.get_double("context_template", t.context_template);
  t.center_jitter = c.get_double("center_jitter", t.center_jitter);
  t.scale_jitter = c.get_double("scale_jitter", t.scale_jitter);
  t.seed = seed;
  t.validate();
  return t;
}

GenConfig gen_config_from(const ConfigMap& c) {
  GenConfig g;
  g.C = c.get_int("C", g.C);
  g.H = c.get_int("H", g.H);
  g.W = c.get_int("W", g.W);
  g.frames = c.get_int("frames", g.frames);
  g.target_radius = c.get_double("target_radius", g.target_radius);
  g.occ_start = c.get_int("occ_start", g.occ_start);
  g.occ_end = c.get_int("occ_end", g.occ_end);
  g.noise = c.get_double("noise", g.noise);
  std::string d = c.get_str("distractor", "none");
  if (d == "none") g.distractor = GenConfig::Distractor::none;
  else if (d == "metamer") g.distractor = GenConfig::Distractor::metamer;
  else if (d == "clutter") g.distractor = GenConfig::Distractor::clutter;
  else throw config_error("unknown distractor mode: " + d);
  return g;
}

TrackerConfig tracker_config_from(const ConfigMap& c) {
  TrackerConfig k;
  k.context_search = c.get_double("context_search", k.context_search);
  k.context_template = c.get_double("context_template", k.context_template);
  k.update_threshold = c.get_double("update_threshold", k.update_threshold);
  k.window_weight = c.get_double("window_weight", k.window_weight);
  k.update_interval = c.get_int("update_interval", k.update_interval);
  k.validate();
  return k;
}

ConfigMap load_config(const std::string& path) {
  if (path.empty()) return ConfigMap{};
  return ConfigMap(parse_config_file(path));
}

// Every run leaves a resolved_config.txt recording the effective settings.
void write_resolved(const std::string& out_dir, const std::string& subcommand,
                    const ConfigMap& cfg, std::uint64_t seed) {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/resolved_config.txt");
  if (!os) throw input_error("cannot write resolved config in " + out_dir);
  os << "subcommand=" << subcommand << "\n";
  os << "seed=" << seed << "\n";
  for (const auto& [k, v] : cfg.raw()) os << k << "=" << v << "\n";
}

std::vector<Sequence> load_sequences(const std::string& dir) {
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "meta.json"))
      dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw input_error("no sequences found under " + dir);
  std::vector<Sequence> out;
  for (const auto& d : dirs) out.push_back(load_sequence(d));
  return out;
}

std::vector<std::string> sequence_dirs(const std::string& dir) {
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "meta.json"))
      dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw input_error("no sequences found under " + dir);
  return dirs;
}

int cmd_gen_data(const ConfigMap& cfg, std::uint64_t seed,
                 const std::string& out) {
  GenConfig g = gen_config_from(cfg);
  int count = cfg.get_int("count", 1);
  if (count < 1) throw config_error("count must be >= 1");
  write_resolved(out, "gen-data", cfg, seed);
  char name[32];
  for (int i = 0; i < count; ++i) {
    std::snprintf(name, sizeof name, "seq_%03d", i);
    std::string dir = out + "/" + name;
    fs::create_directories(dir);
    synth_sequence(g, seed + std::uint64_t(i), dir);
  }
  std::cout << "generated " << count << " sequence(s) under " << out << "\n";
  return 0;
}

int cmd_pretrain(const ConfigMap& cfg, std::uint64_t seed,
                 const std::string& out, const std::string& data_dir) {
  ModelConfig mcfg = model_config_from(cfg);
  if (mcfg.hei != HeiMode::off || mcfg.has_any() || mcfg.ham_seq || mcfg.ham_par)
    throw config_error("pretrain expects an adapter-free model config "
                       "(hei=off, has_*=false, ham_*=false)");
  write_resolved(out, "pretrain", cfg, seed);
  auto data = load_sequences(data_dir);
  Model<Scalar> m = init_model<Scalar>(mcfg, seed);
  TrainStats stats = pretrain_base(m, data, train_config_from(cfg, seed));
  save_checkpoint(m, out + "/base.ckpt");
  std::cout << "pretrained " << stats.epoch_loss.size() << " epochs, final loss "
            << (stats.epoch_loss.empty() ? 0.0 : stats.epoch_loss.back())
            << "\nwrote " << out << "/base.ckpt\n";
  return 0;
}

int cmd_finetune(const ConfigMap& cfg, std::uint64_t seed,
                 const std::string& out, const std::string& data_dir,
                 const std::string& base_path) {
  Model<Scalar> base = load_checkpoint<Scalar>(base_path);
  ModelConfig target = base.cfg;
  target.hei = hei_mode_from_string(cfg.get_str("hei", "full"));
  target.has_q = cfg.get_bool("has_q", true);
  target.has_k = cfg.get_bool("has_k", false);
  target.has_v = cfg.get_bool("has_v", true);
  target.ham_seq = cfg.get_bool("ham_seq", true);
  target.ham_par = cfg.get_bool("ham_par", true);
  target.hei_residual = cfg.get_bool("hei_residual", true);
  write_resolved(out, "finetune", cfg, seed);
  auto data = load_sequences(data_dir);
  Model<Scalar> m = model_from_base(base, target, seed);
  TrainStats stats = finetune(m, data, train_config_from(cfg, seed));
  save_checkpoint(m, out + "/model.ckpt");
  std::cout << "finetuned " << stats.epoch_loss.size() << " epochs, final loss "
            << (stats.epoch_loss.empty() ? 0.0 : stats.epoch_loss.back())
            << "\nwrote " << out << "/model.ckpt\n";
  return 0;
}

int cmd_track(const ConfigMap& cfg, std::uint64_t seed, const std::string& out,
              const std::string& ckpt, const std::string& seq_dir) {
  Model<Scalar> m = load_checkpoint<Scalar>(ckpt);
  write_resolved(out, "track", cfg, seed);
  run_sequence(seq_dir, m, tracker_config_from(cfg), out + "/results.txt");
  std::cout << "wrote " << out << "/results.txt\n";
  return 0;
}

int cmd_eval(const ConfigMap& cfg, std::uint64_t seed, const std::string& out,
             const std::vector<std::string>& seq_dirs,
             const std::vector<std::string>& result_files) {
  if (seq_dirs.size() != result_files.size() || seq_dirs.empty())
    throw input_error("eval needs matching --seq/--results pairs");
  write_resolved(out, "eval", cfg, seed);
  std::vector<EvalInput> inputs;
  for (std::size_t i = 0; i < seq_dirs.size(); ++i) {
    Sequence seq = load_sequence(seq_dirs[i]);
    EvalInput in;
    for (const auto& r : load_results(result_files[i])) in.pred.push_back(r.box);
    in.gt = seq.groundtruth;
    in.attributes = seq.meta.attributes;
    inputs.push_back(std::move(in));
  }
  EvalReport rep = evaluate(inputs);
  write_curve_csv(rep.success.thresholds, rep.success.rates,
                  out + "/success_curve.csv");
  write_curve_csv(rep.precision.thresholds, rep.precision.rates,
                  out + "/precision_curve.csv");
  std::ofstream os(out + "/report.txt");
  char line[128];
  std::snprintf(line, sizeof line, "auc=%.6f\ndp20=%.6f\n", rep.auc, rep.dp20);
  os << line;
  for (const auto& [tag, auc] : rep.attribute_auc) {
    std::snprintf(line, sizeof line, "auc[%s]=%.6f\n", tag.c_str(), auc);
    os << line;
  }
  std::cout << "auc=" << rep.auc << " dp20=" << rep.dp20 << "\n";
  return 0;
}

int cmd_ablate(const ConfigMap& cfg, std::uint64_t seed, const std::string& out,
               const std::string& grid, const std::string& base_path,
               const std::string& data_dir, const std::string& eval_dir) {
  auto cells = ablation_grid(grid);
  Model<Scalar> base = load_checkpoint<Scalar>(base_path);
  write_resolved(out, "ablate", cfg, seed);
  auto rows = run_ablation(cells, base, load_sequences(data_dir),
                           sequence_dirs(eval_dir),
                           train_config_from(cfg, seed),
                           tracker_config_from(cfg), out + "/cells");
  write_ablation_csv(rows, out + "/ablation.csv");
  std::cout << "wrote " << out << "/ablation.csv\n";
  return 0;
}

int cmd_gradcheck(const ConfigMap& cfg, std::uint64_t seed,
                  const std::string& out, bool tiny) {
  ModelConfig mcfg;
  if (tiny) {
    mcfg.image_size = 8;
    mcfg.patch = 4;
    mcfg.bands = 4;
    mcfg.dim = 8;
    mcfg.layers = 2;
    mcfg.heads = 2;
    mcfg.rank = 2;
    mcfg.bins = 4;
  } else {
    mcfg = model_config_from(cfg);
  }
  double step = cfg.get_double("step", 1e-5);
  double tol = cfg.get_double("tol", 1e-4);
  write_resolved(out, "gradcheck", cfg, seed);

  Model<double> m = init_model<double>(mcfg, seed);
  Rng rng(seed + 1);
  // Nudge the up-projections off zero so every gradient path is live.
  for (auto& [name, mat] : m.t)
    if (is_adapter_tensor(name) && name.find(".up") != std::string::npos)
      mat = rng.gaussian<double>(int(mat.rows()), int(mat.cols()), 0.05);
  TrainSample<double> sample = random_sample<double>(mcfg, rng);
  GradCheckReport rep = grad_check(m, sample, step, tol);

  std::ofstream os(out + "/gradcheck.txt");
  char line[160];
  for (const auto& e : rep.entries) {
    std::snprintf(line, sizeof line, "%-20s max_rel_err=%.3e %s\n",
                  e.name.c_str(), e.max_rel_err, e.pass ? "pass" : "FAIL");
    os << line;
    std::cout << line;
  }
  std::cout << (rep.all_pass ? "all gradients pass" : "gradient check FAILED")
            << "\n";
  return rep.all_pass ? 0 : 1;
}

int cmd_paramcount(const std::string& config_arg) {
  ModelConfig mcfg;
  if (config_arg == "full") {
    mcfg.image_size = 256;
    mcfg.patch = 16;
    mcfg.bands = 16;
    mcfg.dim = 768;
    mcfg.layers = 12;
    mcfg.heads = 12;
    mcfg.rank = 16;
    mcfg.bins = 16;
  } else if (config_arg == "desk" || config_arg.empty()) {
    // defaults
  } else {
    mcfg = model_config_from(ConfigMap(parse_config_file(config_arg)));
  }
  Model<float> m = init_model<float>(mcfg, 0);
  auto part = partition_params(m, Phase::finetune);
  std::size_t tr = param_count(m, part.trainable);
  std::size_t fr = param_count(m, part.frozen);
  double ratio = double(tr) / double(tr + fr);
  char line[160];
  std::snprintf(line, sizeof line,
                "trainable=%zu frozen=%zu total=%zu ratio=%.6f\n", tr, fr,
                tr + fr, ratio);
  std::cout << line;
  return ratio < 0.05 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperspectral adapter tracker"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, base_path, ckpt_path, seq_dir;
  std::string grid = "table4", eval_dir, paramcount_config;
  std::vector<std::string> eval_seqs, eval_results;
  std::uint64_t seed = 0;
  bool tiny = false;

  auto add_common = [&](CLI::App* sub, bool need_out = true) {
    sub->add_option("--config", config_path, "flat key=value config file");
    sub->add_option("--seed", seed, "random seed");
    auto* o = sub->add_option("--out", out_dir, "output directory");
    if (need_out) o->required();
  };

  auto* gen = app.add_subcommand("gen-data", "generate synthetic sequences");
  add_common(gen);

  auto* pre = app.add_subcommand("pretrain", "train the frozen base");
  add_common(pre);
  pre->add_option("--data", data_dir, "training sequence directory")->required();

  auto* fin = app.add_subcommand("finetune", "adapter fine-tuning");
  add_common(fin);
  fin->add_option("--data", data_dir, "training sequence directory")->required();
  fin->add_option("--base", base_path, "pretrained base checkpoint")->required();

  auto* trk = app.add_subcommand("track", "run the tracker on one sequence");
  add_common(trk);
  trk->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  trk->add_option("--seq", seq_dir, "sequence directory")->required();

  auto* ev = app.add_subcommand("eval", "score result files against ground truth");
  add_common(ev);
  ev->add_option("--seq", eval_seqs, "sequence directories")->required();
  ev->add_option("--results", eval_results, "result files (paired with --seq)")
      ->required();

  auto* abl = app.add_subcommand("ablate", "run an ablation grid");
  add_common(abl);
  abl->add_option("--grid", grid, "table4|table5|table6|table8");
  abl->add_option("--base", base_path, "pretrained base checkpoint")->required();
  abl->add_option("--data", data_dir, "training sequence directory")->required();
  abl->add_option("--eval", eval_dir, "evaluation sequence directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gc);
  gc->add_flag("--tiny", tiny, "use the built-in tiny configuration");

  auto* pc = app.add_subcommand("paramcount", "trainable parameter budget");
  pc->add_option("--config", paramcount_config,
                 "config file, or preset name 'full'/'desk'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems are validation failures
  }

  try {
    ConfigMap cfg = load_config(config_path);
    if (gen->parsed()) return cmd_gen_data(cfg, seed, out_dir);
    if (pre->parsed()) return cmd_pretrain(cfg, seed, out_dir, data_dir);
    if (fin->parsed())
      return cmd_finetune(cfg, seed, out_dir, data_dir, base_path);
    if (trk->parsed()) return cmd_track(cfg, seed, out_dir, ckpt_path, seq_dir);
    if (ev->parsed())
      return cmd_eval(cfg, seed, out_dir, eval_seqs, eval_results);
    if (abl->parsed())
      return cmd_ablate(cfg, seed, out_dir, grid, base_path, data_dir, eval_dir);
    if (gc->parsed()) return cmd_gradcheck(cfg, seed, out_dir, tiny);
    if (pc->parsed()) return cmd_paramcount(paramcount_config);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const input_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const format_error& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 1;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
