#include "hyat/harness.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

using namespace hyat;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / "hyat_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

}  // namespace

TEST_CASE("iou oracles") {
  BBox a{0, 0, 4, 4};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, BBox{4, 4, 4, 4}) == doctest::Approx(0.0));
  CHECK(iou(a, BBox{10, 10, 2, 2}) == doctest::Approx(0.0));
  // Half-overlap in one axis: inter 8, union 24 -> 1/3.
  CHECK(iou(a, BBox{2, 0, 4, 4}) == doctest::Approx(8.0 / 24.0).epsilon(1e-9));
  CHECK(iou(a, BBox{2, 2, 4, 4}) == doctest::Approx(4.0 / 28.0).epsilon(1e-9));
}

TEST_CASE("iou is symmetric and scale invariant") {
  Rng rng(2);
  for (int t = 0; t < 25; ++t) {
    BBox a{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(1, 5),
           rng.uniform(1, 5)};
    BBox b{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(1, 5),
           rng.uniform(1, 5)};
    CHECK(iou(a, b) == doctest::Approx(iou(b, a)).epsilon(1e-12));
    double k = 3.0;
    BBox a2{a.x * k, a.y * k, a.w * k, a.h * k};
    BBox b2{b.x * k, b.y * k, b.w * k, b.h * k};
    CHECK(iou(a2, b2) == doctest::Approx(iou(a, b)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(iou(BBox{0, 0, 0, 1}, BBox{0, 0, 1, 1}), input_error);
}

TEST_CASE("center error oracle") {
  BBox a{0, 0, 2, 2};  // center (1,1)
  BBox b{3, 5, 2, 2};  // center (4,6): dx 3, dy 5
  CHECK(center_error(a, b) == doctest::Approx(std::sqrt(34.0)).epsilon(1e-12));
  CHECK(center_error(a, a) == 0.0);
}

TEST_CASE("score_sequence excludes frame 0 and builds monotone curves") {
  // Frame 0 deliberately terrible: it must not count.
  BBox gt{10, 10, 4, 4};
  std::vector<BBox> g = {gt, gt, gt, gt};
  std::vector<BBox> p = {BBox{90, 90, 1, 1}, gt, BBox{12, 10, 4, 4},
                         BBox{40, 40, 4, 4}};
  SequenceScore s = score_sequence(p, g);

  // IoUs of frames 1..3: 1.0, 1/3, 0.
  CHECK(s.success.rates[0] == doctest::Approx(2.0 / 3.0));   // th 0.00: iou > 0
  CHECK(s.success.rates[20] == doctest::Approx(0.0));        // th 1.00
  CHECK(s.success.rates[6] == doctest::Approx(2.0 / 3.0));   // th 0.30 < 1/3
  CHECK(s.success.rates[7] == doctest::Approx(1.0 / 3.0));   // th 0.35 > 1/3
  double auc = 0;
  for (double r : s.success.rates) auc += r;
  CHECK(s.auc == doctest::Approx(auc / 21.0).epsilon(1e-12));

  // Center errors: 0, 2, ~42.4; dp20 counts errors <= 20.
  CHECK(s.dp20 == doctest::Approx(2.0 / 3.0));
  for (int i = 1; i < 21; ++i)
    CHECK(s.success.rates[std::size_t(i)] <= s.success.rates[std::size_t(i - 1)]);
  for (int i = 1; i <= 50; ++i)
    CHECK(s.precision.rates[std::size_t(i)] >= s.precision.rates[std::size_t(i - 1)]);

  CHECK_THROWS_AS(score_sequence({gt}, {gt}), data_error);
  CHECK_THROWS_AS(score_sequence(p, {gt, gt}), data_error);
}

TEST_CASE("perfect tracking scores AUC 20/21 and DP 1") {
  BBox gt{5, 5, 6, 6};
  std::vector<BBox> g(5, gt);
  SequenceScore s = score_sequence(g, g);
  // iou == 1 beats every threshold except the 1.00 bucket (strict >).
  CHECK(s.auc == doctest::Approx(20.0 / 21.0).epsilon(1e-12));
  CHECK(s.dp20 == doctest::Approx(1.0));
}

TEST_CASE("evaluate averages sequences and groups attributes") {
  BBox gt{10, 10, 4, 4};
  EvalInput perfect;
  perfect.gt = {gt, gt, gt};
  perfect.pred = perfect.gt;
  perfect.attributes = {"OCC", "BC"};

  EvalInput lost;
  lost.gt = {gt, gt, gt};
  lost.pred = {gt, BBox{50, 50, 4, 4}, BBox{50, 50, 4, 4}};
  lost.attributes = {"BC"};

  EvalReport r = evaluate({perfect, lost});
  double auc_perfect = 20.0 / 21.0;
  double auc_lost = 0.0;
  CHECK(r.auc == doctest::Approx((auc_perfect + auc_lost) / 2).epsilon(1e-12));
  CHECK(r.dp20 == doctest::Approx(0.5));
  CHECK(r.attribute_auc.at("OCC") == doctest::Approx(auc_perfect));
  CHECK(r.attribute_auc.at("BC") == doctest::Approx(auc_perfect / 2));
  CHECK(r.per_sequence.size() == 2);

  CHECK_THROWS_AS(evaluate({}), input_error);
}

TEST_CASE("ablation grids match the published row sets") {
  auto t4 = ablation_grid("table4");
  REQUIRE(t4.size() == 4);
  CHECK(t4[0].label == "baseline");
  CHECK(t4[0].hei == HeiMode::off);
  CHECK(!t4[0].has_q);
  CHECK(t4[3].has_q);
  CHECK(!t4[3].has_k);
  CHECK(t4[3].has_v);
  CHECK(t4[3].ham_seq);
  CHECK(t4[3].ham_par);

  auto t5 = ablation_grid("table5");
  REQUIRE(t5.size() == 5);
  CHECK(t5[1].hei == HeiMode::concat_downsample);
  CHECK(t5[4].hei == HeiMode::full);

  auto t6 = ablation_grid("table6");
  REQUIRE(t6.size() == 8);
  CHECK(t6[0].label == "has_---");
  CHECK(t6[7].label == "has_qkv");
  // All 8 q/k/v combinations, each exactly once.
  std::set<int> seen;
  for (const auto& c : t6) {
    CHECK(c.hei == HeiMode::full);
    CHECK(!c.ham_seq);
    CHECK(!c.ham_par);
    seen.insert(int(c.has_q) * 4 + int(c.has_k) * 2 + int(c.has_v));
  }
  CHECK(seen.size() == 8);

  auto t8 = ablation_grid("table8");
  REQUIRE(t8.size() == 4);
  CHECK(t8[0].label == "ham_none");
  for (const auto& c : t8) {
    CHECK(c.has_q);
    CHECK(c.has_v);
    CHECK(!c.has_k);
  }

  CHECK_THROWS_AS(ablation_grid("table9"), config_error);
}

TEST_CASE("csv writers produce the documented headers") {
  auto dir = tmp_dir("csv");
  write_ablation_csv({{"baseline", 0.5, 0.625, 0.0, 0.0},
                      {"+HEI", 0.6, 0.75, 0.1, 0.125}},
                     dir + "/abl.csv");
  std::ifstream is(dir + "/abl.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "label,auc,dp20,d_auc,d_dp20");
  std::getline(is, line);
  CHECK(line == "baseline,0.500000,0.625000,0.000000,0.000000");
  std::getline(is, line);
  CHECK(line == "+HEI,0.600000,0.750000,0.100000,0.125000");

  SuccessCurve c;
  for (int i = 0; i < 21; ++i) {
    c.thresholds[std::size_t(i)] = i * 0.05;
    c.rates[std::size_t(i)] = 1.0 - i * 0.05;
  }
  write_curve_csv(c.thresholds, c.rates, dir + "/curve.csv");
  std::ifstream cs(dir + "/curve.csv");
  std::getline(cs, line);
  CHECK(line == "threshold,rate");
  std::getline(cs, line);
  CHECK(line == "0.00,1.000000");
  int rows = 1;
  while (std::getline(cs, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 21);
}

TEST_CASE("config file parsing") {
  auto dir = tmp_dir("cfg");
  {
    std::ofstream os(dir + "/run.cfg");
    os << "# comment line\n";
    os << "epochs = 12\n";
    os << "lr_ham=1e-5\n";
    os << "hei = full\n";
    os << "ham_seq = true\n";
    os << "\n";
  }
  ConfigMap cfg(parse_config_file(dir + "/run.cfg"));
  CHECK(cfg.get_int("epochs", 0) == 12);
  CHECK(cfg.get_double("lr_ham", 0) == doctest::Approx(1e-5));
  CHECK(cfg.get_str("hei", "off") == "full");
  CHECK(cfg.get_bool("ham_seq", false));
  CHECK(cfg.get_int("missing", 7) == 7);
  CHECK_THROWS_AS(cfg.get_bool("hei", false), config_error);

  {
    std::ofstream os(dir + "/bad.cfg");
    os << "no equals sign here\n";
  }
  CHECK_THROWS_AS(parse_config_file(dir + "/bad.cfg"), config_error);
  CHECK_THROWS_AS(parse_config_file(dir + "/nope.cfg"), input_error);
}

TEST_CASE("end-to-end ablation on a thumbnail budget") {
  // Smallest possible grid run: tiny model, two cells, one sequence.
  ModelConfig cfg;
  cfg.image_size = 8;
  cfg.patch = 4;
  cfg.bands = 4;
  cfg.dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.rank = 2;
  cfg.bins = 4;
  cfg.hei = HeiMode::off;
  cfg.has_q = cfg.has_k = cfg.has_v = false;
  cfg.ham_seq = cfg.ham_par = false;
  Model<float> base = init_model<float>(cfg, 7);

  GenConfig g;
  g.C = 4;
  g.H = g.W = 24;
  g.frames = 4;
  auto train_dir = tmp_dir("abl_train");
  auto eval_dir = tmp_dir("abl_eval");
  synth_sequence(g, 8, train_dir);
  synth_sequence(g, 9, eval_dir);
  std::vector<Sequence> train_data = {load_sequence(train_dir)};

  TrainConfig tcfg;
  tcfg.epochs = 1;
  tcfg.decay_epoch = 0;
  tcfg.samples_per_epoch = 4;
  tcfg.batch_size = 2;
  tcfg.seed = 10;

  std::vector<AblationCell> cells = {
      {"baseline", HeiMode::off, false, false, false, false, false},
      {"+HEI", HeiMode::full, false, false, false, false, false}};
  auto work = tmp_dir("abl_work");
  auto rows = run_ablation(cells, base, train_data, {eval_dir}, tcfg,
                           TrackerConfig{}, work);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].label == "baseline");
  CHECK(rows[0].d_auc == 0.0);
  CHECK(rows[1].d_auc == doctest::Approx(rows[1].auc - rows[0].auc));
  for (const auto& r : rows) {
    CHECK(r.auc >= 0.0);
    CHECK(r.auc <= 1.0);
  }
  CHECK(fs::exists(work + "/baseline/result_0.txt"));
}
