#include "hyat/head.hpp"

#include <doctest.h>

using namespace hyat;

namespace {

const SearchGeometry kUnit{0.0, 0.0, 1.0};  // normalized == pixel coordinates

Mat<double> onehotish(int B, const std::array<int, 4>& bins, double mag) {
  Mat<double> l = Mat<double>::Zero(4, B);
  for (int i = 0; i < 4; ++i) l(i, bins[std::size_t(i)]) = mag;
  return l;
}

}  // namespace

TEST_CASE("uniform logits give confidence 1/B and the crop center") {
  const int B = 16;
  Mat<double> zero = Mat<double>::Zero(4, B);
  BoxLogits<double> l = make_box_logits(zero);
  CHECK(l.confidence == doctest::Approx(1.0 / B).epsilon(1e-12));

  BBox box = box_from_logits(l, 0.0, kUnit);
  // Soft-argmax of a uniform distribution over bin centers is exactly 0.5.
  CHECK(box.cx() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(box.cy() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(box.w == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sharp logits decode to the bin center") {
  const int B = 16;
  BoxLogits<double> l = make_box_logits(onehotish(B, {3, 12, 7, 7}, 200.0));
  CHECK(l.confidence == doctest::Approx(1.0).epsilon(1e-9));
  BBox box = box_from_logits(l, 0.0, kUnit);
  CHECK(box.cx() == doctest::Approx((3 + 0.5) / B).epsilon(1e-9));
  CHECK(box.cy() == doctest::Approx((12 + 0.5) / B).epsilon(1e-9));
  CHECK(box.w == doctest::Approx((7 + 0.5) / B).epsilon(1e-9));
  CHECK(box.h == doctest::Approx((7 + 0.5) / B).epsilon(1e-9));
}

TEST_CASE("lambda=1 ignores the network position entirely") {
  const int B = 16;
  BoxLogits<double> l = make_box_logits(onehotish(B, {0, 15, 8, 8}, 200.0));
  BBox box = box_from_logits(l, 1.0, kUnit);
  // Hanning weights are symmetric, so the mixed center is exactly 0.5; the
  // scale coordinates never see the window.
  CHECK(box.cx() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(box.cy() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(box.w == doctest::Approx((8 + 0.5) / B).epsilon(1e-9));

  CHECK_THROWS_AS(box_from_logits(l, 1.5, kUnit), config_error);
  CHECK_THROWS_AS(box_from_logits(l, -0.1, kUnit), config_error);
}

TEST_CASE("lambda interpolates between network and window") {
  const int B = 16;
  BoxLogits<double> l = make_box_logits(onehotish(B, {2, 2, 8, 8}, 200.0));
  double c0 = box_from_logits(l, 0.0, kUnit).cx();
  double c3 = box_from_logits(l, 0.3, kUnit).cx();
  double c1 = box_from_logits(l, 1.0, kUnit).cx();
  CHECK(c0 < c3);
  CHECK(c3 < c1);
}

TEST_CASE("hanning weights are normalized and centered") {
  auto w = hanning_bins(16);
  double sum = 0, mean = 0;
  for (int b = 0; b < 16; ++b) {
    sum += w[std::size_t(b)];
    mean += w[std::size_t(b)] * ((b + 0.5) / 16.0);
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mean == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w[8] > w[0]);
}

TEST_CASE("search geometry maps crop coordinates to frame pixels") {
  BBox box{10, 20, 8, 2};  // center (14, 21), sqrt(16)=4, side 16 at factor 4
  SearchGeometry g = SearchGeometry::around(box, 4.0);
  CHECK(g.side == doctest::Approx(16.0));
  CHECK(g.origin_x == doctest::Approx(6.0));
  CHECK(g.origin_y == doctest::Approx(13.0));

  BoxLogits<double> l = make_box_logits(onehotish(16, {8, 8, 4, 4}, 200.0));
  BBox out = box_from_logits(l, 0.0, g);
  CHECK(out.cx() == doctest::Approx(6.0 + 16.0 * 8.5 / 16).epsilon(1e-9));
  CHECK(out.w == doctest::Approx(16.0 * 4.5 / 16).epsilon(1e-9));
}

TEST_CASE("gt_bins inverts the decode within one bin") {
  const int B = 16;
  SearchGeometry g{5.0, 7.0, 20.0};
  BBox gt;
  gt.w = 20.0 * 0.3;
  gt.h = 20.0 * 0.4;
  gt.x = 5.0 + 20.0 * 0.6 - gt.w / 2;
  gt.y = 7.0 + 20.0 * 0.2 - gt.h / 2;
  auto bins = gt_bins(gt, g, B);
  REQUIRE(bins.has_value());
  CHECK((*bins)[0] == int(0.6 * B));
  CHECK((*bins)[1] == int(0.2 * B));
  CHECK((*bins)[2] == int(0.3 * B));
  CHECK((*bins)[3] == int(0.4 * B));

  // Box centered outside the crop is a skip signal, not an exception.
  BBox far = gt;
  far.x += 100;
  CHECK(!gt_bins(far, g, B).has_value());
}

TEST_CASE("cross entropy of uniform logits is ln B") {
  const int B = 16;
  Mat<double> zero = Mat<double>::Zero(4, B);
  BoxLogits<double> l = make_box_logits(zero);
  BBox gt;
  gt.w = 0.25;
  gt.h = 0.25;
  gt.x = 0.5 - gt.w / 2;
  gt.y = 0.5 - gt.h / 2;
  CHECK(ce_loss(l, gt, kUnit) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy is shift invariant in the logits") {
  Rng rng(4);
  Mat<double> raw = rng.gaussian<double>(4, 16, 2.0);
  BoxLogits<double> a = make_box_logits(raw);
  BoxLogits<double> b = make_box_logits(Mat<double>(raw.array() + 37.0));
  BBox gt;
  gt.w = 0.2;
  gt.h = 0.2;
  gt.x = 0.3 - 0.1;
  gt.y = 0.7 - 0.1;
  CHECK(ce_loss(a, gt, kUnit) == doctest::Approx(ce_loss(b, gt, kUnit)).epsilon(1e-9));
  CHECK(a.confidence == doctest::Approx(b.confidence).epsilon(1e-12));
}

TEST_CASE("tape cross entropy matches the plain one") {
  Rng rng(5);
  const int B = 8;
  Mat<double> flat = rng.gaussian<double>(1, 4 * B, 1.0);
  std::array<int, 4> bins = {1, 6, 3, 0};

  Tape<double> tape;
  int l = tape.input(flat);
  int loss = ce_loss_node(tape, l, bins, B);

  Mat<double> four(4, B);
  for (int i = 0; i < 4; ++i) four.row(i) = flat.middleCols(Eigen::Index(i) * B, B);
  BoxLogits<double> bl = make_box_logits(four);
  BBox gt;
  gt.w = (bins[2] + 0.5) / double(B);
  gt.h = (bins[3] + 0.5) / double(B);
  gt.x = (bins[0] + 0.5) / double(B) - gt.w / 2;
  gt.y = (bins[1] + 0.5) / double(B) - gt.h / 2;
  CHECK(tape.val(loss)(0, 0) ==
        doctest::Approx(ce_loss(bl, gt, kUnit)).epsilon(1e-10));
}

TEST_CASE("make_box_logits rejects malformed inputs") {
  Mat<double> three = Mat<double>::Zero(3, 16);
  Mat<double> narrow = Mat<double>::Zero(4, 1);
  CHECK_THROWS_AS(make_box_logits(three), shape_error);
  CHECK_THROWS_AS(make_box_logits(narrow), shape_error);
}
