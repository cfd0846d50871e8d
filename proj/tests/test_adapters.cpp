#include "hyat/adapters.hpp"

#include <doctest.h>

using namespace hyat;

TEST_CASE("lowrank_forward hand oracle") {
  // 1 token, D=2, r=1: x=(1,-1), w_down=(2,1)^T, w_up=(0.5,-0.5)
  Mat<double> x(1, 2);
  x << 1, -1;
  LowRankAdapter<double> a;
  a.w_down.resize(2, 1);
  a.w_down << 2, 1;
  a.w_up.resize(1, 2);
  a.w_up << 0.5, -0.5;
  Mat<double> y = lowrank_forward(x, a);
  CHECK(y(0, 0) == doctest::Approx(0.5));
  CHECK(y(0, 1) == doctest::Approx(-0.5));
}

TEST_CASE("lowrank_forward zero up-projection is the identity lever") {
  Rng rng(3);
  Mat<double> x = rng.gaussian<double>(7, 8, 1.0);
  LowRankAdapter<double> a = init_adapter<double>(8, 2, 8, rng);
  CHECK(lowrank_forward(x, a).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lowrank_forward shapes follow the adapter") {
  Rng rng(4);
  LowRankAdapter<double> a;
  a.w_down = rng.gaussian<double>(48, 16, 0.02);
  a.w_up = rng.gaussian<double>(16, 48, 0.02);
  Mat<double> x = rng.gaussian<double>(5, 48, 1.0);
  Mat<double> y = lowrank_forward(x, a);
  CHECK(y.rows() == 5);
  CHECK(y.cols() == 48);

  Mat<double> bad = rng.gaussian<double>(5, 47, 1.0);
  CHECK_THROWS_AS(lowrank_forward(bad, a), shape_error);
}

TEST_CASE("lowrank_forward is linear in w_up") {
  Rng rng(5);
  Mat<double> x = rng.gaussian<double>(4, 6, 1.0);
  LowRankAdapter<double> a;
  a.w_down = rng.gaussian<double>(6, 3, 0.5);
  a.w_up = rng.gaussian<double>(3, 6, 0.5);
  LowRankAdapter<double> b = a;
  b.w_up *= 2.5;
  Mat<double> ya = lowrank_forward(x, a);
  Mat<double> yb = lowrank_forward(x, b);
  CHECK((yb - 2.5 * ya).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("has_step threads the chain and counts layers") {
  Rng rng(6);
  const int L = 12, D = 8, r = 2;
  Mat<double> f_hs = rng.gaussian<double>(6, D, 1.0);
  std::vector<LowRankAdapter<double>> aq, av;
  for (int i = 0; i < L; ++i) {
    LowRankAdapter<double> q = init_adapter<double>(D, r, D, rng);
    LowRankAdapter<double> v = init_adapter<double>(D, r, D, rng);
    q.w_up = rng.gaussian<double>(r, D, 0.1);
    v.w_up = rng.gaussian<double>(r, D, 0.1);
    aq.push_back(q);
    av.push_back(v);
  }

  HasChainState<double> st = has_chain_init(f_hs, L);
  CHECK(st.f_q == f_hs);
  CHECK(st.f_v == f_hs);

  std::vector<Mat<double>> q_in, q_out;
  for (int i = 0; i < L; ++i) {
    q_in.push_back(st.f_q);
    st = has_step(st, aq[std::size_t(i)], av[std::size_t(i)]);
    q_out.push_back(st.f_q);
  }
  CHECK(st.layer_index == L);
  // Layer i's chain input equals layer i-1's chain output, exactly.
  for (int i = 1; i < L; ++i) CHECK(q_in[std::size_t(i)] == q_out[std::size_t(i - 1)]);

  CHECK_THROWS_AS(has_step(st, aq[0], av[0]), state_error);
}

TEST_CASE("has_step zero-up chains are zero from layer 1 on") {
  Rng rng(7);
  const int L = 4, D = 6;
  Mat<double> f_hs = rng.gaussian<double>(3, D, 1.0);
  HasChainState<double> st = has_chain_init(f_hs, L);
  for (int i = 0; i < L; ++i) {
    auto q = init_adapter<double>(D, 2, D, rng);
    auto v = init_adapter<double>(D, 2, D, rng);
    st = has_step(st, q, v);
    CHECK(st.f_q.cwiseAbs().maxCoeff() == 0.0);
    CHECK(st.f_v.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("augment_qv splits the feature axis contiguously") {
  // heads=2, D=4, one token: f_q=(1,2,3,4) -> head0 += (1,2), head1 += (3,4)
  Mat<double> f_q(1, 4), f_v(1, 4);
  f_q << 1, 2, 3, 4;
  f_v << 0, 0, 0, 0;
  std::vector<Mat<double>> q = {Mat<double>::Zero(1, 2), Mat<double>::Zero(1, 2)};
  auto [q2, v2] = augment_qv(q, q, f_q, f_v, 2);
  CHECK(q2[0](0, 0) == 1);
  CHECK(q2[0](0, 1) == 2);
  CHECK(q2[1](0, 0) == 3);
  CHECK(q2[1](0, 1) == 4);
  CHECK(v2[0].cwiseAbs().maxCoeff() == 0.0);

  // Zero augmentation leaves q/v untouched.
  Mat<double> zero = Mat<double>::Zero(1, 4);
  auto [q3, v3] = augment_qv(q, q, zero, zero, 2);
  CHECK(q3[0] == q[0]);
  CHECK(v3[1] == q[1]);

  CHECK_THROWS_AS(split_heads(f_q, 3), config_error);
}

TEST_CASE("head split width arithmetic") {
  Rng rng(8);
  Mat<double> f = rng.gaussian<double>(2, 768, 1.0);
  auto parts = split_heads(f, 12);
  CHECK(parts.size() == 12);
  for (const auto& p : parts) CHECK(p.cols() == 64);
}

TEST_CASE("ham_apply hand oracle and zero-init identity") {
  auto identity_mlp = [](const Mat<double>& x) { return x; };

  // F_MSA=(1,0), mlp identity, pha maps (1,0)->(0.1,0), sha zero.
  Mat<double> f_msa(1, 2);
  f_msa << 1, 0;
  HamParams<double> p;
  p.pha.w_down.resize(2, 1);
  p.pha.w_down << 1, 0;
  p.pha.w_up.resize(1, 2);
  p.pha.w_up << 0.1, 0;
  p.sha.w_down = Mat<double>::Zero(2, 1);
  p.sha.w_up = Mat<double>::Zero(1, 2);
  Mat<double> out = ham_apply<double>(f_msa, identity_mlp, p);
  CHECK(out(0, 0) == doctest::Approx(2.1));
  CHECK(out(0, 1) == doctest::Approx(0.0));

  // Zero-up adapters reduce to F_MSA + F_MLP.
  Rng rng(9);
  HamParams<double> z;
  z.pha = init_adapter<double>(2, 1, 2, rng);
  z.sha = init_adapter<double>(2, 1, 2, rng);
  Mat<double> x = rng.gaussian<double>(5, 2, 1.0);
  Mat<double> base = ham_apply<double>(x, identity_mlp, z);
  CHECK((base - 2 * x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adapter parameter arithmetic at paper scale") {
  Rng rng(10);
  LowRankAdapter<double> a = init_adapter<double>(768, 16, 768, rng);
  CHECK(a.w_down.size() + a.w_up.size() == 2 * 768 * 16);
  // Two HAS instances per layer, 12 layers.
  CHECK(12 * 2 * (2 * 768 * 16) == 589824);
}

TEST_CASE("init_adapter rejects rank above the width") {
  Rng rng(11);
  CHECK_THROWS_AS(init_adapter<double>(4, 8, 4, rng), config_error);
}
