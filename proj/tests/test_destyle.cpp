#include <doctest.h>

#include <cmath>
#include <vector>

#include "sketchkp/destyle.hpp"
#include "sketchkp/errors.hpp"
#include "sketchkp/rng.hpp"
#include "support/testutil.hpp"

using namespace sketchkp;
using doctest::Approx;

namespace {

Var random_vec(int n, Rng& rng, bool leaf = false) {
  Tensor t({n});
  for (std::int64_t j = 0; j < n; ++j) t[j] = rng.gaussian();
  return leaf ? make_leaf(t, true) : make_constant(t);
}

Var scalar_vec(int n, double v) {
  Tensor t({n});
  t.fill(v);
  return make_constant(t);
}

}  // namespace

TEST_CASE("de-stylization network shapes and modes") {
  SUBCASE("identity mode passes embeddings through and registers nothing") {
    nn::ParamRegistry reg;
    Rng rng(41);
    DestyleNet net(16, true, reg, rng);
    CHECK(reg.params.empty());
    CHECK(net.identity());

    Var phi = random_vec(16, rng);
    Var fmap = make_constant(Tensor({16, 3, 3}));
    Var out = net.destylize(phi, fmap);
    CHECK(out.get() == phi.get());  // the identical node, not a copy
  }

  SUBCASE("active mode emits a same-length embedding and validates shapes") {
    nn::ParamRegistry reg;
    Rng rng(42);
    DestyleNet net(8, false, reg, rng);
    CHECK(reg.params.size() == 8);  // four linear layers, W + b each

    Var phi = random_vec(8, rng);
    Var g = random_vec(8, rng);
    Var out = net.destylize_pooled(phi, g);
    REQUIRE(out->value.ndim() == 1);
    CHECK(out->value.dim(0) == 8);

    CHECK_THROWS_AS(net.destylize_pooled(random_vec(4, rng), g), ShapeError);
    CHECK_THROWS_AS(net.destylize_pooled(phi, random_vec(9, rng)), ShapeError);
    CHECK_THROWS_AS(net.destylize(phi, random_vec(8, rng)), ShapeError);
  }

  SUBCASE("zeroed weights collapse the output to zero") {
    nn::ParamRegistry reg;
    Rng rng(43);
    DestyleNet net(6, false, reg, rng);
    for (auto& p : reg.params) p->value.fill(0.0);
    Var out = net.destylize_pooled(random_vec(6, rng), random_vec(6, rng));
    for (std::int64_t j = 0; j < out->value.size(); ++j) CHECK(out->value[j] == 0.0);
  }

  SUBCASE("the context arm sees the global pool: changing g changes the output") {
    nn::ParamRegistry reg;
    Rng rng(44);
    DestyleNet net(6, false, reg, rng);
    Var phi = random_vec(6, rng);
    Var a = net.destylize_pooled(phi, scalar_vec(6, 0.0));
    Var b = net.destylize_pooled(phi, scalar_vec(6, 1.0));
    double diff = 0.0;
    for (std::int64_t j = 0; j < 6; ++j) diff += std::abs(a->value[j] - b->value[j]);
    CHECK(diff > 1e-8);
  }

  SUBCASE("destylize derives g as the channel mean of the feature map") {
    nn::ParamRegistry reg;
    Rng rng(45);
    const int c = 5, h = 3;
    DestyleNet net(c, false, reg, rng);
    Tensor fmap({c, h, h});
    for (std::int64_t j = 0; j < fmap.size(); ++j) fmap[j] = rng.gaussian();
    Tensor g({c});
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < h; ++x) s += fmap.at3(ch, y, x);
      g[ch] = s / (h * h);
    }
    Var phi = random_vec(c, rng);
    Var via_map = net.destylize(phi, make_constant(fmap));
    Var via_g = net.destylize_pooled(phi, make_constant(g));
    for (std::int64_t j = 0; j < c; ++j)
      CHECK(via_map->value[j] == Approx(via_g->value[j]).epsilon(1e-12));
  }
}

TEST_CASE("de-stylization gradients agree with finite differences") {
  nn::ParamRegistry reg;
  Rng rng(46);
  const int c = 4;
  DestyleNet net(c, false, reg, rng);

  Tensor phi_t({c});
  Tensor g_t({c});
  for (std::int64_t j = 0; j < c; ++j) {
    phi_t[j] = rng.gaussian();
    g_t[j] = rng.gaussian();
  }

  auto loss_value = [&](const Tensor& pt) {
    NoGradGuard ng;
    Var out = net.destylize_pooled(make_constant(pt), make_constant(g_t));
    double s = 0.0;
    for (std::int64_t j = 0; j < out->value.size(); ++j) s += out->value[j] * out->value[j];
    return s;
  };

  Var phi = make_leaf(phi_t, true);
  Var out = net.destylize_pooled(phi, make_constant(g_t));
  backward(sq_l2_diff(out, make_constant(Tensor({c}))));
  REQUIRE(!phi->grad.empty());

  const double h = 1e-5;
  for (std::int64_t j = 0; j < c; ++j) {
    Tensor plus = phi_t, minus = phi_t;
    plus[j] += h;
    minus[j] -= h;
    const double fd = (loss_value(plus) - loss_value(minus)) / (2.0 * h);
    CHECK(phi->grad[j] == Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("style-consistency loss") {
  const auto fx = testsupport::load_fixture("known_values.json").at("style_1d");

  SUBCASE("1-d pinned value") {
    std::vector<Var> d{scalar_vec(1, fx.at("delta"))};
    std::vector<Var> d1{scalar_vec(1, fx.at("delta_s1"))};
    std::vector<Var> d2{scalar_vec(1, fx.at("delta_s2"))};
    Var loss = style_loss(d, d1, d2, {true});
    CHECK(loss->scalar() ==
          Approx(fx.at("expected").get<double>()).epsilon(fx.at("tol").get<double>()));
  }

  SUBCASE("coincident variants cost nothing") {
    Rng rng(47);
    Var v = random_vec(6, rng);
    Var loss = style_loss({v, v}, {v, v}, {v, v}, {true, true});
    CHECK(loss->scalar() == Approx(0.0).scale(1.0));
  }

  SUBCASE("the loss is symmetric in the two style variants") {
    Rng rng(48);
    std::vector<Var> d{random_vec(5, rng), random_vec(5, rng)};
    std::vector<Var> d1{random_vec(5, rng), random_vec(5, rng)};
    std::vector<Var> d2{random_vec(5, rng), random_vec(5, rng)};
    Var a = style_loss(d, d1, d2, {true, true});
    Var b = style_loss(d, d2, d1, {true, true});
    CHECK(a->scalar() == Approx(b->scalar()).epsilon(1e-12));
  }

  SUBCASE("invisible keypoints contribute nothing") {
    Rng rng(49);
    Var far = scalar_vec(4, 100.0);
    std::vector<Var> d{random_vec(4, rng), far};
    std::vector<Var> d1{random_vec(4, rng), far};
    std::vector<Var> d2{random_vec(4, rng), far};
    Var all = style_loss(d, d1, d2, {true, false});
    Var only_first = style_loss({d[0]}, {d1[0]}, {d2[0]}, {true});
    CHECK(all->scalar() == Approx(only_first->scalar()).epsilon(1e-12));

    Var none = style_loss(d, d1, d2, {false, false});
    CHECK(none->scalar() == 0.0);
  }

  SUBCASE("every pairwise distance lower-bounds the loss") {
    Rng rng(50);
    std::vector<Var> d{random_vec(7, rng)};
    std::vector<Var> d1{random_vec(7, rng)};
    std::vector<Var> d2{random_vec(7, rng)};
    Var loss = style_loss(d, d1, d2, {true});
    CHECK(loss->scalar() >= l2_diff(d[0], d1[0])->scalar());
    CHECK(loss->scalar() >= l2_diff(d[0], d2[0])->scalar());
    CHECK(loss->scalar() >= l2_diff(d1[0], d2[0])->scalar());
  }

  SUBCASE("misaligned lists are rejected") {
    Rng rng(51);
    std::vector<Var> one{random_vec(3, rng)};
    std::vector<Var> two{random_vec(3, rng), random_vec(3, rng)};
    CHECK_THROWS_AS(style_loss(one, two, one, {true}), ShapeError);
    CHECK_THROWS_AS(style_loss(one, one, one, {true, false}), ShapeError);
  }
}
