#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "densecap/matching.hpp"
#include "test_util.hpp"

using namespace densecap;
using ad::Mat;
using ad::Var;
using testutil::random_mat;

namespace {

std::mt19937_64 rng(2024);

// Exhaustive minimum over all injective assignments of the smaller side.
double brute_force_cost(const Mat& cost) {
  const int N = static_cast<int>(cost.rows());
  const int G = static_cast<int>(cost.cols());
  const bool rows_small = N <= G;
  const int small = std::min(N, G);
  const int large = std::max(N, G);
  std::vector<int> pick(large);
  std::iota(pick.begin(), pick.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> chosen;
  std::function<void(int, double, uint64_t)> rec = [&](int i, double acc,
                                                       uint64_t used) {
    if (i == small) {
      best = std::min(best, acc);
      return;
    }
    for (int j = 0; j < large; ++j) {
      if (used & (1ULL << j)) continue;
      const double c = rows_small ? cost(i, j) : cost(j, i);
      rec(i + 1, acc + c, used | (1ULL << j));
    }
  };
  rec(0, 0.0, 0);
  return best;
}

std::vector<EventDetection> make_dets(const std::vector<TemporalSegment>& segs,
                                      const std::vector<double>& conf) {
  std::vector<EventDetection> dets;
  for (size_t i = 0; i < segs.size(); ++i) {
    dets.push_back({segs[i], conf[i], static_cast<int>(i)});
  }
  return dets;
}

}  // namespace

TEST_CASE("hungarian worked examples") {
  Mat diag = Mat::Ones(3, 3);
  diag.diagonal().setZero();
  const Matching m = hungarian(diag);
  REQUIRE(m.pairs.size() == 3);
  for (const auto& [q, g] : m.pairs) CHECK(q == g);
  CHECK(m.total_cost == doctest::Approx(0.0));

  Mat one(1, 1);
  one << 4.2;
  const Matching m1 = hungarian(one);
  REQUIRE(m1.pairs.size() == 1);
  CHECK(m1.pairs[0] == std::pair<int, int>(0, 0));
  CHECK(m1.total_cost == doctest::Approx(4.2));
}

TEST_CASE("hungarian rejects non-finite costs") {
  Mat bad = Mat::Zero(2, 2);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);
}

TEST_CASE("hungarian equals brute force on random rectangular instances") {
  std::uniform_int_distribution<int> dim(1, 6);
  std::uniform_real_distribution<double> val(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = dim(rng), g = dim(rng);
    Mat cost(n, g);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < g; ++j) cost(i, j) = val(rng);
    }
    const Matching m = hungarian(cost);
    CHECK(m.pairs.size() == static_cast<size_t>(std::min(n, g)));
    CHECK(m.total_cost == doctest::Approx(brute_force_cost(cost)).epsilon(1e-9));
    // one-to-one on both sides
    std::set<int> qs, gs;
    for (const auto& [q, gg] : m.pairs) {
      CHECK(qs.insert(q).second);
      CHECK(gs.insert(gg).second);
    }
  }
}

TEST_CASE("matching is invariant to exact positive scaling") {
  std::uniform_real_distribution<double> val(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Mat cost(5, 4);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 4; ++j) cost(i, j) = val(rng);
    }
    const Matching a = hungarian(cost);
    const Matching b = hungarian(Mat(2.0 * cost));  // doubling is exact in fp
    CHECK(a.pairs == b.pairs);
  }
}

TEST_CASE("match_cost structure") {
  const std::vector<TemporalSegment> gts{{0.1, 0.3}, {0.6, 0.9}};
  const auto dets = make_dets({{0.1, 0.3}, {0.4, 0.5}}, {0.99, 0.2});
  MatchCostConfig cfg;

  SUBCASE("perfect overlap with high confidence approaches -alpha_giou") {
    const Mat c = match_cost(dets, gts, cfg);
    CHECK(c(0, 0) < -cfg.alpha_giou + 0.01);
    CHECK(c(0, 0) == doctest::Approx(-cfg.alpha_giou * 1.0 +
                                     cfg.alpha_cls * focal_loss(0.99, 1, 0.25, 2.0)));
  }

  SUBCASE("alpha_giou = 0 makes columns identical") {
    MatchCostConfig c0 = cfg;
    c0.alpha_giou = 0.0;
    const Mat c = match_cost(dets, gts, c0);
    CHECK(c(0, 0) == doctest::Approx(c(0, 1)));
    CHECK(c(1, 0) == doctest::Approx(c(1, 1)));
  }

  SUBCASE("hand-computed 2x2 instance") {
    // det0 vs gt0: giou = 1; det0 vs gt1: inter 0, union 0.5, hull 0.8
    //   -> giou = 0 - 0.3/0.8 = -0.375
    // det1 vs gt0: inter 0, union 0.3, hull 0.4 -> -0.25
    // det1 vs gt1: inter 0, union 0.4, hull 0.5 -> -0.2
    const Mat c = match_cost(dets, gts, cfg);
    const double f0 = focal_loss(0.99, 1, 0.25, 2.0);
    const double f1 = focal_loss(0.2, 1, 0.25, 2.0);
    CHECK(c(0, 0) == doctest::Approx(-2.0 + f0));
    CHECK(c(0, 1) == doctest::Approx(2.0 * 0.375 + f0));
    CHECK(c(1, 0) == doctest::Approx(2.0 * 0.25 + f1));
    CHECK(c(1, 1) == doctest::Approx(2.0 * 0.2 + f1));
  }
}

TEST_CASE("focal loss closed forms") {
  CHECK(focal_loss(1.0 - 1e-9, 1, 0.25, 2.0) < 1e-12);
  // gamma 0, alpha 0.5 halves binary cross entropy
  const double p = 0.37;
  CHECK(focal_loss(p, 1, 0.5, 0.0) == doctest::Approx(-0.5 * std::log(p)));
  CHECK(focal_loss(p, 0, 0.5, 0.0) == doctest::Approx(-0.5 * std::log(1 - p)));
  // the worked value: 0.25 * 0.25 * ln 2
  CHECK(focal_loss(0.5, 1, 0.25, 2.0) ==
        doctest::Approx(0.04332169878499658).epsilon(1e-5));
}

namespace {

// A stub scorer with controllable per-token probabilities.
CaptionScorer constant_scorer(double prob, int len) {
  return [prob, len](int, int) {
    Mat m = Mat::Constant(len, 1, std::log(prob));
    return Var(m);
  };
}

GroundTruth simple_gt() {
  GroundTruth gt;
  gt.segments = {{0.1, 0.3}, {0.55, 0.8}};
  gt.captions = {{5, 6, kEosId}, {7, kEosId}};
  return gt;
}

struct LayerFixture {
  Var center, length, conf, count;
  LayerPrediction lp;

  LayerFixture(const std::vector<double>& cs, const std::vector<double>& ls,
               const std::vector<double>& logits,
               const std::vector<double>& count_logits, CaptionScorer scorer) {
    const int n = static_cast<int>(cs.size());
    Mat mc(n, 1), ml(n, 1), mf(n, 1);
    for (int i = 0; i < n; ++i) {
      mc(i, 0) = cs[i];
      ml(i, 0) = ls[i];
      mf(i, 0) = logits[i];
    }
    Mat cl(1, static_cast<Eigen::Index>(count_logits.size()));
    for (size_t i = 0; i < count_logits.size(); ++i) cl(0, i) = count_logits[i];
    center = Var(mc, true);
    length = Var(ml, true);
    conf = Var(mf, true);
    count = Var(cl, true);
    lp.center = center;
    lp.length = length;
    lp.conf_logit = conf;
    lp.count_logits = count;
    lp.caption_scorer = std::move(scorer);
  }
};

}  // namespace

TEST_CASE("set_loss vanishes for near-perfect predictions") {
  GroundTruth gt = simple_gt();
  // exact segments, confident logits, near-1 caption probs, peaked counter
  std::vector<double> count_logits(11, -30.0);
  count_logits[2] = 30.0;
  LayerFixture fx({0.2, 0.675, 0.5}, {0.2, 0.25, 0.1}, {20.0, 20.0, -20.0},
                  count_logits, constant_scorer(1.0 - 1e-9, 3));
  const auto res = set_loss({fx.lp}, gt, {}, 10);
  CHECK(res.total.scalar() < 1e-6);
  REQUIRE(res.matchings.size() == 1);
  CHECK(res.matchings[0].pairs.size() == 2);
}

TEST_CASE("set_loss is linear in the loss weights") {
  GroundTruth gt = simple_gt();
  LayerFixture fx({0.25, 0.6, 0.4}, {0.3, 0.2, 0.15}, {0.5, -0.3, 0.8},
                  std::vector<double>(11, 0.1), constant_scorer(0.6, 3));
  LossWeights w;
  const double base = set_loss({fx.lp}, gt, w, 10).total.scalar();
  LossWeights dbl = w;
  dbl.beta_giou *= 2;
  dbl.beta_cls *= 2;
  dbl.beta_ec *= 2;
  dbl.beta_cap *= 2;
  const double doubled = set_loss({fx.lp}, gt, dbl, 10).total.scalar();
  CHECK(doubled == doctest::Approx(2.0 * base).epsilon(1e-9));
}

TEST_CASE("set_loss with no ground truth trains only negatives and the counter") {
  GroundTruth gt;  // empty
  LayerFixture fx({0.25, 0.6}, {0.3, 0.2}, {0.5, -0.3},
                  std::vector<double>(11, 0.0), {});
  const auto res = set_loss({fx.lp}, gt, {}, 10);
  CHECK(res.components.giou == 0.0);
  CHECK(res.components.cap == 0.0);
  CHECK(res.components.cls > 0.0);
  // counter target is count 0
  const double expect_ec = -std::log(1.0 / 11.0);
  CHECK(res.components.ec == doctest::Approx(expect_ec));
  CHECK(res.matchings[0].pairs.empty());
}

TEST_CASE("set_loss classification term is invariant to query order") {
  GroundTruth gt = simple_gt();
  // identical predictions: any permutation yields the same loss
  LayerFixture a({0.4, 0.4, 0.4}, {0.2, 0.2, 0.2}, {0.3, 0.3, 0.3},
                 std::vector<double>(11, 0.0), constant_scorer(0.5, 2));
  const double la = set_loss({a.lp}, gt, {}, 10).total.scalar();
  LayerFixture b({0.4, 0.4, 0.4}, {0.2, 0.2, 0.2}, {0.3, 0.3, 0.3},
                 std::vector<double>(11, 0.0), constant_scorer(0.5, 2));
  const double lb = set_loss({b.lp}, gt, {}, 10).total.scalar();
  CHECK(la == doctest::Approx(lb).epsilon(1e-12));
}

TEST_CASE("set_loss gradients match finite differences with a frozen matching") {
  GroundTruth gt = simple_gt();
  LayerFixture fx({0.3, 0.62, 0.45}, {0.25, 0.22, 0.33}, {0.4, -0.6, 0.2},
                  {0.1, -0.2, 0.4, 0.0, 0.3, -0.1, 0.2, 0.1, -0.3, 0.2, 0.0},
                  {});
  // differentiable caption scorer driven by a parameter
  Var cap_param(random_mat(rng, 3, 1, 0.3), true);
  fx.lp.caption_scorer = [&](int q, int) {
    return ad::log_(ad::sigmoid(ad::scalar_mul(cap_param, 1.0 + q)));
  };
  std::vector<Matching> fixed(1);
  fixed[0].pairs = {{0, 0}, {1, 1}};

  auto res = testutil::grad_check(
      [&] {
        return set_loss({fx.lp}, gt, {}, 10, &fixed).total;
      },
      {fx.center, fx.length, fx.conf, fx.count, cap_param}, 1e-5);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("caption_match_cost prefers the best caption") {
  // query 0 explains caption 1 perfectly, query 1 explains caption 0
  const std::vector<std::vector<int>> caps{{4, 5, kEosId}, {6, kEosId}};
  CaptionScorer scorer = [&](int q, int g) {
    const int len = static_cast<int>(caps[g].size());
    const double p = (q + g == 1) ? 0.95 : 0.05;
    return Var(Mat::Constant(len, 1, std::log(p)));
  };
  Var conf(Mat::Zero(2, 1));
  const Mat cost = caption_match_cost(2, caps, scorer, conf, 2.0, 0.5, 0.25, 2.0);
  // a perfect caption has zero caption cost
  CaptionScorer perfect = [&](int, int g) {
    return Var(Mat::Zero(static_cast<Eigen::Index>(caps[g].size()), 1));
  };
  const Mat cost_perfect =
      caption_match_cost(2, caps, perfect, conf, 2.0, 0.0, 0.25, 2.0);
  CHECK(cost_perfect(0, 0) == doctest::Approx(0.0));
  CHECK(cost_perfect(1, 1) == doctest::Approx(0.0));

  const Matching m = hungarian(cost);
  REQUIRE(m.pairs.size() == 2);
  CHECK(m.pairs[0] == std::pair<int, int>(0, 1));
  CHECK(m.pairs[1] == std::pair<int, int>(1, 0));
}

TEST_CASE("caption_match_cost length modulation") {
  const std::vector<std::vector<int>> caps{{4, 5, 6, kEosId}};  // M = 4
  const double p = 0.4;
  CaptionScorer scorer = [&](int, int) {
    return Var(Mat::Constant(4, 1, std::log(p)));
  };
  Var conf(Mat::Zero(1, 1));
  const Mat g0 = caption_match_cost(1, caps, scorer, conf, 0.0, 0.0, 0.25, 2.0);
  const Mat g1 = caption_match_cost(1, caps, scorer, conf, 1.0, 0.0, 0.25, 2.0);
  CHECK(g0(0, 0) == doctest::Approx(-4.0 * std::log(p)));
  CHECK(g1(0, 0) == doctest::Approx(-std::log(p)));
}

TEST_CASE("caption_match_cost 3x2 equals brute force assignment") {
  const std::vector<std::vector<int>> caps{{4, kEosId}, {5, 6, kEosId}};
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 20; ++trial) {
    Mat probs(3, 2);
    for (int q = 0; q < 3; ++q) {
      for (int g = 0; g < 2; ++g) probs(q, g) = u(rng);
    }
    CaptionScorer scorer = [&](int q, int g) {
      const int len = static_cast<int>(caps[g].size());
      return Var(Mat::Constant(len, 1, std::log(probs(q, g))));
    };
    Var conf(random_mat(rng, 3, 1));
    const Mat cost = caption_match_cost(3, caps, scorer, conf, 2.0, 0.5, 0.25, 2.0);
    const Matching m = hungarian(cost);
    CHECK(m.total_cost == doctest::Approx(brute_force_cost(cost)).epsilon(1e-9));
  }
}
