#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "densecap/geometry.hpp"

using namespace densecap;

namespace {

TemporalSegment random_segment(std::mt19937_64& rng, double margin = 1e-3) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double a = u(rng), b = u(rng);
  if (a > b) std::swap(a, b);
  if (b - a < margin) b = std::min(1.0, a + margin);
  return {a, b};
}

}  // namespace

TEST_CASE("iou worked examples") {
  CHECK(iou<double>({0.2, 0.6}, {0.2, 0.6}) == doctest::Approx(1.0));
  CHECK(iou<double>({0.0, 0.5}, {0.5, 1.0}) == doctest::Approx(0.0));
  // inter = 0.2, union = 0.6
  CHECK(iou<double>({0.1, 0.5}, {0.3, 0.7}) == doctest::Approx(0.2 / 0.6));
}

TEST_CASE("giou worked examples") {
  CHECK(giou<double>({0.2, 0.6}, {0.2, 0.6}) == doctest::Approx(1.0));
  // hull = 1.0, union = 0.4, inter = 0
  CHECK(giou<double>({0.0, 0.2}, {0.8, 1.0}) == doctest::Approx(-0.6));
  // overlapping pair: hull == union so giou == iou
  CHECK(giou<double>({0.1, 0.5}, {0.3, 0.7}) == doctest::Approx(0.2 / 0.6));
}

TEST_CASE("invalid segments are rejected") {
  CHECK_THROWS_AS(iou<double>({0.5, 0.2}, {0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(giou<double>({0.0, 1.0}, {0.9, 0.1}), std::invalid_argument);
}

TEST_CASE("zero-length conventions") {
  CHECK(iou<double>({0.4, 0.4}, {0.4, 0.4}) == doctest::Approx(1.0));
  CHECK(iou<double>({0.4, 0.4}, {0.6, 0.6}) == doctest::Approx(0.0));
  CHECK(giou<double>({0.4, 0.4}, {0.4, 0.4}) == doctest::Approx(1.0));
  CHECK(iou<double>({0.4, 0.4}, {0.2, 0.8}) == doctest::Approx(0.0));
}

TEST_CASE("center/length conversion examples") {
  auto s = segment_from_center_length<double>({0.5, 1.0});
  CHECK(s.start == doctest::Approx(0.0));
  CHECK(s.end == doctest::Approx(1.0));
  s = segment_from_center_length<double>({0.3, 0.2});
  CHECK(s.start == doctest::Approx(0.2));
  CHECK(s.end == doctest::Approx(0.4));
  // left clamp
  s = segment_from_center_length<double>({0.05, 0.2});
  CHECK(s.start == doctest::Approx(0.0));
  CHECK(s.end == doctest::Approx(0.15));
}

TEST_CASE("center/length round trip") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const TemporalSegment s = random_segment(rng);
    const auto cl = center_length_from_segment(s);
    const auto back = segment_from_center_length(cl);
    CHECK(std::abs(back.start - s.start) < 1e-9);
    CHECK(std::abs(back.end - s.end) < 1e-9);
  }
}

TEST_CASE("iou/giou properties over random pairs") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const TemporalSegment a = random_segment(rng);
    const TemporalSegment b = random_segment(rng);
    const double ia = iou(a, b);
    const double ga = giou(a, b);
    CHECK(ia == doctest::Approx(iou(b, a)));
    CHECK(ga == doctest::Approx(giou(b, a)));
    CHECK(ia >= 0.0);
    CHECK(ia <= 1.0);
    CHECK(ga > -1.0);
    CHECK(ga <= 1.0 + 1e-12);
    CHECK(ga <= ia + 1e-12);
    // equality iff the hull equals the union (touching or overlapping)
    const double hull = std::max(a.end, b.end) - std::min(a.start, b.start);
    const double uni = a.length() + b.length() -
                       std::max(0.0, std::min(a.end, b.end) -
                                         std::max(a.start, b.start));
    if (std::abs(hull - uni) < 1e-12) {
      CHECK(ga == doctest::Approx(ia));
    } else {
      CHECK(ga < ia);
    }
    CHECK(giou(a, a) == doctest::Approx(1.0));
  }
}

TEST_CASE("giou analytic gradient matches central differences") {
  std::mt19937_64 rng(13);
  const double h = 1e-5;
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    // Keep endpoints separated so the +-h probes stay ordered and away from
    // the subgradient ties.
    const TemporalSegment a = random_segment(rng, 1e-2);
    const TemporalSegment b = random_segment(rng, 1e-2);
    if (std::abs(a.start - b.start) < 4 * h || std::abs(a.end - b.end) < 4 * h ||
        std::abs(a.end - b.start) < 4 * h || std::abs(b.end - a.start) < 4 * h) {
      continue;
    }
    const GiouGrad g = giou_with_grad(a, b);
    const auto num = [&](auto bump) {
      TemporalSegment a1 = a, b1 = b;
      TemporalSegment a2 = a, b2 = b;
      bump(a1, b1, h);
      bump(a2, b2, -h);
      return (giou(a1, b1) - giou(a2, b2)) / (2 * h);
    };
    const double das = num([](TemporalSegment& x, TemporalSegment&, double d) { x.start += d; });
    const double dae = num([](TemporalSegment& x, TemporalSegment&, double d) { x.end += d; });
    const double dbs = num([](TemporalSegment&, TemporalSegment& y, double d) { y.start += d; });
    const double dbe = num([](TemporalSegment&, TemporalSegment& y, double d) { y.end += d; });
    const auto rel = [](double an, double nu) {
      return std::abs(an - nu) / std::max({1e-6, std::abs(an), std::abs(nu)});
    };
    CHECK(rel(g.d_a_start, das) < 1e-4);
    CHECK(rel(g.d_a_end, dae) < 1e-4);
    CHECK(rel(g.d_b_start, dbs) < 1e-4);
    CHECK(rel(g.d_b_end, dbe) < 1e-4);
    ++checked;
  }
  CHECK(checked > 80);
}
