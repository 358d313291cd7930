#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace densecap {

// A temporal interval. In model space both endpoints are fractions of the
// video duration in [0,1]; the same arithmetic works on second-valued
// intervals since IOU is scale invariant.
template <typename Scalar>
struct TemporalSegmentT {
  Scalar start{0};
  Scalar end{0};

  Scalar length() const { return end - start; }
};

template <typename Scalar>
struct CenterLengthT {
  Scalar center{0};
  Scalar length{0};
};

using TemporalSegment = TemporalSegmentT<double>;
using CenterLength = CenterLengthT<double>;

template <typename Scalar>
bool is_valid_segment(const TemporalSegmentT<Scalar>& s) {
  return s.start >= Scalar(0) && s.start <= s.end && s.end <= Scalar(1);
}

namespace geometry_detail {
template <typename Scalar>
void require_ordered(const TemporalSegmentT<Scalar>& s, const char* op) {
  if (!(s.start <= s.end)) {
    throw std::invalid_argument(std::string(op) + ": segment start exceeds end");
  }
}
}  // namespace geometry_detail

// Intersection over union. Two identical zero-length segments count as a
// perfect match (1); any other zero-union pair scores 0.
template <typename Scalar>
Scalar iou(const TemporalSegmentT<Scalar>& a, const TemporalSegmentT<Scalar>& b) {
  geometry_detail::require_ordered(a, "iou");
  geometry_detail::require_ordered(b, "iou");
  const Scalar inter =
      std::max<Scalar>(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const Scalar uni = a.length() + b.length() - inter;
  if (uni <= Scalar(0)) {
    return (a.start == b.start && a.end == b.end) ? Scalar(1) : Scalar(0);
  }
  return inter / uni;
}

// Generalized IOU: iou minus the fraction of the enclosing hull not covered
// by the union. Coincides with iou whenever the segments touch or overlap,
// and stays informative (negative) for disjoint pairs.
template <typename Scalar>
Scalar giou(const TemporalSegmentT<Scalar>& a, const TemporalSegmentT<Scalar>& b) {
  geometry_detail::require_ordered(a, "giou");
  geometry_detail::require_ordered(b, "giou");
  const Scalar inter =
      std::max<Scalar>(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const Scalar uni = a.length() + b.length() - inter;
  const Scalar hull = std::max(a.end, b.end) - std::min(a.start, b.start);
  if (hull <= Scalar(0)) {
    // Both segments are the same point, or both degenerate and coincident.
    return (a.start == b.start && a.end == b.end) ? Scalar(1) : Scalar(0);
  }
  const Scalar i = uni > Scalar(0) ? inter / uni : Scalar(0);
  return i - (hull - uni) / hull;
}

// giou value together with its partial derivatives with respect to the four
// endpoints. Ties use the subgradient convention that picks the `a` branch,
// which only matters on a measure-zero set.
struct GiouGrad {
  double value{0};
  double d_a_start{0};
  double d_a_end{0};
  double d_b_start{0};
  double d_b_end{0};
};

inline GiouGrad giou_with_grad(const TemporalSegment& a, const TemporalSegment& b) {
  geometry_detail::require_ordered(a, "giou_with_grad");
  geometry_detail::require_ordered(b, "giou_with_grad");

  const double m_hi = std::min(a.end, b.end);    // upper edge of intersection
  const double m_lo = std::max(a.start, b.start);
  const double inter_raw = m_hi - m_lo;
  const double inter = std::max(0.0, inter_raw);
  const double uni = a.length() + b.length() - inter;
  const double hull = std::max(a.end, b.end) - std::min(a.start, b.start);

  GiouGrad g;
  if (hull <= 0.0) {
    g.value = (a.start == b.start && a.end == b.end) ? 1.0 : 0.0;
    return g;
  }

  // Branch indicators for the min/max selections.
  const double hi_is_a = (a.end <= b.end) ? 1.0 : 0.0;
  const double lo_is_a = (a.start >= b.start) ? 1.0 : 0.0;
  const double hull_hi_is_a = (a.end >= b.end) ? 1.0 : 0.0;
  const double hull_lo_is_a = (a.start <= b.start) ? 1.0 : 0.0;
  const double has_inter = (inter_raw > 0.0) ? 1.0 : 0.0;

  // dI/d{endpoints}
  const double dI_das = -has_inter * lo_is_a;
  const double dI_dae = has_inter * hi_is_a;
  const double dI_dbs = -has_inter * (1.0 - lo_is_a);
  const double dI_dbe = has_inter * (1.0 - hi_is_a);

  // U = len(a) + len(b) - I
  const double dU_das = -1.0 - dI_das;
  const double dU_dae = 1.0 - dI_dae;
  const double dU_dbs = -1.0 - dI_dbs;
  const double dU_dbe = 1.0 - dI_dbe;

  // H = max(ends) - min(starts)
  const double dH_das = -hull_lo_is_a;
  const double dH_dae = hull_hi_is_a;
  const double dH_dbs = -(1.0 - hull_lo_is_a);
  const double dH_dbe = (1.0 - hull_hi_is_a);

  const double iou_v = uni > 0.0 ? inter / uni : 0.0;
  g.value = iou_v - (hull - uni) / hull;

  auto partial = [&](double dI, double dU, double dH) {
    double d = 0.0;
    if (uni > 0.0) d += (dI * uni - inter * dU) / (uni * uni);
    // d/dx [(H - U)/H] = (dH - dU)/H - (H - U) dH / H^2
    d -= (dH - dU) / hull - (hull - uni) * dH / (hull * hull);
    return d;
  };
  g.d_a_start = partial(dI_das, dU_das, dH_das);
  g.d_a_end = partial(dI_dae, dU_dae, dH_dae);
  g.d_b_start = partial(dI_dbs, dU_dbs, dH_dbs);
  g.d_b_end = partial(dI_dbe, dU_dbe, dH_dbe);
  return g;
}

// Conversion from (center, length). Out-of-range endpoints are clamped into
// [0,1]; network outputs go through sigmoids but accumulated offsets can
// still overshoot.
template <typename Scalar>
TemporalSegmentT<Scalar> segment_from_center_length(const CenterLengthT<Scalar>& c) {
  const Scalar len = std::max<Scalar>(0, c.length);
  const Scalar lo = std::clamp<Scalar>(c.center - len / 2, 0, 1);
  const Scalar hi = std::clamp<Scalar>(c.center + len / 2, 0, 1);
  return {std::min(lo, hi), std::max(lo, hi)};
}

template <typename Scalar>
CenterLengthT<Scalar> center_length_from_segment(const TemporalSegmentT<Scalar>& s) {
  geometry_detail::require_ordered(s, "center_length_from_segment");
  return {(s.start + s.end) / 2, s.end - s.start};
}

}  // namespace densecap
