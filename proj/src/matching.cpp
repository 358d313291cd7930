#include "densecap/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace densecap {

namespace {

// Potentials formulation of the Hungarian algorithm on a square matrix;
// returns row assigned to each column.
std::vector<int> hungarian_square(const Mat& a) {
  const int n = static_cast<int>(a.rows());
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_of_col(n);
  for (int j = 1; j <= n; ++j) row_of_col[j - 1] = p[j] - 1;
  return row_of_col;
}

}  // namespace

Matching hungarian(const Mat& cost) {
  if (!cost.allFinite()) {
    throw std::invalid_argument("hungarian: cost matrix has non-finite entries");
  }
  const int N = static_cast<int>(cost.rows());
  const int G = static_cast<int>(cost.cols());
  if (N == 0 || G == 0) return {};
  const int n = std::max(N, G);
  // Dummy rows/columns carry a constant cost, which cannot change which real
  // pairs form the optimum.
  Mat padded = Mat::Zero(n, n);
  padded.topLeftCorner(N, G) = cost;
  const std::vector<int> row_of_col = hungarian_square(padded);

  Matching m;
  for (int j = 0; j < G; ++j) {
    const int i = row_of_col[j];
    if (i < N) {
      m.pairs.emplace_back(i, j);
      m.total_cost += cost(i, j);
    }
  }
  std::sort(m.pairs.begin(), m.pairs.end());
  return m;
}

double focal_loss(double prob, int target, double alpha, double gamma) {
  const double eps = 1e-8;
  const double p = std::clamp(prob, eps, 1.0 - eps);
  const double pt = target == 1 ? p : 1.0 - p;
  const double a = target == 1 ? alpha : 1.0 - alpha;
  return -a * std::pow(1.0 - pt, gamma) * std::log(pt);
}

Mat match_cost(const std::vector<EventDetection>& preds,
               const std::vector<TemporalSegment>& gts,
               const MatchCostConfig& cfg) {
  const int N = static_cast<int>(preds.size());
  const int G = static_cast<int>(gts.size());
  Mat c(N, G);
  for (int j = 0; j < N; ++j) {
    const double cls =
        cfg.alpha_cls * focal_loss(preds[j].loc_confidence, 1, cfg.focal_alpha,
                                   cfg.focal_gamma);
    for (int g = 0; g < G; ++g) {
      c(j, g) = cfg.alpha_giou * (-giou(preds[j].segment, gts[g])) + cls;
    }
  }
  return c;
}

namespace {

std::vector<EventDetection> layer_detections(const LayerPrediction& lp) {
  LocalizationHead::Out out{lp.center, lp.length, lp.conf_logit};
  return to_detections(out);
}

}  // namespace

SetLossResult set_loss(const std::vector<LayerPrediction>& layers,
                       const GroundTruth& gt, const LossWeights& weights,
                       int max_count,
                       const std::vector<Matching>* fixed_matchings,
                       const MatchCostConfig& cost_cfg) {
  if (gt.segments.size() != gt.captions.size()) {
    throw std::invalid_argument("set_loss: segments/captions size mismatch");
  }
  if (fixed_matchings && fixed_matchings->size() != layers.size()) {
    throw std::invalid_argument("set_loss: fixed matching count mismatch");
  }
  const int G = static_cast<int>(gt.segments.size());

  SetLossResult res;
  res.total = ad::constant(Mat::Zero(1, 1));

  for (size_t li = 0; li < layers.size(); ++li) {
    const auto& lp = layers[li];
    const int N = static_cast<int>(lp.center.rows());

    Matching m;
    if (fixed_matchings) {
      m = (*fixed_matchings)[li];
    } else if (G > 0) {
      m = hungarian(match_cost(layer_detections(lp), gt.segments, cost_cfg));
    }
    const int matched = static_cast<int>(m.pairs.size());
    const double norm = std::max(1, matched);

    // gIOU over matched pairs.
    if (matched > 0 && weights.beta_giou != 0.0) {
      std::vector<int> qidx;
      std::vector<TemporalSegment> segs;
      for (const auto& [q, g] : m.pairs) {
        qidx.push_back(q);
        segs.push_back(gt.segments[g]);
      }
      Var gv = ad::giou_against(ad::gather_rows(lp.center, qidx),
                                ad::gather_rows(lp.length, qidx), segs);
      Var l_giou = ad::mean_all(ad::add_scalar(ad::neg(gv), 1.0));
      res.components.giou += l_giou.scalar();
      res.total = ad::add(res.total, ad::scalar_mul(l_giou, weights.beta_giou));
    }

    // Focal classification over every query, normalized by matched count.
    if (weights.beta_cls != 0.0) {
      std::vector<int> targets(N, 0);
      for (const auto& [q, g] : m.pairs) targets[q] = 1;
      Var fl = ad::focal_from_logits(lp.conf_logit, targets,
                                     weights.focal_alpha, weights.focal_gamma);
      Var l_cls = ad::scalar_mul(ad::sum_all(fl), 1.0 / norm);
      res.components.cls += l_cls.scalar();
      res.total = ad::add(res.total, ad::scalar_mul(l_cls, weights.beta_cls));
    }

    // Caption cross-entropy per matched pair, normalized by caption length.
    if (matched > 0 && weights.beta_cap != 0.0) {
      if (!lp.caption_scorer) {
        throw std::invalid_argument("set_loss: caption scorer missing");
      }
      Var acc = ad::constant(Mat::Zero(1, 1));
      for (const auto& [q, g] : m.pairs) {
        Var logp = lp.caption_scorer(q, g);
        acc = ad::add(acc, ad::neg(ad::mean_all(logp)));
      }
      Var l_cap = ad::scalar_mul(acc, 1.0 / matched);
      res.components.cap += l_cap.scalar();
      res.total = ad::add(res.total, ad::scalar_mul(l_cap, weights.beta_cap));
    }

    // Event-count cross-entropy against the clamped true count.
    if (weights.beta_ec != 0.0) {
      const int target = std::min(G, max_count);
      Var lp_count = ad::log_softmax_rows(lp.count_logits);
      Var l_ec = ad::neg(ad::rows_pick_cols(lp_count, {target}));
      res.components.ec += l_ec.scalar();
      res.total = ad::add(res.total, ad::scalar_mul(l_ec, weights.beta_ec));
    }

    res.matchings.push_back(std::move(m));
  }
  return res;
}

Mat caption_match_cost(int num_queries,
                       const std::vector<std::vector<int>>& gt_captions,
                       const CaptionScorer& scorer, const Var& conf_logit,
                       double gamma, double alpha_cls, double focal_alpha,
                       double focal_gamma) {
  const int G = static_cast<int>(gt_captions.size());
  Mat c(num_queries, G);
  for (int j = 0; j < num_queries; ++j) {
    const double logit = conf_logit.value()(j, 0);
    const double p = 1.0 / (1.0 + std::exp(-logit));
    const double cls = alpha_cls * focal_loss(p, 1, focal_alpha, focal_gamma);
    for (int g = 0; g < G; ++g) {
      const Var logp = scorer(j, g);
      const double m = static_cast<double>(gt_captions[g].size());
      // Negated length-modulated log-likelihood so better captions cost less.
      c(j, g) = -logp.value().sum() / std::pow(m, gamma) + cls;
    }
  }
  return c;
}

}  // namespace densecap
