#pragma once

#include <functional>
#include <vector>

#include "densecap/heads.hpp"

namespace densecap {

struct Matching {
  std::vector<std::pair<int, int>> pairs;  // (query index, ground-truth index)
  double total_cost{0};
};

// Minimum-cost one-to-one assignment covering min(N, G) pairs. O(n^3).
Matching hungarian(const Mat& cost);

struct MatchCostConfig {
  double alpha_giou{2.0};
  double alpha_cls{1.0};
  double focal_alpha{0.25};
  double focal_gamma{2.0};
};

// cost(j, g) = alpha_giou * (-giou) + alpha_cls * positive-class focal cost.
Mat match_cost(const std::vector<EventDetection>& preds,
               const std::vector<TemporalSegment>& gts,
               const MatchCostConfig& cfg);

// -alpha_t (1 - p_t)^gamma log(p_t); alpha weighs positives, (1 - alpha)
// negatives. prob is clamped away from {0, 1} by 1e-8.
double focal_loss(double prob, int target, double alpha, double gamma);

struct LossWeights {
  double beta_giou{2.0};
  double beta_cls{1.0};
  double beta_ec{1.0};
  double beta_cap{1.0};
  double focal_alpha{0.25};
  double focal_gamma{2.0};
};

// Teacher-forced log-probabilities (M x 1) of ground-truth caption g decoded
// from query j. Supplied by the caption head; only queried for needed pairs.
using CaptionScorer = std::function<Var(int query_index, int gt_index)>;

struct LayerPrediction {
  Var center, length, conf_logit;  // N x 1 each
  Var count_logits;                // 1 x (max_count + 1)
  CaptionScorer caption_scorer;    // optional when beta_cap == 0
};

struct GroundTruth {
  std::vector<TemporalSegment> segments;
  std::vector<std::vector<int>> captions;  // token ids ending with EOS
};

struct LossComponents {
  double giou{0}, cls{0}, ec{0}, cap{0};  // unweighted, summed over layers
};

struct SetLossResult {
  Var total;  // 1 x 1
  LossComponents components;
  std::vector<Matching> matchings;  // one per layer
};

// Full set-prediction loss summed over decoder layers. Matching is
// recomputed per layer from that layer's predictions unless
// `fixed_matchings` pins it (finite-difference tests, caption-cost path).
// With no ground-truth events the giou/caption terms are skipped, the
// classification targets are all negative, and the counter target is 0.
SetLossResult set_loss(const std::vector<LayerPrediction>& layers,
                       const GroundTruth& gt, const LossWeights& weights,
                       int max_count,
                       const std::vector<Matching>* fixed_matchings = nullptr,
                       const MatchCostConfig& cost_cfg = {});

// Caption-driven matching cost for the caption-only training variant:
// entry (j, g) = -(1 / M_g^gamma) * sum_t log c_jg_t + alpha_cls * focal cost.
Mat caption_match_cost(int num_queries,
                       const std::vector<std::vector<int>>& gt_captions,
                       const CaptionScorer& scorer, const Var& conf_logit,
                       double gamma, double alpha_cls, double focal_alpha,
                       double focal_gamma);

}  // namespace densecap
