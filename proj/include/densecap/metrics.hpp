#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "densecap/data.hpp"
#include "densecap/inference.hpp"

namespace densecap {

// Scoring-side view of one localized caption.
struct ScoringEvent {
  TemporalSegment segment;  // seconds
  std::vector<std::string> words;
};
using ScoringMap = std::map<std::string, std::vector<ScoringEvent>>;

ScoringMap scoring_from_predictions(const PredictionMap& preds);
ScoringMap scoring_from_annotations(const AnnotationMap& anns);

inline const std::vector<double> kIouThresholds{0.3, 0.5, 0.7, 0.9};

struct LocalizationScores {
  std::vector<double> thresholds;
  std::vector<double> recall;     // per threshold
  std::vector<double> precision;  // per threshold
  double avg_recall{0};
  double avg_precision{0};
  double f1{0};  // harmonic mean of the threshold-averaged recall/precision
};

// A ground truth is recalled at threshold t when some prediction reaches
// IOU >= t with it; a prediction is precise when some ground truth does.
// Counts aggregate over the whole corpus. Zero predictions score 0 precision.
LocalizationScores localization_scores(const ScoringMap& preds,
                                       const ScoringMap& gts,
                                       const std::vector<double>& thresholds =
                                           kIouThresholds);

// Sentence BLEU4: geometric mean of clipped n-gram precisions (orders 2..4
// get +1 smoothing) times the brevity penalty. Empty candidates score 0.
double bleu4(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference);

// Plain CIDEr: 10 x cosine similarity of TF-IDF n-gram vectors, averaged
// over n = 1..4. IDF statistics come from the reference corpus.
class CiderScorer {
 public:
  explicit CiderScorer(const std::vector<std::vector<std::string>>& corpus);
  double score(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference) const;

 private:
  std::unordered_map<std::string, double> df_[4];
  double log_docs_{0};
};

enum class CaptionMetric { kBleu4, kCider };

// At each threshold every (prediction, ground-truth) pair with IOU >= t
// contributes its caption metric; the per-threshold score is the pair sum
// divided by the total prediction count, and the final score averages the
// thresholds. Monotone non-increasing in the threshold.
double dense_caption_scores(const ScoringMap& preds, const ScoringMap& gts,
                            CaptionMetric metric,
                            const std::vector<double>& thresholds =
                                kIouThresholds);

// Story-style score: per video, dynamic programming finds the best monotone
// one-to-one alignment of the time-ordered sequences where a pair scores
// IOU x caption metric; the per-video F-score combines precision and recall
// of the alignment total. Multiple annotation sets are scored independently
// and averaged.
double soda_c(const ScoringMap& preds, const std::vector<ScoringMap>& gt_sets,
              CaptionMetric metric);

struct EvalReport {
  std::vector<double> thresholds{kIouThresholds};
  LocalizationScores loc;
  double bleu4_score{0};
  double cider_score{0};
  double soda_c_score{0};
  double paragraph_bleu4{0};
  double paragraph_cider{0};
  long n_videos{0};
  long n_predictions{0};
  long n_ground_truth{0};
  std::string meteor{"unavailable"};
};

EvalReport evaluate_predictions(const PredictionMap& preds,
                                const AnnotationMap& anns);

nlohmann::json report_to_json(const EvalReport& r);
std::string report_table(const EvalReport& r);

}  // namespace densecap
