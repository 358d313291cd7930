#pragma once

#include <map>
#include <string>
#include <vector>

#include "densecap/heads.hpp"

namespace densecap {

struct RankingConfig {
  double gamma{2.0};  // caption-length modulation exponent
  double mu{1.0};     // caption-confidence weight
};

// c = c_loc + (mu / M^gamma) * sum_t log(c_cap_t). Token probabilities are
// clamped to >= 1e-8 before the log; the caption term is always <= 0.
double event_confidence(const EventDetection& det, const CaptionHypothesis& cap,
                        const RankingConfig& cfg);

struct RankedEvent {
  TemporalSegment segment;  // normalized
  std::vector<int> tokens;
  double confidence{0};
  int query_index{-1};
};

struct DenseCaptionSet {
  std::string video_id;
  std::vector<RankedEvent> events;  // sorted by start time
  bool count_clamped{false};        // requested more events than queries
};

// Ranks all queries by event_confidence (ties broken by lower query index),
// keeps the top N_set from the counter, and re-sorts those by start time.
// No non-maximum suppression anywhere.
DenseCaptionSet select_events(const std::vector<EventDetection>& dets,
                              const std::vector<CaptionHypothesis>& caps,
                              const CountPrediction& count,
                              const RankingConfig& cfg,
                              const std::string& video_id);

// Prediction file schema: {video_id: [{"sentence", "timestamp": [s, e],
// "confidence"}...]} with timestamps in seconds.
struct PredictedEvent {
  double t_start{0}, t_end{0};  // seconds
  std::string sentence;
  double confidence{0};
};
using PredictionMap = std::map<std::string, std::vector<PredictedEvent>>;

void write_predictions(const std::string& path, const PredictionMap& preds);
PredictionMap load_predictions(const std::string& path);

}  // namespace densecap
