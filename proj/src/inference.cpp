#include "densecap/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace densecap {

double event_confidence(const EventDetection& det, const CaptionHypothesis& cap,
                        const RankingConfig& cfg) {
  if (cap.tokens.empty()) {
    throw std::invalid_argument("event_confidence: empty caption");
  }
  double log_sum = 0.0;
  for (double p : cap.token_probs) {
    log_sum += std::log(std::max(p, 1e-8));
  }
  const double m = static_cast<double>(cap.length());
  return det.loc_confidence + cfg.mu / std::pow(m, cfg.gamma) * log_sum;
}

DenseCaptionSet select_events(const std::vector<EventDetection>& dets,
                              const std::vector<CaptionHypothesis>& caps,
                              const CountPrediction& count,
                              const RankingConfig& cfg,
                              const std::string& video_id) {
  if (dets.size() != caps.size()) {
    throw std::invalid_argument("select_events: detections/captions mismatch");
  }
  const int n = static_cast<int>(dets.size());
  std::vector<double> conf(n);
  for (int i = 0; i < n; ++i) conf[i] = event_confidence(dets[i], caps[i], cfg);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (conf[a] != conf[b]) return conf[a] > conf[b];
    return a < b;
  });

  DenseCaptionSet out;
  out.video_id = video_id;
  int n_set = count.predicted_count;
  if (n_set > n) {
    n_set = n;
    out.count_clamped = true;
  }
  for (int i = 0; i < n_set; ++i) {
    const int q = order[i];
    RankedEvent e;
    e.segment = dets[q].segment;
    e.tokens = caps[q].tokens;
    e.confidence = conf[q];
    e.query_index = q;
    out.events.push_back(std::move(e));
  }
  std::sort(out.events.begin(), out.events.end(),
            [](const RankedEvent& a, const RankedEvent& b) {
              if (a.segment.start != b.segment.start) {
                return a.segment.start < b.segment.start;
              }
              return a.query_index < b.query_index;
            });
  return out;
}

void write_predictions(const std::string& path, const PredictionMap& preds) {
  nlohmann::json root;
  for (const auto& [vid, events] : preds) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : events) {
      arr.push_back({{"sentence", e.sentence},
                     {"timestamp", {e.t_start, e.t_end}},
                     {"confidence", e.confidence}});
    }
    root[vid] = arr;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write predictions to " + path);
  f << root.dump(2) << "\n";
}

PredictionMap load_predictions(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open predictions " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed prediction JSON in " + path + ": " +
                             e.what());
  }
  PredictionMap out;
  for (auto it = root.begin(); it != root.end(); ++it) {
    std::vector<PredictedEvent> events;
    for (const auto& e : it.value()) {
      PredictedEvent pe;
      pe.sentence = e.at("sentence").get<std::string>();
      pe.t_start = e.at("timestamp").at(0).get<double>();
      pe.t_end = e.at("timestamp").at(1).get<double>();
      pe.confidence = e.value("confidence", 0.0);
      events.push_back(std::move(pe));
    }
    out.emplace(it.key(), std::move(events));
  }
  return out;
}

}  // namespace densecap
