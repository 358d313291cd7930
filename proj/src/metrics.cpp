#include "densecap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace densecap {

ScoringMap scoring_from_predictions(const PredictionMap& preds) {
  ScoringMap out;
  for (const auto& [vid, events] : preds) {
    std::vector<ScoringEvent> ses;
    for (const auto& e : events) {
      ses.push_back({{e.t_start, e.t_end}, tokenize_words(e.sentence)});
    }
    out.emplace(vid, std::move(ses));
  }
  return out;
}

ScoringMap scoring_from_annotations(const AnnotationMap& anns) {
  ScoringMap out;
  for (const auto& [vid, rec] : anns) {
    std::vector<ScoringEvent> ses;
    for (const auto& e : rec.events) {
      ses.push_back({{e.t_start, e.t_end}, tokenize_words(e.sentence)});
    }
    out.emplace(vid, std::move(ses));
  }
  return out;
}

LocalizationScores localization_scores(const ScoringMap& preds,
                                       const ScoringMap& gts,
                                       const std::vector<double>& thresholds) {
  LocalizationScores s;
  s.thresholds = thresholds;
  long total_gt = 0;
  long total_pred = 0;
  for (const auto& [vid, evs] : gts) total_gt += static_cast<long>(evs.size());
  for (const auto& [vid, evs] : preds) total_pred += static_cast<long>(evs.size());

  for (double t : thresholds) {
    long recalled = 0;
    long precise = 0;
    for (const auto& [vid, gt_evs] : gts) {
      auto pit = preds.find(vid);
      if (pit == preds.end()) continue;
      for (const auto& g : gt_evs) {
        for (const auto& p : pit->second) {
          if (iou(p.segment, g.segment) >= t) {
            ++recalled;
            break;
          }
        }
      }
    }
    for (const auto& [vid, p_evs] : preds) {
      auto git = gts.find(vid);
      if (git == gts.end()) continue;
      for (const auto& p : p_evs) {
        for (const auto& g : git->second) {
          if (iou(p.segment, g.segment) >= t) {
            ++precise;
            break;
          }
        }
      }
    }
    s.recall.push_back(total_gt > 0 ? static_cast<double>(recalled) / total_gt : 0.0);
    s.precision.push_back(
        total_pred > 0 ? static_cast<double>(precise) / total_pred : 0.0);
  }
  const auto mean = [](const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
  };
  s.avg_recall = mean(s.recall);
  s.avg_precision = mean(s.precision);
  s.f1 = (s.avg_recall + s.avg_precision > 0)
             ? 2.0 * s.avg_recall * s.avg_precision /
                   (s.avg_recall + s.avg_precision)
             : 0.0;
  return s;
}

namespace {

// N-grams joined with an unprintable separator for use as map keys.
std::unordered_map<std::string, int> ngram_counts(
    const std::vector<std::string>& words, int n) {
  std::unordered_map<std::string, int> counts;
  const int total = static_cast<int>(words.size()) - n + 1;
  for (int i = 0; i < total; ++i) {
    std::string key = words[i];
    for (int j = 1; j < n; ++j) {
      key.push_back('\x1f');
      key += words[i + j];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

double bleu4(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference) {
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    long clipped = 0;
    long total = std::max<long>(0, static_cast<long>(candidate.size()) - n + 1);
    for (const auto& [k, c] : cand) {
      auto it = ref.find(k);
      if (it != ref.end()) clipped += std::min(c, it->second);
    }
    double p;
    if (n == 1) {
      if (total == 0 || clipped == 0) return 0.0;
      p = static_cast<double>(clipped) / static_cast<double>(total);
    } else {
      p = (static_cast<double>(clipped) + 1.0) / (static_cast<double>(total) + 1.0);
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

CiderScorer::CiderScorer(const std::vector<std::vector<std::string>>& corpus) {
  const double docs = std::max<size_t>(1, corpus.size());
  log_docs_ = std::log(docs);
  for (const auto& doc : corpus) {
    for (int n = 1; n <= 4; ++n) {
      for (const auto& [k, c] : ngram_counts(doc, n)) {
        df_[n - 1][k] += 1.0;
      }
    }
  }
}

double CiderScorer::score(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference) const {
  if (candidate.empty()) return 0.0;
  double total = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    const auto& df = df_[n - 1];
    const auto idf = [&](const std::string& k) {
      auto it = df.find(k);
      const double d = it == df.end() ? 0.0 : it->second;
      return log_docs_ - std::log(std::max(1.0, d));
    };
    double dot = 0.0, nc = 0.0, nr = 0.0;
    for (const auto& [k, c] : cand) {
      const double w = c * idf(k);
      nc += w * w;
      auto it = ref.find(k);
      if (it != ref.end()) dot += w * (it->second * idf(k));
    }
    for (const auto& [k, c] : ref) {
      const double w = c * idf(k);
      nr += w * w;
    }
    if (nc > 0 && nr > 0) {
      total += 10.0 * dot / (std::sqrt(nc) * std::sqrt(nr));
    }
  }
  return total / 4.0;
}

namespace {

std::vector<std::vector<std::string>> corpus_captions(const ScoringMap& gts) {
  std::vector<std::vector<std::string>> out;
  for (const auto& [vid, evs] : gts) {
    for (const auto& e : evs) out.push_back(e.words);
  }
  return out;
}

double pair_metric(CaptionMetric metric, const CiderScorer* cider,
                   const std::vector<std::string>& cand,
                   const std::vector<std::string>& ref) {
  return metric == CaptionMetric::kBleu4 ? bleu4(cand, ref)
                                         : cider->score(cand, ref);
}

}  // namespace

double dense_caption_scores(const ScoringMap& preds, const ScoringMap& gts,
                            CaptionMetric metric,
                            const std::vector<double>& thresholds) {
  CiderScorer cider(corpus_captions(gts));
  long total_preds = 0;
  for (const auto& [vid, evs] : preds) total_preds += static_cast<long>(evs.size());
  if (total_preds == 0) return 0.0;

  double across = 0.0;
  for (double t : thresholds) {
    double pair_sum = 0.0;
    for (const auto& [vid, p_evs] : preds) {
      auto git = gts.find(vid);
      if (git == gts.end()) continue;
      for (const auto& p : p_evs) {
        for (const auto& g : git->second) {
          if (iou(p.segment, g.segment) >= t) {
            pair_sum += pair_metric(metric, &cider, p.words, g.words);
          }
        }
      }
    }
    across += pair_sum / static_cast<double>(total_preds);
  }
  return across / static_cast<double>(thresholds.size());
}

namespace {

// Pair scores inside the alignment normalize CIDEr by its self-score of 10
// so the story score stays within [0, 1] for either caption metric.
double soda_pair_metric(CaptionMetric metric, const CiderScorer* cider,
                        const std::vector<std::string>& cand,
                        const std::vector<std::string>& ref) {
  const double m = pair_metric(metric, cider, cand, ref);
  return metric == CaptionMetric::kCider ? m / 10.0 : m;
}

double soda_video(const std::vector<ScoringEvent>& preds,
                  const std::vector<ScoringEvent>& gts, CaptionMetric metric,
                  const CiderScorer* cider) {
  if (preds.empty() || gts.empty()) return 0.0;
  auto sorted_by_start = [](std::vector<ScoringEvent> v) {
    std::sort(v.begin(), v.end(), [](const ScoringEvent& a, const ScoringEvent& b) {
      return a.segment.start < b.segment.start;
    });
    return v;
  };
  const auto P = sorted_by_start(preds);
  const auto G = sorted_by_start(gts);
  const size_t n = P.size(), m = G.size();

  // Max-total-score monotone one-to-one alignment.
  std::vector<std::vector<double>> dp(n + 1, std::vector<double>(m + 1, 0.0));
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      const double overlap = iou(P[i - 1].segment, G[j - 1].segment);
      double pair = 0.0;
      if (overlap > 0.0) {
        pair = overlap *
               soda_pair_metric(metric, cider, P[i - 1].words, G[j - 1].words);
      }
      dp[i][j] = std::max({dp[i - 1][j], dp[i][j - 1], dp[i - 1][j - 1] + pair});
    }
  }
  const double total = dp[n][m];
  const double prec = total / static_cast<double>(n);
  const double rec = total / static_cast<double>(m);
  return (prec + rec > 0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
}

}  // namespace

double soda_c(const ScoringMap& preds, const std::vector<ScoringMap>& gt_sets,
              CaptionMetric metric) {
  if (gt_sets.empty()) return 0.0;
  double set_acc = 0.0;
  for (const auto& gts : gt_sets) {
    CiderScorer cider(corpus_captions(gts));
    double video_acc = 0.0;
    long n_videos = 0;
    for (const auto& [vid, g_evs] : gts) {
      ++n_videos;
      auto pit = preds.find(vid);
      if (pit == preds.end()) continue;
      video_acc += soda_video(pit->second, g_evs, metric, &cider);
    }
    set_acc += n_videos > 0 ? video_acc / static_cast<double>(n_videos) : 0.0;
  }
  return set_acc / static_cast<double>(gt_sets.size());
}

namespace {

std::vector<std::string> paragraph_words(const std::vector<ScoringEvent>& evs) {
  auto sorted = evs;
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoringEvent& a, const ScoringEvent& b) {
              return a.segment.start < b.segment.start;
            });
  std::vector<std::string> words;
  for (const auto& e : sorted) {
    words.insert(words.end(), e.words.begin(), e.words.end());
  }
  return words;
}

}  // namespace

EvalReport evaluate_predictions(const PredictionMap& preds,
                                const AnnotationMap& anns) {
  EvalReport r;
  const ScoringMap p = scoring_from_predictions(preds);
  const ScoringMap g = scoring_from_annotations(anns);

  r.loc = localization_scores(p, g, r.thresholds);
  r.bleu4_score = dense_caption_scores(p, g, CaptionMetric::kBleu4, r.thresholds);
  r.cider_score = dense_caption_scores(p, g, CaptionMetric::kCider, r.thresholds);
  r.soda_c_score = soda_c(p, {g}, CaptionMetric::kCider);

  // Paragraph scores over time-ordered concatenations.
  std::vector<std::vector<std::string>> para_corpus;
  for (const auto& [vid, evs] : g) para_corpus.push_back(paragraph_words(evs));
  CiderScorer para_cider(para_corpus);
  double pb = 0.0, pc = 0.0;
  long n_vid = 0;
  for (const auto& [vid, g_evs] : g) {
    ++n_vid;
    auto pit = p.find(vid);
    if (pit == p.end()) continue;
    const auto cand = paragraph_words(pit->second);
    const auto ref = paragraph_words(g_evs);
    pb += bleu4(cand, ref);
    pc += para_cider.score(cand, ref);
  }
  r.paragraph_bleu4 = n_vid > 0 ? pb / n_vid : 0.0;
  r.paragraph_cider = n_vid > 0 ? pc / n_vid : 0.0;

  r.n_videos = static_cast<long>(g.size());
  for (const auto& [vid, evs] : p) r.n_predictions += static_cast<long>(evs.size());
  for (const auto& [vid, evs] : g) r.n_ground_truth += static_cast<long>(evs.size());
  return r;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  nlohmann::json rec, prec;
  for (size_t i = 0; i < r.thresholds.size(); ++i) {
    const std::string key = std::to_string(r.thresholds[i]).substr(0, 3);
    rec[key] = r.loc.recall[i];
    prec[key] = r.loc.precision[i];
  }
  rec["avg"] = r.loc.avg_recall;
  prec["avg"] = r.loc.avg_precision;
  j["recall"] = rec;
  j["precision"] = prec;
  j["f1"] = r.loc.f1;
  j["bleu4"] = r.bleu4_score;
  j["cider"] = r.cider_score;
  j["meteor"] = r.meteor;
  j["soda_c"] = r.soda_c_score;
  j["paragraph_bleu4"] = r.paragraph_bleu4;
  j["paragraph_cider"] = r.paragraph_cider;
  j["counts"] = {{"videos", r.n_videos},
                 {"predictions", r.n_predictions},
                 {"ground_truth", r.n_ground_truth}};
  return j;
}

std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "threshold   recall  precision\n";
  for (size_t i = 0; i < r.thresholds.size(); ++i) {
    os << "  " << r.thresholds[i] << "      " << r.loc.recall[i] << "   "
       << r.loc.precision[i] << "\n";
  }
  os << "  avg      " << r.loc.avg_recall << "   " << r.loc.avg_precision
     << "\n";
  os << "F1: " << r.loc.f1 << "\n";
  os << "BLEU4: " << r.bleu4_score << "  CIDEr: " << r.cider_score
     << "  METEOR: " << r.meteor << "\n";
  os << "SODA_c: " << r.soda_c_score << "\n";
  os << "paragraph BLEU4: " << r.paragraph_bleu4
     << "  paragraph CIDEr: " << r.paragraph_cider << "\n";
  os << "videos: " << r.n_videos << "  predictions: " << r.n_predictions
     << "  ground truth: " << r.n_ground_truth << "\n";
  return os.str();
}

}  // namespace densecap
