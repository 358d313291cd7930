#pragma once

#include <string>
#include <vector>

#include "densecap/config.hpp"
#include "densecap/metrics.hpp"
#include "densecap/model.hpp"

namespace densecap {

struct VideoExample {
  std::string video_id;
  Mat frames;          // rescaled to temporal_len x c_in
  double duration{0};  // seconds
  GroundTruth gt;      // normalized segments, tokenized captions
};

struct LoadedCorpus {
  Vocabulary vocab;
  std::vector<VideoExample> train;
  std::vector<VideoExample> val;
  AnnotationMap val_annotations;
};

// Loads, rescales, and tokenizes the corpus; the deterministic split keeps
// the last val_fraction of the sorted video ids for validation. Fails before
// training when the corpus contradicts the model config (C_in, vocabulary).
LoadedCorpus load_corpus(const CorpusPaths& paths, const ModelConfig& mc,
                         int max_caption_len, double val_fraction);

// Greedy inference over a video list, denormalized into the prediction
// schema.
PredictionMap predict_corpus(const Model& model,
                             const std::vector<VideoExample>& videos,
                             const RankingConfig& rc, const Vocabulary& vocab);

struct EpochLog {
  int epoch{0};
  double total{0}, giou{0}, cls{0}, ec{0}, cap{0}, para{0};
  double val_f1{-1};  // -1 when the epoch skipped evaluation
};

struct TrainResult {
  double best_val_f1{-1};
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::vector<EpochLog> logs;
  double final_loss{0};  // mean total loss over the final epoch
};

class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg) : cfg_(cfg) {}

  // Trains on the corpus, writing best/last checkpoints and a JSONL log
  // into out_dir. `resume_path` continues a previous run at the stored
  // epoch boundary, reproducing the uninterrupted run in deterministic mode.
  TrainResult run(const CorpusPaths& corpus, const std::string& out_dir,
                  const std::string& resume_path = "");

  const RunConfig& config() const { return cfg_; }

 private:
  RunConfig cfg_;
};

}  // namespace densecap
