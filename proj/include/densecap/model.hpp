#pragma once

#include <memory>
#include <string>
#include <vector>

#include "densecap/checkpoint.hpp"
#include "densecap/config.hpp"
#include "densecap/heads.hpp"
#include "densecap/inference.hpp"
#include "densecap/matching.hpp"
#include "densecap/transformer.hpp"

namespace densecap {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// The full detector-captioner: pyramid builder, deformable encoder/decoder,
// and the three shared prediction heads applied at every decoder layer.
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t init_seed);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const Captioner& captioner() const { return *captioner_; }

  struct DenseForward {
    std::vector<Var> memory;                   // encoded pyramid levels
    std::vector<DecoderLayerOut> dec;          // per decoder layer
    std::vector<LocalizationHead::Out> heads;  // per layer
    std::vector<Var> count_logits;             // per layer
  };
  // frames must already be rescaled to (temporal_len x c_in).
  DenseForward forward(const Mat& frames) const;

  struct LossOptions {
    LossWeights weights;
    MatchCostConfig match_cost;
    bool paragraph_aux{false};
    double caption_cost_gamma{2.0};     // weak-mode matching modulation
    double caption_cost_alpha_cls{0.5};
  };
  struct LossOut {
    Var total;
    LossComponents components;
    double paragraph_cap{0};
    std::vector<Matching> matchings;
  };
  LossOut training_loss(const Mat& frames, const GroundTruth& gt,
                        const LossOptions& opt) const;

  struct InferOut {
    DenseCaptionSet set;
    std::vector<EventDetection> detections;   // all N queries, final layer
    std::vector<CaptionHypothesis> captions;  // all N queries
    CountPrediction count;
  };
  InferOut infer(const Mat& frames, const RankingConfig& rc,
                 const std::string& video_id) const;

  // Paragraph mode: given proposals are embedded as the event queries and
  // their centers fixed as reference points; the localization head and
  // counter are bypassed. Captions come back in proposal-start order.
  // Proposal lists beyond the query capacity are processed in chunks.
  std::vector<CaptionHypothesis> paragraph_captions(
      const Mat& frames, const std::vector<TemporalSegment>& proposals) const;

  // Teacher-forced log-probabilities for (proposal_i -> caption_i) pairs.
  std::vector<Var> paragraph_teacher(
      const Mat& frames, const std::vector<TemporalSegment>& proposals,
      const std::vector<std::vector<int>>& captions) const;

  Checkpoint to_checkpoint() const;  // parameters + model config
  static Model from_checkpoint(const Checkpoint& ckpt);

 private:
  struct ParagraphRun {
    std::vector<Var> qtilde_rows;  // one 1 x D row per proposal
    std::vector<Var> ref_rows;     // proposal centers, 1 x 1 each
    std::vector<Var> memory;
  };
  ParagraphRun run_paragraph(const Mat& frames,
                             const std::vector<TemporalSegment>& proposals) const;
  void paragraph_decode(const std::vector<Var>& memory,
                        const std::vector<TemporalSegment>& proposals,
                        ParagraphRun& run) const;
  std::vector<Var> paragraph_teacher_from_memory(
      const std::vector<Var>& memory,
      const std::vector<TemporalSegment>& proposals,
      const std::vector<std::vector<int>>& captions) const;

  ModelConfig cfg_;
  nn::ParamStore params_;
  PyramidBuilder pyramid_;
  Encoder encoder_;
  Decoder decoder_;
  LocalizationHead loc_head_;
  EventCounter counter_;
  std::unique_ptr<Captioner> captioner_;
  Var query_embed_;       // N x D
  nn::Linear ref_proj_;   // D -> 1 (dense) or 2 (weak)
  nn::Linear prop_embed_; // (center, length) -> D
};

}  // namespace densecap
