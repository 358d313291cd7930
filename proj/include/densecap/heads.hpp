#pragma once

#include <memory>
#include <string>
#include <vector>

#include "densecap/nn.hpp"
#include "densecap/tokens.hpp"
#include "densecap/transformer.hpp"

namespace densecap {

struct EventDetection {
  TemporalSegment segment;
  double loc_confidence{0};
  int query_index{-1};
};

struct CaptionHypothesis {
  std::vector<int> tokens;          // ends with the EOS id
  std::vector<double> token_probs;  // per-token probability, same length
  bool truncated{false};            // hit max length, EOS forced

  int length() const { return static_cast<int>(tokens.size()); }
};

struct CountPrediction {
  Eigen::VectorXd distribution;  // size max_count + 1, sums to 1
  int predicted_count{1};        // argmax clamped to >= 1
};

// Box regression (3-layer MLP emitting a center offset in inverse-sigmoid
// space plus a raw length) and a separate foreground classifier.
class LocalizationHead {
 public:
  struct Out {
    Var center, length, conf_logit;  // each N x 1
  };

  static LocalizationHead make(nn::ParamStore& ps, int width, nn::Init& init);

  // ref is N x 1. With a 2-column ref both center and length are refined in
  // inverse-sigmoid space, which backs the caption-only training variant.
  Out forward(const Var& qtilde, const Var& ref) const;

 private:
  nn::Mlp3 box_;
  nn::Linear cls_;
};

std::vector<EventDetection> to_detections(const LocalizationHead::Out& out);

// Max-pools the refined queries into one vector and classifies the event
// count in 0..max_count.
class EventCounter {
 public:
  static EventCounter make(nn::ParamStore& ps, int width, int max_count,
                           nn::Init& init);

  Var forward(const Var& qtilde) const;  // 1 x (max_count + 1) logits
  CountPrediction predict(const Var& logits) const;
  int max_count() const { return max_count_; }

 private:
  nn::Linear fc_;
  int max_count_{10};
};

struct CaptionConfig {
  int vocab_size{64};
  int word_dim{32};
  int hidden{64};
  int max_len{20};
};

// Recurrent caption decoder over one event query. `tokens` passed to
// teacher_force are the full target caption ending in EOS; the returned
// column holds the log-probability of each target token.
class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual Var teacher_force(const Var& query_row, const Var& ref_row,
                            const std::vector<Var>& memory,
                            const std::vector<int>& tokens) const = 0;
  virtual CaptionHypothesis greedy(const Var& query_row, const Var& ref_row,
                                   const std::vector<Var>& memory) const = 0;
  virtual std::string kind() const = 0;
  virtual const CaptionConfig& config() const = 0;
};

// Vanilla LSTM head: input is [query, previous word embedding].
class LightCaptioner : public Captioner {
 public:
  static std::unique_ptr<LightCaptioner> make(nn::ParamStore& ps,
                                              const CaptionConfig& cfg,
                                              int query_width, nn::Init& init);

  Var teacher_force(const Var& query_row, const Var& ref_row,
                    const std::vector<Var>& memory,
                    const std::vector<int>& tokens) const override;
  CaptionHypothesis greedy(const Var& query_row, const Var& ref_row,
                           const std::vector<Var>& memory) const override;
  std::string kind() const override { return "light"; }
  const CaptionConfig& config() const override { return cfg_; }

 private:
  CaptionConfig cfg_;
  Var embed_;  // vocab x word_dim
  nn::LstmCell lstm_;
  nn::Linear out_;
};

// Deformable-soft-attention LSTM head. Each step samples K points per level
// around the event's reference point, conditioned on [hidden, query], then
// attends over the K*L samples to build the context fed to the LSTM.
class DsaCaptioner : public Captioner {
 public:
  static std::unique_ptr<DsaCaptioner> make(nn::ParamStore& ps,
                                            const CaptionConfig& cfg,
                                            int query_width, int levels,
                                            int points, nn::Init& init);

  Var teacher_force(const Var& query_row, const Var& ref_row,
                    const std::vector<Var>& memory,
                    const std::vector<int>& tokens) const override;
  CaptionHypothesis greedy(const Var& query_row, const Var& ref_row,
                           const std::vector<Var>& memory) const override;
  std::string kind() const override { return "dsa"; }
  const CaptionConfig& config() const override { return cfg_; }

  // Soft-attention rows recorded by the most recent call, one per step.
  const std::vector<Eigen::RowVectorXd>& last_attention() const {
    return last_attention_;
  }

 private:
  Var context(const Var& h_prev, const Var& query_row, const Var& ref_row,
              const std::vector<Var>& memory) const;

  CaptionConfig cfg_;
  int levels_{4};
  int points_{4};
  int query_width_{64};
  Var embed_;
  nn::LstmCell lstm_;
  nn::Linear out_;
  nn::Linear offset_;           // [h, q] -> L*K sampling offsets
  nn::Linear att_key_, att_query_, att_value_;
  Var att_score_;               // hidden x 1
  mutable std::vector<Eigen::RowVectorXd> last_attention_;
};

std::unique_ptr<Captioner> make_captioner(const std::string& kind,
                                          nn::ParamStore& ps,
                                          const CaptionConfig& cfg,
                                          int query_width, int levels,
                                          int points, nn::Init& init);

}  // namespace densecap
