#pragma once

#include <string>

#include <json.hpp>

#include "densecap/data.hpp"

namespace densecap {

struct ModelConfig {
  int c_in{32};
  int temporal_len{64};  // fixed rescale length T
  int width{64};         // model width D
  int ffn{256};
  int heads{8};
  int points{4};  // K sampling points per level per head
  int levels{4};  // pyramid levels L
  int enc_layers{2};
  int dec_layers{2};
  int num_queries{10};
  int max_count{10};
  int vocab_size{0};  // filled from the corpus vocabulary when 0
  int lstm_hidden{64};
  int word_dim{32};
  int max_caption_len{20};
  int gn_groups{8};
  std::string caption_head{"dsa"};  // "light" or "dsa"
  bool weak{false};                 // caption-only supervision variant

  void validate() const;
};

struct TrainConfig {
  double lr{5e-5};
  int epochs{30};
  uint64_t seed{42};
  double val_fraction{0.2};
  double grad_clip{1.0};
  int batch_videos{1};  // gradient accumulation window
  bool deterministic{true};
  bool paragraph_aux{true};  // train the proposal-embedding branch jointly
  int eval_interval{1};
  double alpha_giou{2.0};
  double alpha_cls{1.0};
  double beta_giou{2.0};
  double beta_cls{1.0};
  double beta_ec{1.0};
  double beta_cap{1.0};
  double focal_alpha{0.25};
  double focal_gamma{2.0};

  void validate() const;
};

struct InferenceConfig {
  double gamma{2.0};
  double mu{-1.0};  // < 0 resolves to 0.3 (light head) or 1.0 (dsa head)

  double resolve_mu(const std::string& caption_head) const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticConfig data;
  InferenceConfig inference;

  void validate() const;
};

// JSON round trip. Parsing rejects unknown keys with the offending path.
nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

// Applies a "section.key=value" override (CLI flags win over the file).
void apply_override(RunConfig& cfg, const std::string& spec);

}  // namespace densecap
