#include "densecap/model.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace densecap {

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  RunConfig rc;
  rc.model = cfg;
  return to_json(rc)["model"];
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  nlohmann::json wrapper;
  wrapper["model"] = j;
  return run_config_from_json(wrapper).model;
}

Model::Model(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.vocab_size < kReservedTokens + 1) {
    throw std::invalid_argument("Model: vocab_size must cover reserved tokens");
  }
  nn::Init init(init_seed);

  PyramidConfig pc;
  pc.c_in = cfg_.c_in;
  pc.width = cfg_.width;
  pc.levels = cfg_.levels;
  pc.gn_groups = cfg_.gn_groups;
  pyramid_ = PyramidBuilder::make(params_, pc, init);

  AttentionConfig ac;
  ac.heads = cfg_.heads;
  ac.points = cfg_.points;
  ac.levels = cfg_.levels;
  ac.width = cfg_.width;
  encoder_ = Encoder::make(params_, ac, cfg_.ffn, cfg_.enc_layers, init);
  decoder_ = Decoder::make(params_, ac, cfg_.ffn, cfg_.dec_layers, init);

  loc_head_ = LocalizationHead::make(params_, cfg_.width, init);
  counter_ = EventCounter::make(params_, cfg_.width, cfg_.max_count, init);

  CaptionConfig cc;
  cc.vocab_size = cfg_.vocab_size;
  cc.word_dim = cfg_.word_dim;
  cc.hidden = cfg_.lstm_hidden;
  cc.max_len = cfg_.max_caption_len;
  captioner_ = make_captioner(cfg_.caption_head, params_, cc, cfg_.width,
                              cfg_.levels, cfg_.points, init);

  query_embed_ = params_.create("query_embed",
                                init.normal(cfg_.num_queries, cfg_.width, 1.0));
  ref_proj_ = nn::Linear::make(params_, "ref_proj", cfg_.width,
                               cfg_.weak ? 2 : 1, init);
  prop_embed_ = nn::Linear::make(params_, "prop_embed", 2, cfg_.width, init);
}

Model::DenseForward Model::forward(const Mat& frames) const {
  if (frames.rows() != cfg_.temporal_len || frames.cols() != cfg_.c_in) {
    throw std::invalid_argument("Model: frames must be temporal_len x c_in");
  }
  DenseForward fwd;
  FeaturePyramid pyr = pyramid_.build(frames);
  fwd.memory = encoder_.encode(pyr);

  Var q0 = query_embed_;
  Var ref0 = ad::sigmoid(ref_proj_(q0));

  auto* heads = &fwd.heads;
  const bool weak = cfg_.weak;
  const auto& loc = loc_head_;
  Decoder::RefineFn refine = [heads, weak, &loc](int, const Var& qt,
                                                 const Var& ref_in) {
    auto out = loc.forward(qt, ref_in);
    heads->push_back(out);
    if (weak) return ad::concat_cols({out.center, out.length});
    return out.center;
  };

  DecoderOptions opt;
  opt.even_keys = weak;
  opt.refine = true;
  // Caption-only training has no localization loss; the gradient reaching
  // the refinement heads flows through the sampling keys of later layers,
  // so updates stay attached there.
  opt.detach_updates = !weak;
  fwd.dec = decoder_.run(fwd.memory, q0, ref0, refine, opt);

  for (const auto& layer : fwd.dec) {
    fwd.count_logits.push_back(counter_.forward(layer.qtilde));
  }
  return fwd;
}

Model::LossOut Model::training_loss(const Mat& frames, const GroundTruth& gt,
                                    const LossOptions& opt) const {
  DenseForward fwd = forward(frames);
  const int n_layers = static_cast<int>(fwd.dec.size());
  const int G = static_cast<int>(gt.segments.size());

  // Teacher-forced caption scorer shared between matching and the loss.
  auto cache = std::make_shared<std::map<std::tuple<int, int, int>, Var>>();
  auto scorer_for = [this, &fwd, &gt, cache](int layer) -> CaptionScorer {
    return [this, &fwd, &gt, cache, layer](int q, int g) -> Var {
      const auto key = std::make_tuple(layer, q, g);
      auto it = cache->find(key);
      if (it != cache->end()) return it->second;
      Var qrow = ad::slice_rows(fwd.dec[layer].qtilde, q, 1);
      Var ref_row = ad::slice_rows(fwd.heads[layer].center, q, 1);
      Var lp = captioner_->teacher_force(qrow, ref_row, fwd.memory,
                                         gt.captions[g]);
      cache->emplace(key, lp);
      return lp;
    };
  };

  std::vector<LayerPrediction> layers;
  for (int l = 0; l < n_layers; ++l) {
    LayerPrediction lp;
    lp.center = fwd.heads[l].center;
    lp.length = fwd.heads[l].length;
    lp.conf_logit = fwd.heads[l].conf_logit;
    lp.count_logits = fwd.count_logits[l];
    lp.caption_scorer = scorer_for(l);
    layers.push_back(std::move(lp));
  }

  LossOut out;
  if (cfg_.weak) {
    // Caption-driven matching; the loss keeps only the caption term.
    std::vector<Matching> matchings;
    for (int l = 0; l < n_layers; ++l) {
      if (G == 0) {
        matchings.emplace_back();
        continue;
      }
      Mat cost = caption_match_cost(
          cfg_.num_queries, gt.captions, layers[l].caption_scorer,
          layers[l].conf_logit, opt.caption_cost_gamma,
          opt.caption_cost_alpha_cls, opt.weights.focal_alpha,
          opt.weights.focal_gamma);
      matchings.push_back(hungarian(cost));
    }
    LossWeights weak_weights = opt.weights;
    weak_weights.beta_giou = 0;
    weak_weights.beta_cls = 0;
    weak_weights.beta_ec = 0;
    SetLossResult res = set_loss(layers, gt, weak_weights, cfg_.max_count,
                                 &matchings, opt.match_cost);
    out.total = res.total;
    out.components = res.components;
    out.matchings = std::move(res.matchings);
    return out;
  }

  SetLossResult res =
      set_loss(layers, gt, opt.weights, cfg_.max_count, nullptr, opt.match_cost);
  out.total = res.total;
  out.components = res.components;
  out.matchings = std::move(res.matchings);

  if (opt.paragraph_aux && G > 0) {
    std::vector<Var> logps = paragraph_teacher_from_memory(
        fwd.memory, gt.segments, gt.captions);
    Var acc = ad::constant(Mat::Zero(1, 1));
    for (const auto& lp : logps) acc = ad::add(acc, ad::neg(ad::mean_all(lp)));
    Var para = ad::scalar_mul(acc, 1.0 / G);
    out.paragraph_cap = para.scalar();
    out.total = ad::add(out.total, ad::scalar_mul(para, opt.weights.beta_cap));
  }
  return out;
}

Model::InferOut Model::infer(const Mat& frames, const RankingConfig& rc,
                             const std::string& video_id) const {
  DenseForward fwd = forward(frames);
  InferOut out;
  out.detections = to_detections(fwd.heads.back());
  out.count = counter_.predict(fwd.count_logits.back());
  const Var& qt = fwd.dec.back().qtilde;
  const Var& centers = fwd.heads.back().center;
  for (int q = 0; q < cfg_.num_queries; ++q) {
    out.captions.push_back(captioner_->greedy(ad::slice_rows(qt, q, 1),
                                              ad::slice_rows(centers, q, 1),
                                              fwd.memory));
  }
  out.set = select_events(out.detections, out.captions, out.count, rc, video_id);
  return out;
}

Model::ParagraphRun Model::run_paragraph(
    const Mat& frames, const std::vector<TemporalSegment>& proposals) const {
  if (proposals.empty()) {
    throw std::invalid_argument("paragraph mode: no proposals");
  }
  FeaturePyramid pyr = pyramid_.build(frames);
  ParagraphRun run;
  run.memory = encoder_.encode(pyr);
  paragraph_decode(run.memory, proposals, run);
  return run;
}

// Decodes proposals (chunked at query capacity) with fixed references and
// no localization refinement.
void Model::paragraph_decode(const std::vector<Var>& memory,
                             const std::vector<TemporalSegment>& proposals,
                             ParagraphRun& run) const {
  const int n = static_cast<int>(proposals.size());
  DecoderOptions opt;
  opt.refine = false;
  for (int begin = 0; begin < n; begin += cfg_.num_queries) {
    const int count = std::min(cfg_.num_queries, n - begin);
    Mat pos(count, 2);
    Mat centers(count, 1);
    for (int i = 0; i < count; ++i) {
      const auto cl = center_length_from_segment(proposals[begin + i]);
      pos(i, 0) = cl.center;
      pos(i, 1) = cl.length;
      centers(i, 0) = cl.center;
    }
    Var queries = prop_embed_(ad::constant(pos));
    Var ref = ad::constant(centers);
    auto dec = decoder_.run(memory, queries, ref, nullptr, opt);
    const Var& qt = dec.back().qtilde;
    for (int i = 0; i < count; ++i) {
      run.qtilde_rows.push_back(ad::slice_rows(qt, i, 1));
      run.ref_rows.push_back(ad::slice_rows(ref, i, 1));
    }
  }
}

std::vector<CaptionHypothesis> Model::paragraph_captions(
    const Mat& frames, const std::vector<TemporalSegment>& proposals) const {
  ParagraphRun run = run_paragraph(frames, proposals);
  const int n = static_cast<int>(proposals.size());

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return proposals[a].start < proposals[b].start;
  });

  std::vector<CaptionHypothesis> caps(n);
  for (int i = 0; i < n; ++i) {
    caps[i] = captioner_->greedy(run.qtilde_rows[i], run.ref_rows[i], run.memory);
  }
  std::vector<CaptionHypothesis> ordered;
  ordered.reserve(n);
  for (int idx : order) ordered.push_back(std::move(caps[idx]));
  return ordered;
}

std::vector<Var> Model::paragraph_teacher(
    const Mat& frames, const std::vector<TemporalSegment>& proposals,
    const std::vector<std::vector<int>>& captions) const {
  if (proposals.size() != captions.size()) {
    throw std::invalid_argument("paragraph_teacher: proposals/captions mismatch");
  }
  ParagraphRun run = run_paragraph(frames, proposals);
  std::vector<Var> out;
  for (size_t i = 0; i < proposals.size(); ++i) {
    out.push_back(captioner_->teacher_force(run.qtilde_rows[i], run.ref_rows[i],
                                            run.memory, captions[i]));
  }
  return out;
}

std::vector<Var> Model::paragraph_teacher_from_memory(
    const std::vector<Var>& memory,
    const std::vector<TemporalSegment>& proposals,
    const std::vector<std::vector<int>>& captions) const {
  ParagraphRun run;
  run.memory = memory;
  paragraph_decode(memory, proposals, run);
  std::vector<Var> out;
  for (size_t i = 0; i < proposals.size(); ++i) {
    out.push_back(captioner_->teacher_force(run.qtilde_rows[i], run.ref_rows[i],
                                            run.memory, captions[i]));
  }
  return out;
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config["model"] = model_config_to_json(cfg_);
  ckpt.tensors = params_.snapshot();
  return ckpt;
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg = model_config_from_json(ckpt.config.at("model"));
  Model m(cfg, /*init_seed=*/0);
  m.params_.load(ckpt.tensors);
  return m;
}

}  // namespace densecap
