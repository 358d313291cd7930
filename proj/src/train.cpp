#include "densecap/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace densecap {

namespace {

uint64_t mix(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

LoadedCorpus load_corpus(const CorpusPaths& paths, const ModelConfig& mc,
                         int max_caption_len, double val_fraction) {
  LoadedCorpus corpus;
  corpus.vocab = Vocabulary::load(paths.vocab);
  if (mc.vocab_size != 0 && mc.vocab_size != corpus.vocab.size()) {
    throw std::runtime_error(
        "corpus/config mismatch: vocabulary has " +
        std::to_string(corpus.vocab.size()) + " tokens, config expects " +
        std::to_string(mc.vocab_size));
  }
  const AnnotationMap anns = load_annotations(paths.annotations);
  if (anns.empty()) throw std::runtime_error("corpus has no annotated videos");

  std::vector<VideoExample> all;
  for (const auto& [vid, rec] : anns) {
    FrameFeatureSequence seq = read_feature_file(paths.features_dir, vid);
    if (seq.features.cols() != mc.c_in) {
      throw std::runtime_error("corpus/config mismatch: features for " + vid +
                               " have C_in=" +
                               std::to_string(seq.features.cols()) +
                               ", config expects " + std::to_string(mc.c_in));
    }
    VideoExample ex;
    ex.video_id = vid;
    ex.duration = rec.duration_seconds;
    ex.frames = rescale_temporal(seq.features, mc.temporal_len);
    for (const auto& e : rec.events) {
      TemporalSegment s{e.t_start / rec.duration_seconds,
                        e.t_end / rec.duration_seconds};
      s.start = std::clamp(s.start, 0.0, 1.0);
      s.end = std::clamp(s.end, s.start, 1.0);
      ex.gt.segments.push_back(s);
      std::vector<int> toks = tokenize(e.sentence, corpus.vocab);
      if (static_cast<int>(toks.size()) > max_caption_len) {
        toks.resize(max_caption_len - 1);
        toks.push_back(kEosId);
      }
      ex.gt.captions.push_back(std::move(toks));
    }
    all.push_back(std::move(ex));
  }

  const int n_val = static_cast<int>(
      std::lround(val_fraction * static_cast<double>(all.size())));
  const int n_train = static_cast<int>(all.size()) - n_val;
  for (int i = 0; i < static_cast<int>(all.size()); ++i) {
    if (i < n_train) {
      corpus.train.push_back(std::move(all[i]));
    } else {
      corpus.val_annotations.emplace(all[i].video_id,
                                     anns.at(all[i].video_id));
      corpus.val.push_back(std::move(all[i]));
    }
  }
  if (corpus.train.empty()) throw std::runtime_error("empty training split");
  return corpus;
}

PredictionMap predict_corpus(const Model& model,
                             const std::vector<VideoExample>& videos,
                             const RankingConfig& rc, const Vocabulary& vocab) {
  PredictionMap preds;
  for (const auto& ex : videos) {
    Model::InferOut out = model.infer(ex.frames, rc, ex.video_id);
    std::vector<PredictedEvent> events;
    for (const auto& e : out.set.events) {
      PredictedEvent pe;
      pe.t_start = e.segment.start * ex.duration;
      pe.t_end = e.segment.end * ex.duration;
      pe.sentence = detokenize(e.tokens, vocab);
      pe.confidence = e.confidence;
      events.push_back(std::move(pe));
    }
    preds.emplace(ex.video_id, std::move(events));
  }
  return preds;
}

TrainResult Trainer::run(const CorpusPaths& corpus_paths,
                         const std::string& out_dir,
                         const std::string& resume_path) {
  cfg_.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  LoadedCorpus corpus = load_corpus(corpus_paths, cfg_.model,
                                    cfg_.model.max_caption_len,
                                    cfg_.train.val_fraction);
  ModelConfig mc = cfg_.model;
  if (mc.vocab_size == 0) mc.vocab_size = corpus.vocab.size();
  cfg_.model = mc;

  Model model(mc, cfg_.train.seed);
  nn::Adam adam(cfg_.train.lr);

  int start_epoch = 0;
  double best_f1 = -1.0;
  if (!resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_path);
    model.params().load(ckpt.tensors);
    adam.load_state(ckpt.tensors);
    if (ckpt.tensors.count("trainer.next_epoch")) {
      start_epoch = static_cast<int>(ckpt.tensors.at("trainer.next_epoch")(0, 0));
    }
    if (ckpt.tensors.count("trainer.best_f1")) {
      best_f1 = ckpt.tensors.at("trainer.best_f1")(0, 0);
    }
  }

  Model::LossOptions lopt;
  lopt.weights.beta_giou = cfg_.train.beta_giou;
  lopt.weights.beta_cls = cfg_.train.beta_cls;
  lopt.weights.beta_ec = cfg_.train.beta_ec;
  lopt.weights.beta_cap = cfg_.train.beta_cap;
  lopt.weights.focal_alpha = cfg_.train.focal_alpha;
  lopt.weights.focal_gamma = cfg_.train.focal_gamma;
  lopt.match_cost.alpha_giou = cfg_.train.alpha_giou;
  lopt.match_cost.alpha_cls = cfg_.train.alpha_cls;
  lopt.match_cost.focal_alpha = cfg_.train.focal_alpha;
  lopt.match_cost.focal_gamma = cfg_.train.focal_gamma;
  lopt.paragraph_aux = cfg_.train.paragraph_aux && !mc.weak;

  RankingConfig rc{cfg_.inference.gamma,
                   cfg_.inference.resolve_mu(mc.caption_head)};

  const std::string best_path = (fs::path(out_dir) / "best.ckpt").string();
  const std::string last_path = (fs::path(out_dir) / "last.ckpt").string();
  std::ofstream log_file((fs::path(out_dir) / "train_log.jsonl").string(),
                         start_epoch == 0 ? std::ios::trunc : std::ios::app);

  TrainResult result;
  result.best_val_f1 = best_f1;
  result.best_checkpoint = best_path;
  result.last_checkpoint = last_path;

  auto full_config = [&]() {
    nlohmann::json cj = to_json(cfg_);
    cj["vocab"] = corpus.vocab.tokens;
    return cj;
  };

  const int n_train = static_cast<int>(corpus.train.size());
  for (int epoch = start_epoch; epoch < cfg_.train.epochs; ++epoch) {
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix(cfg_.train.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    model.params().zero_grad();
    int pending = 0;
    for (int idx : order) {
      const auto& ex = corpus.train[idx];
      Model::LossOut loss = model.training_loss(ex.frames, ex.gt, lopt);
      ad::backward(cfg_.train.batch_videos > 1
                       ? ad::scalar_mul(loss.total,
                                        1.0 / cfg_.train.batch_videos)
                       : loss.total);
      log.total += loss.total.scalar();
      log.giou += loss.components.giou;
      log.cls += loss.components.cls;
      log.ec += loss.components.ec;
      log.cap += loss.components.cap;
      log.para += loss.paragraph_cap;
      if (++pending == cfg_.train.batch_videos) {
        adam.step(model.params(), cfg_.train.grad_clip);
        model.params().zero_grad();
        pending = 0;
      }
    }
    if (pending > 0) {
      adam.step(model.params(), cfg_.train.grad_clip);
      model.params().zero_grad();
    }
    log.total /= n_train;
    log.giou /= n_train;
    log.cls /= n_train;
    log.ec /= n_train;
    log.cap /= n_train;
    log.para /= n_train;

    const bool eval_now =
        !corpus.val.empty() && ((epoch + 1) % cfg_.train.eval_interval == 0 ||
                                epoch + 1 == cfg_.train.epochs);
    if (eval_now) {
      PredictionMap preds = predict_corpus(model, corpus.val, rc, corpus.vocab);
      LocalizationScores ls =
          localization_scores(scoring_from_predictions(preds),
                              scoring_from_annotations(corpus.val_annotations));
      log.val_f1 = ls.f1;
      if (ls.f1 > best_f1) {
        best_f1 = ls.f1;
        Checkpoint best = model.to_checkpoint();
        best.config = full_config();
        save_checkpoint(best_path, best);
      }
    }

    Checkpoint last = model.to_checkpoint();
    last.config = full_config();
    for (const auto& [k, v] : adam.state()) last.tensors[k] = v;
    Mat e(1, 1), f(1, 1);
    e(0, 0) = epoch + 1;
    f(0, 0) = best_f1;
    last.tensors["trainer.next_epoch"] = e;
    last.tensors["trainer.best_f1"] = f;
    save_checkpoint(last_path, last);

    nlohmann::json jl = {{"epoch", log.epoch},   {"loss", log.total},
                         {"giou", log.giou},     {"cls", log.cls},
                         {"ec", log.ec},         {"cap", log.cap},
                         {"paragraph", log.para}};
    if (log.val_f1 >= 0) jl["val_f1"] = log.val_f1;
    log_file << jl.dump() << "\n";
    log_file.flush();

    result.logs.push_back(log);
    result.final_loss = log.total;
  }
  result.best_val_f1 = best_f1;

  // Without a validation split the best checkpoint is the last one.
  if (corpus.val.empty()) {
    Checkpoint best = model.to_checkpoint();
    best.config = full_config();
    save_checkpoint(best_path, best);
  }
  return result;
}

}  // namespace densecap
