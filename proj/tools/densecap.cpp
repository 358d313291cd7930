#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "densecap/config.hpp"
#include "densecap/metrics.hpp"
#include "densecap/model.hpp"
#include "densecap/train.hpp"

namespace fs = std::filesystem;
using namespace densecap;

namespace {

CorpusPaths corpus_paths_from_dir(const std::string& dir) {
  CorpusPaths p;
  p.dir = dir;
  p.features_dir = (fs::path(dir) / "features").string();
  p.annotations = (fs::path(dir) / "annotations.json").string();
  p.vocab = (fs::path(dir) / "vocab.txt").string();
  p.meta = (fs::path(dir) / "meta.json").string();
  return p;
}

std::string default_output_dir() {
  if (const char* cache = std::getenv("DENSECAP_CACHE_DIR")) {
    return (fs::path(cache) / "run").string();
  }
  return "densecap_out";
}

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_run_config(config_path);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

std::vector<std::string> list_video_ids(const std::string& features_dir) {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(features_dir)) {
    if (entry.path().extension() == ".json") {
      ids.push_back(entry.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) {
    throw std::runtime_error("no feature sidecars found in " + features_dir);
  }
  return ids;
}

int cmd_generate(const RunConfig& cfg, const std::string& out_dir) {
  CorpusPaths paths = generate_corpus(cfg.data, out_dir);
  const AnnotationMap anns = load_annotations(paths.annotations);
  long events = 0;
  for (const auto& [vid, rec] : anns) events += static_cast<long>(rec.events.size());
  std::cout << "generated " << anns.size() << " videos with " << events
            << " events in " << paths.dir << "\n";
  std::cout << "  features:    " << paths.features_dir << "\n";
  std::cout << "  annotations: " << paths.annotations << "\n";
  std::cout << "  vocabulary:  " << paths.vocab << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& corpus_dir,
              const std::string& out_dir, const std::string& resume,
              bool weak) {
  if (weak) {
    cfg.model.weak = true;
    // The caption-only variant pairs best with the lightweight head.
    cfg.model.caption_head = "light";
  }
  Trainer trainer(cfg);
  TrainResult res = trainer.run(corpus_paths_from_dir(corpus_dir), out_dir, resume);
  std::cout << "trained " << res.logs.size() << " epochs; final loss "
            << res.final_loss << "; best val F1 " << res.best_val_f1 << "\n";
  std::cout << "  best checkpoint: " << res.best_checkpoint << "\n";
  std::cout << "  last checkpoint: " << res.last_checkpoint << "\n";
  return 0;
}

int cmd_predict(const std::string& checkpoint_path,
                const std::string& features_dir, const std::string& output,
                bool paragraph, const std::string& proposals_path,
                const std::vector<std::string>& overrides) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Model model = Model::from_checkpoint(ckpt);

  Vocabulary vocab;
  if (!ckpt.config.contains("vocab")) {
    throw std::runtime_error("checkpoint lacks a vocabulary block");
  }
  ckpt.config.at("vocab").get_to(vocab.tokens);
  for (size_t i = 0; i < vocab.tokens.size(); ++i) {
    vocab.index[vocab.tokens[i]] = static_cast<int>(i);
  }

  RunConfig cfg;
  cfg.model = model.config();
  if (ckpt.config.contains("inference")) {
    cfg.inference.gamma = ckpt.config["inference"].value("gamma", 2.0);
    cfg.inference.mu = ckpt.config["inference"].value("mu", -1.0);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  RankingConfig rc{cfg.inference.gamma,
                   cfg.inference.resolve_mu(model.config().caption_head)};

  PredictionMap preds;
  if (paragraph) {
    if (proposals_path.empty()) {
      throw std::runtime_error("--paragraph requires --proposals <file>");
    }
    std::ifstream pf(proposals_path);
    if (!pf) throw std::runtime_error("cannot open proposals " + proposals_path);
    nlohmann::json pj = nlohmann::json::parse(pf);
    for (auto it = pj.begin(); it != pj.end(); ++it) {
      const std::string vid = it.key();
      FrameFeatureSequence seq = read_feature_file(features_dir, vid);
      Mat frames = rescale_temporal(seq.features, model.config().temporal_len);
      std::vector<TemporalSegment> props;
      for (const auto& ts : it.value()) {
        TemporalSegment s{ts.at(0).get<double>() / seq.duration_seconds,
                          ts.at(1).get<double>() / seq.duration_seconds};
        s.start = std::clamp(s.start, 0.0, 1.0);
        s.end = std::clamp(s.end, s.start, 1.0);
        props.push_back(s);
      }
      std::sort(props.begin(), props.end(),
                [](const TemporalSegment& a, const TemporalSegment& b) {
                  return a.start < b.start;
                });
      auto caps = model.paragraph_captions(frames, props);
      std::vector<PredictedEvent> events;
      for (size_t i = 0; i < props.size(); ++i) {
        PredictedEvent pe;
        pe.t_start = props[i].start * seq.duration_seconds;
        pe.t_end = props[i].end * seq.duration_seconds;
        pe.sentence = detokenize(caps[i].tokens, vocab);
        double logp = 0;
        for (double p : caps[i].token_probs) logp += std::log(std::max(p, 1e-8));
        pe.confidence = std::exp(logp / caps[i].length());
        events.push_back(std::move(pe));
      }
      preds.emplace(vid, std::move(events));
    }
  } else {
    for (const auto& vid : list_video_ids(features_dir)) {
      FrameFeatureSequence seq = read_feature_file(features_dir, vid);
      Mat frames = rescale_temporal(seq.features, model.config().temporal_len);
      Model::InferOut out = model.infer(frames, rc, vid);
      if (out.set.count_clamped) {
        std::cerr << "warning: " << vid
                  << ": predicted count exceeds query capacity, clamped\n";
      }
      std::vector<PredictedEvent> events;
      for (const auto& e : out.set.events) {
        PredictedEvent pe;
        pe.t_start = e.segment.start * seq.duration_seconds;
        pe.t_end = e.segment.end * seq.duration_seconds;
        pe.sentence = detokenize(e.tokens, vocab);
        pe.confidence = e.confidence;
        events.push_back(std::move(pe));
      }
      preds.emplace(vid, std::move(events));
    }
  }
  write_predictions(output, preds);
  std::cout << "wrote predictions for " << preds.size() << " videos to "
            << output << "\n";
  return 0;
}

int cmd_evaluate(const std::string& predictions_path,
                 const std::string& annotations_path,
                 const std::string& output) {
  PredictionMap preds = load_predictions(predictions_path);
  AnnotationMap anns = load_annotations(annotations_path);
  EvalReport report = evaluate_predictions(preds, anns);
  std::cout << report_table(report);
  if (!output.empty()) {
    std::ofstream f(output);
    if (!f) throw std::runtime_error("cannot write report " + output);
    f << report_to_json(report).dump(2) << "\n";
    std::cout << "report written to " << output << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dense video captioning on temporal feature sequences"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", overrides,
                 "config override section.key=value (repeatable; flags win)");
  app.add_flag("--deterministic", deterministic,
               "single-threaded numerics with pinned seeds");
  app.add_option("--seed", seed, "training/generation seed override")
      ->each([&](const std::string&) { seed_set = true; });

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus");
  std::string gen_out = "corpus";
  gen->add_option("--output", gen_out, "corpus directory");

  auto* train = app.add_subcommand("train", "train a model on a corpus");
  std::string train_corpus = "corpus";
  std::string train_out = default_output_dir();
  std::string resume;
  bool weak = false;
  train->add_option("--corpus", train_corpus, "corpus directory");
  train->add_option("--output", train_out, "checkpoint/log directory");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_flag("--weak-supervision", weak,
                  "caption-only supervision (no localization loss)");

  auto* predict = app.add_subcommand("predict", "run inference");
  std::string ckpt_path, features_dir, pred_out = "predictions.json";
  std::string proposals_path;
  bool paragraph = false;
  predict->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  predict->add_option("--features", features_dir, "feature directory")->required();
  predict->add_option("--output", pred_out, "prediction JSON path");
  predict->add_flag("--paragraph", paragraph, "caption given proposals only");
  predict->add_option("--proposals", proposals_path,
                      "JSON {video_id: [[start_sec, end_sec], ...]}");

  auto* eval = app.add_subcommand("evaluate", "score predictions");
  std::string eval_preds, eval_anns, eval_out;
  eval->add_option("--predictions", eval_preds, "prediction JSON")->required();
  eval->add_option("--annotations", eval_anns, "annotation JSON")->required();
  eval->add_option("--output", eval_out, "report JSON path");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve_config(config_path, overrides);
    if (seed_set) {
      cfg.train.seed = seed;
      cfg.data.seed = seed;
    }
    cfg.train.deterministic = cfg.train.deterministic || deterministic;

    if (gen->parsed()) return cmd_generate(cfg, gen_out);
    if (train->parsed()) return cmd_train(cfg, train_corpus, train_out, resume, weak);
    if (predict->parsed()) {
      return cmd_predict(ckpt_path, features_dir, pred_out, paragraph,
                         proposals_path, overrides);
    }
    if (eval->parsed()) return cmd_evaluate(eval_preds, eval_anns, eval_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
