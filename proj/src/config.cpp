#include "densecap/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace densecap {

void ModelConfig::validate() const {
  if (width <= 0 || width % heads != 0) {
    throw std::invalid_argument("model: width must be a positive multiple of heads");
  }
  if (width % 2 != 0) throw std::invalid_argument("model: width must be even");
  if (gn_groups <= 0 || width % gn_groups != 0) {
    throw std::invalid_argument("model: gn_groups must divide width");
  }
  if (points < 1 || levels < 1) {
    throw std::invalid_argument("model: points and levels must be >= 1");
  }
  if (temporal_len < (1 << (levels - 1))) {
    throw std::invalid_argument("model: temporal_len too small for level count");
  }
  if (enc_layers < 1 || dec_layers < 1) {
    throw std::invalid_argument("model: need at least one encoder/decoder layer");
  }
  if (num_queries < 1) throw std::invalid_argument("model: num_queries >= 1");
  if (max_count < 1) throw std::invalid_argument("model: max_count >= 1");
  if (max_caption_len < 2) throw std::invalid_argument("model: max_caption_len >= 2");
  if (caption_head != "light" && caption_head != "dsa") {
    throw std::invalid_argument("model: caption_head must be light or dsa");
  }
}

void TrainConfig::validate() const {
  if (lr <= 0) throw std::invalid_argument("train: lr must be positive");
  if (epochs < 1) throw std::invalid_argument("train: epochs >= 1");
  if (val_fraction < 0 || val_fraction >= 1) {
    throw std::invalid_argument("train: val_fraction in [0, 1)");
  }
  if (batch_videos < 1) throw std::invalid_argument("train: batch_videos >= 1");
  if (alpha_giou < 0 || alpha_cls < 0 || beta_giou < 0 || beta_cls < 0 ||
      beta_ec < 0 || beta_cap < 0) {
    throw std::invalid_argument("train: cost/loss weights must be >= 0");
  }
  if (focal_alpha < 0 || focal_alpha > 1 || focal_gamma < 0) {
    throw std::invalid_argument("train: bad focal parameters");
  }
}

double InferenceConfig::resolve_mu(const std::string& caption_head) const {
  if (mu >= 0) return mu;
  return caption_head == "light" ? 0.3 : 1.0;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  if (inference.gamma < 0) throw std::invalid_argument("inference: gamma >= 0");
}

namespace {

// Tracks consumed keys so unknown ones can be rejected with their path.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw std::invalid_argument("config: " + path_ + " must be an object");
    }
  }

  template <typename T>
  void field(const char* key, T& dst) {
    seen_.insert(key);
    if (j_.contains(key)) j_.at(key).get_to(dst);
  }

  const nlohmann::json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void done() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) {
        throw std::invalid_argument("config: unknown key " + path_ + "." + k);
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(const nlohmann::json& j, ModelConfig& m) {
  Reader r(j, "model");
  r.field("c_in", m.c_in);
  r.field("temporal_len", m.temporal_len);
  r.field("width", m.width);
  r.field("ffn", m.ffn);
  r.field("heads", m.heads);
  r.field("points", m.points);
  r.field("levels", m.levels);
  r.field("enc_layers", m.enc_layers);
  r.field("dec_layers", m.dec_layers);
  r.field("num_queries", m.num_queries);
  r.field("max_count", m.max_count);
  r.field("vocab_size", m.vocab_size);
  r.field("lstm_hidden", m.lstm_hidden);
  r.field("word_dim", m.word_dim);
  r.field("max_caption_len", m.max_caption_len);
  r.field("gn_groups", m.gn_groups);
  r.field("caption_head", m.caption_head);
  r.field("weak", m.weak);
  r.done();
}

void read_train(const nlohmann::json& j, TrainConfig& t) {
  Reader r(j, "train");
  r.field("lr", t.lr);
  r.field("epochs", t.epochs);
  r.field("seed", t.seed);
  r.field("val_fraction", t.val_fraction);
  r.field("grad_clip", t.grad_clip);
  r.field("batch_videos", t.batch_videos);
  r.field("deterministic", t.deterministic);
  r.field("paragraph_aux", t.paragraph_aux);
  r.field("eval_interval", t.eval_interval);
  r.field("alpha_giou", t.alpha_giou);
  r.field("alpha_cls", t.alpha_cls);
  r.field("beta_giou", t.beta_giou);
  r.field("beta_cls", t.beta_cls);
  r.field("beta_ec", t.beta_ec);
  r.field("beta_cap", t.beta_cap);
  r.field("focal_alpha", t.focal_alpha);
  r.field("focal_gamma", t.focal_gamma);
  r.done();
}

void read_data(const nlohmann::json& j, SyntheticConfig& d) {
  Reader r(j, "data");
  r.field("n_videos", d.n_videos);
  r.field("seed", d.seed);
  r.field("c_in", d.c_in);
  r.field("t_raw_min", d.t_raw_min);
  r.field("t_raw_max", d.t_raw_max);
  r.field("events_min", d.events_min);
  r.field("events_max", d.events_max);
  r.field("n_classes", d.n_classes);
  r.field("noise", d.noise);
  r.field("min_len_frac", d.min_len_frac);
  r.field("max_len_frac", d.max_len_frac);
  r.field("max_overlap_iou", d.max_overlap_iou);
  r.field("dur_min", d.dur_min);
  r.field("dur_max", d.dur_max);
  r.done();
}

void read_inference(const nlohmann::json& j, InferenceConfig& i) {
  Reader r(j, "inference");
  r.field("gamma", i.gamma);
  r.field("mu", i.mu);
  r.done();
}

}  // namespace

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["model"] = {{"c_in", cfg.model.c_in},
                {"temporal_len", cfg.model.temporal_len},
                {"width", cfg.model.width},
                {"ffn", cfg.model.ffn},
                {"heads", cfg.model.heads},
                {"points", cfg.model.points},
                {"levels", cfg.model.levels},
                {"enc_layers", cfg.model.enc_layers},
                {"dec_layers", cfg.model.dec_layers},
                {"num_queries", cfg.model.num_queries},
                {"max_count", cfg.model.max_count},
                {"vocab_size", cfg.model.vocab_size},
                {"lstm_hidden", cfg.model.lstm_hidden},
                {"word_dim", cfg.model.word_dim},
                {"max_caption_len", cfg.model.max_caption_len},
                {"gn_groups", cfg.model.gn_groups},
                {"caption_head", cfg.model.caption_head},
                {"weak", cfg.model.weak}};
  j["train"] = {{"lr", cfg.train.lr},
                {"epochs", cfg.train.epochs},
                {"seed", cfg.train.seed},
                {"val_fraction", cfg.train.val_fraction},
                {"grad_clip", cfg.train.grad_clip},
                {"batch_videos", cfg.train.batch_videos},
                {"deterministic", cfg.train.deterministic},
                {"paragraph_aux", cfg.train.paragraph_aux},
                {"eval_interval", cfg.train.eval_interval},
                {"alpha_giou", cfg.train.alpha_giou},
                {"alpha_cls", cfg.train.alpha_cls},
                {"beta_giou", cfg.train.beta_giou},
                {"beta_cls", cfg.train.beta_cls},
                {"beta_ec", cfg.train.beta_ec},
                {"beta_cap", cfg.train.beta_cap},
                {"focal_alpha", cfg.train.focal_alpha},
                {"focal_gamma", cfg.train.focal_gamma}};
  j["data"] = {{"n_videos", cfg.data.n_videos},
               {"seed", cfg.data.seed},
               {"c_in", cfg.data.c_in},
               {"t_raw_min", cfg.data.t_raw_min},
               {"t_raw_max", cfg.data.t_raw_max},
               {"events_min", cfg.data.events_min},
               {"events_max", cfg.data.events_max},
               {"n_classes", cfg.data.n_classes},
               {"noise", cfg.data.noise},
               {"min_len_frac", cfg.data.min_len_frac},
               {"max_len_frac", cfg.data.max_len_frac},
               {"max_overlap_iou", cfg.data.max_overlap_iou},
               {"dur_min", cfg.data.dur_min},
               {"dur_max", cfg.data.dur_max}};
  j["inference"] = {{"gamma", cfg.inference.gamma}, {"mu", cfg.inference.mu}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  Reader r(j, "config");
  if (const auto* m = r.section("model")) read_model(*m, cfg.model);
  if (const auto* t = r.section("train")) read_train(*t, cfg.train);
  if (const auto* d = r.section("data")) read_data(*d, cfg.data);
  if (const auto* i = r.section("inference")) read_inference(*i, cfg.inference);
  r.done();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed config JSON in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write config " + path);
  f << to_json(cfg).dump(2) << "\n";
}

void apply_override(RunConfig& cfg, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override must be section.key=value: " + spec);
  }
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    throw std::invalid_argument("override must be section.key=value: " + spec);
  }
  nlohmann::json j = to_json(cfg);
  const std::string section = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  if (!j.contains(section) || !j[section].contains(key)) {
    throw std::invalid_argument("unknown config key: " + path);
  }
  nlohmann::json& slot = j[section][key];
  if (slot.is_string()) {
    slot = value;
  } else if (slot.is_boolean()) {
    slot = (value == "true" || value == "1");
  } else if (slot.is_number_integer() || slot.is_number_unsigned()) {
    slot = std::stoll(value);
  } else {
    slot = std::stod(value);
  }
  cfg = run_config_from_json(j);
}

}  // namespace densecap
