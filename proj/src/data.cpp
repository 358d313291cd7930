#include "densecap/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace densecap {

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  v.tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
  std::set<std::string> uniq(words.begin(), words.end());
  for (const auto& w : uniq) v.tokens.push_back(w);
  for (size_t i = 0; i < v.tokens.size(); ++i) {
    v.index[v.tokens[i]] = static_cast<int>(i);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open vocabulary " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) v.tokens.push_back(line);
  }
  if (v.tokens.size() < kReservedTokens) {
    throw std::runtime_error("vocabulary too small: " + path);
  }
  for (size_t i = 0; i < v.tokens.size(); ++i) {
    v.index[v.tokens[i]] = static_cast<int>(i);
  }
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write vocabulary " + path);
  for (const auto& t : tokens) f << t << "\n";
}

int Vocabulary::id(const std::string& word) const {
  auto it = index.find(word);
  return it == index.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("Vocabulary: id out of range");
  }
  return tokens[static_cast<size_t>(id)];
}

std::vector<std::string> tokenize_words(const std::string& sentence) {
  std::string clean;
  clean.reserve(sentence.size());
  for (char ch : sentence) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      clean.push_back(static_cast<char>(std::tolower(u)));
    } else if (std::isspace(u)) {
      clean.push_back(' ');
    }
    // punctuation dropped
  }
  std::vector<std::string> words;
  std::istringstream ss(clean);
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

std::vector<int> tokenize(const std::string& sentence, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& w : tokenize_words(sentence)) ids.push_back(vocab.id(w));
  ids.push_back(kEosId);
  return ids;
}

std::string detokenize(const std::vector<int>& tokens, const Vocabulary& vocab) {
  std::string out;
  for (int t : tokens) {
    if (t == kEosId || t == kPadId || t == kBosId) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.word(t);
  }
  return out;
}

AnnotationMap load_annotations(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open annotations " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed annotation JSON in " + path + ": " +
                             e.what());
  }
  AnnotationMap out;
  for (auto it = root.begin(); it != root.end(); ++it) {
    const std::string vid = it.key();
    AnnotationRecord rec;
    rec.video_id = vid;
    try {
      const auto& body = it.value();
      rec.duration_seconds = body.at("duration").get<double>();
      const auto& ts = body.at("timestamps");
      const auto& ss = body.at("sentences");
      if (ts.size() != ss.size()) {
        throw std::runtime_error("timestamps/sentences size mismatch");
      }
      if (ts.empty()) throw std::runtime_error("no events");
      for (size_t i = 0; i < ts.size(); ++i) {
        AnnotationEvent e;
        e.t_start = ts[i].at(0).get<double>();
        e.t_end = ts[i].at(1).get<double>();
        e.sentence = ss[i].get<std::string>();
        if (e.t_start < 0 || e.t_end > rec.duration_seconds ||
            e.t_start > e.t_end) {
          throw std::runtime_error("timestamp out of range");
        }
        rec.events.push_back(std::move(e));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("annotation error for video " + vid + ": " +
                               e.what());
    }
    out.emplace(vid, std::move(rec));
  }
  return out;
}

void save_annotations(const std::string& path, const AnnotationMap& anns) {
  nlohmann::json root;
  for (const auto& [vid, rec] : anns) {
    nlohmann::json ts = nlohmann::json::array();
    nlohmann::json ss = nlohmann::json::array();
    for (const auto& e : rec.events) {
      ts.push_back({e.t_start, e.t_end});
      ss.push_back(e.sentence);
    }
    root[vid] = {{"duration", rec.duration_seconds},
                 {"timestamps", ts},
                 {"sentences", ss}};
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write annotations " + path);
  f << root.dump(2) << "\n";
}

void SyntheticConfig::validate() const {
  if (n_videos < 1) throw std::invalid_argument("synthetic: n_videos >= 1");
  if (c_in < 4) throw std::invalid_argument("synthetic: c_in >= 4");
  if (t_raw_min < 2 || t_raw_max < t_raw_min) {
    throw std::invalid_argument("synthetic: bad T_raw range");
  }
  if (events_min < 1 || events_max < events_min) {
    throw std::invalid_argument("synthetic: bad event count range");
  }
  if (n_classes < 1 || n_classes > 12) {
    throw std::invalid_argument("synthetic: n_classes in [1, 12]");
  }
  if (min_len_frac <= 0 || max_len_frac < min_len_frac || max_len_frac > 1) {
    throw std::invalid_argument("synthetic: bad length range");
  }
  if (max_overlap_iou < 0 || max_overlap_iou >= 1) {
    throw std::invalid_argument("synthetic: bad overlap bound");
  }
  if (dur_min <= 0 || dur_max < dur_min) {
    throw std::invalid_argument("synthetic: bad duration range");
  }
  // Worst case the requested events cannot fit in the timeline at all.
  if (events_max * min_len_frac > 1.0) {
    throw std::invalid_argument(
        "synthetic: infeasible layout, events_max * min_len_frac > 1");
  }
}

namespace {

constexpr int kNumAttrs = 6;

const char* kSubjects[6] = {"man", "woman", "dog", "kid", "robot", "bird"};
const char* kVerbs[12][2] = {
    {"runs", nullptr},      {"jumps", "over"},   {"swims", nullptr},
    {"dances", nullptr},    {"climbs", "up"},    {"slides", "down"},
    {"spins", "around"},    {"waves", nullptr},  {"kicks", nullptr},
    {"throws", nullptr},    {"claps", nullptr},  {"bows", nullptr}};
const char* kAttrs[kNumAttrs] = {"quickly", "slowly",  "gracefully",
                                 "loudly",  "quietly", "wildly"};
const char* kTails[3] = {"outside", "indoors", "nearby"};

std::string caption_for(int cls, int attr) {
  std::string s = (cls % 2 == 0) ? "A " : "The ";
  s += kSubjects[cls % 6];
  s += ' ';
  s += kVerbs[cls][0];
  if (kVerbs[cls][1]) {
    s += ' ';
    s += kVerbs[cls][1];
  }
  s += ' ';
  s += kAttrs[attr];
  if ((cls + attr) % 2 == 0) {
    s += ' ';
    s += kTails[(cls + attr) % 3];
  }
  s += '.';
  return s;
}

std::vector<std::string> template_words(int n_classes) {
  std::vector<std::string> words = {"a", "the"};
  for (const auto* s : kSubjects) words.push_back(s);
  for (int c = 0; c < n_classes; ++c) {
    words.push_back(kVerbs[c][0]);
    if (kVerbs[c][1]) words.push_back(kVerbs[c][1]);
  }
  for (const auto* a : kAttrs) words.push_back(a);
  for (const auto* t : kTails) words.push_back(t);
  return words;
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 step over seed + stream index
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Mat unit_rows(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    m.row(i).normalize();
  }
  return m;
}

}  // namespace

CorpusPaths generate_corpus(const SyntheticConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  CorpusPaths paths;
  paths.dir = out_dir;
  paths.features_dir = (fs::path(out_dir) / "features").string();
  paths.annotations = (fs::path(out_dir) / "annotations.json").string();
  paths.vocab = (fs::path(out_dir) / "vocab.txt").string();
  paths.meta = (fs::path(out_dir) / "meta.json").string();
  fs::create_directories(paths.features_dir);

  // Class and attribute signatures shared across the corpus.
  std::mt19937_64 sig_rng(mix_seed(cfg.seed, 0));
  const Mat class_dirs = unit_rows(sig_rng, cfg.n_classes, cfg.c_in);
  const Mat attr_dirs = unit_rows(sig_rng, kNumAttrs, cfg.c_in);

  AnnotationMap anns;
  nlohmann::json meta;

  for (int vi = 0; vi < cfg.n_videos; ++vi) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 1 + vi));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    char buf[32];
    std::snprintf(buf, sizeof(buf), "video_%04d", vi);
    const std::string vid = buf;

    const double duration = cfg.dur_min + u01(rng) * (cfg.dur_max - cfg.dur_min);
    const int t_raw =
        cfg.t_raw_min +
        static_cast<int>(u01(rng) * (cfg.t_raw_max - cfg.t_raw_min + 1) * 0.999999);

    // Event layout by rejection on the pairwise overlap bound.
    const int want =
        cfg.events_min +
        static_cast<int>(u01(rng) * (cfg.events_max - cfg.events_min + 1) * 0.999999);
    std::vector<TemporalSegment> segs;
    for (int restart = 0; restart < 64 && static_cast<int>(segs.size()) != want;
         ++restart) {
      segs.clear();
      for (int e = 0; e < want; ++e) {
        bool placed = false;
        for (int attempt = 0; attempt < 256; ++attempt) {
          const double len =
              cfg.min_len_frac + u01(rng) * (cfg.max_len_frac - cfg.min_len_frac);
          const double start = u01(rng) * (1.0 - len);
          const TemporalSegment cand{start, start + len};
          bool ok = true;
          for (const auto& s : segs) {
            if (iou(cand, s) > cfg.max_overlap_iou) {
              ok = false;
              break;
            }
          }
          if (ok) {
            segs.push_back(cand);
            placed = true;
            break;
          }
        }
        if (!placed) break;
      }
    }
    if (static_cast<int>(segs.size()) != want) {
      throw std::runtime_error("generate_corpus: could not place events for " +
                               vid + "; loosen the layout constraints");
    }
    std::sort(segs.begin(), segs.end(),
              [](const TemporalSegment& a, const TemporalSegment& b) {
                return a.start < b.start;
              });

    // Features: Gaussian background plus planted signatures.
    std::normal_distribution<double> g(0.0, 1.0);
    Mat feats(t_raw, cfg.c_in);
    for (int t = 0; t < t_raw; ++t) {
      for (int c = 0; c < cfg.c_in; ++c) feats(t, c) = cfg.noise * g(rng);
    }

    AnnotationRecord rec;
    rec.video_id = vid;
    rec.duration_seconds = duration;
    nlohmann::json planted = nlohmann::json::array();
    for (const auto& s : segs) {
      const int cls = static_cast<int>(u01(rng) * cfg.n_classes * 0.999999);
      const int attr = static_cast<int>(u01(rng) * kNumAttrs * 0.999999);
      const int t0 = static_cast<int>(std::floor(s.start * t_raw));
      const int t1 = std::max(
          t0 + 1, static_cast<int>(std::ceil(s.end * t_raw)));
      for (int t = t0; t < std::min(t1, t_raw); ++t) {
        feats.row(t) += 2.0 * class_dirs.row(cls) + 1.2 * attr_dirs.row(attr);
      }
      AnnotationEvent ev;
      ev.t_start = s.start * duration;
      ev.t_end = s.end * duration;
      ev.sentence = caption_for(cls, attr);
      rec.events.push_back(std::move(ev));
      planted.push_back({{"class", cls},
                         {"attribute", attr},
                         {"segment", {s.start, s.end}}});
    }
    anns.emplace(vid, std::move(rec));
    meta[vid] = planted;

    write_feature_file(paths.features_dir, vid, feats, duration);
  }

  save_annotations(paths.annotations, anns);
  Vocabulary vocab = Vocabulary::from_words(template_words(cfg.n_classes));
  vocab.save(paths.vocab);

  std::ofstream mf(paths.meta);
  mf << meta.dump(2) << "\n";
  return paths;
}

CorpusMeta load_corpus_meta(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open corpus meta " + path);
  nlohmann::json root = nlohmann::json::parse(f);
  CorpusMeta meta;
  for (auto it = root.begin(); it != root.end(); ++it) {
    std::vector<PlantedEvent> events;
    for (const auto& e : it.value()) {
      PlantedEvent pe;
      pe.event_class = e.at("class").get<int>();
      pe.attribute = e.at("attribute").get<int>();
      pe.segment.start = e.at("segment").at(0).get<double>();
      pe.segment.end = e.at("segment").at(1).get<double>();
      events.push_back(pe);
    }
    meta.emplace(it.key(), std::move(events));
  }
  return meta;
}

}  // namespace densecap
