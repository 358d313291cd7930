#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "densecap/features.hpp"
#include "densecap/geometry.hpp"
#include "densecap/tokens.hpp"

namespace densecap {

// Newline-delimited token file; lines 0..3 are the reserved
// <pad>/<bos>/<eos>/<unk> entries.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  static Vocabulary from_words(const std::vector<std::string>& words);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int id(const std::string& word) const;
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(tokens.size()); }
};

// Lowercases, strips punctuation, splits on whitespace.
std::vector<std::string> tokenize_words(const std::string& sentence);

// Word ids with a trailing EOS; out-of-vocabulary words map to UNK.
std::vector<int> tokenize(const std::string& sentence, const Vocabulary& vocab);

// Joins tokens back into a plain lowercase sentence, skipping specials.
std::string detokenize(const std::vector<int>& tokens, const Vocabulary& vocab);

struct AnnotationEvent {
  double t_start{0}, t_end{0};  // seconds
  std::string sentence;
};

struct AnnotationRecord {
  std::string video_id;
  double duration_seconds{0};
  std::vector<AnnotationEvent> events;
};

using AnnotationMap = std::map<std::string, AnnotationRecord>;

// JSON shape: {video_id: {"duration": s, "timestamps": [[a,b],...],
// "sentences": [...]}}. Malformed files and out-of-range timestamps raise
// errors naming the offending video.
AnnotationMap load_annotations(const std::string& path);
void save_annotations(const std::string& path, const AnnotationMap& anns);

struct SyntheticConfig {
  int n_videos{100};
  uint64_t seed{1};
  int c_in{32};
  int t_raw_min{48};
  int t_raw_max{96};
  int events_min{1};
  int events_max{5};
  int n_classes{12};
  double noise{0.3};
  double min_len_frac{0.05};
  double max_len_frac{0.35};
  double max_overlap_iou{0.2};
  double dur_min{20.0};
  double dur_max{60.0};

  void validate() const;  // throws on infeasible layouts
};

struct CorpusPaths {
  std::string dir;
  std::string features_dir;
  std::string annotations;
  std::string vocab;
  std::string meta;
};

// Per-event construction record, kept in meta.json so tests can check that
// captions agree with the planted feature signatures.
struct PlantedEvent {
  int event_class{0};
  int attribute{0};
  TemporalSegment segment;  // normalized
};
using CorpusMeta = std::map<std::string, std::vector<PlantedEvent>>;

// Deterministic synthetic corpus: per-class/attribute feature signatures
// rendered inside each event segment over Gaussian background noise, with
// templated captions naming the class and attribute. Byte-identical for a
// fixed seed.
CorpusPaths generate_corpus(const SyntheticConfig& cfg, const std::string& out_dir);

CorpusMeta load_corpus_meta(const std::string& path);

}  // namespace densecap
