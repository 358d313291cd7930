#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "densecap/data.hpp"

using namespace densecap;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
  const std::string d = (fs::temp_directory_path() / name).string();
  fs::remove_all(d);
  return d;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

SyntheticConfig small_config() {
  SyntheticConfig cfg;
  cfg.n_videos = 12;
  cfg.seed = 17;
  cfg.c_in = 8;
  cfg.t_raw_min = 20;
  cfg.t_raw_max = 40;
  return cfg;
}

}  // namespace

TEST_CASE("tokenizer rules") {
  Vocabulary v = Vocabulary::from_words({"a", "man", "runs"});
  CHECK(v.size() == 7);
  CHECK(v.id("man") == v.index.at("man"));
  CHECK(tokenize("A man runs.", v) ==
        std::vector<int>{v.id("a"), v.id("man"), v.id("runs"), kEosId});
  // out-of-vocabulary word maps to UNK
  CHECK(tokenize("A man flies.", v)[2] == kUnkId);
  CHECK(tokenize_words("Hello,   World! (ok)") ==
        std::vector<std::string>{"hello", "world", "ok"});
  CHECK(detokenize({v.id("a"), v.id("man"), kEosId}, v) == "a man");
}

TEST_CASE("vocabulary file round trip preserves reserved ids") {
  const std::string dir = tmp_dir("densecap_vocab_test");
  fs::create_directories(dir);
  Vocabulary v = Vocabulary::from_words({"zebra", "apple"});
  const std::string path = dir + "/vocab.txt";
  v.save(path);
  Vocabulary w = Vocabulary::load(path);
  CHECK(w.tokens == v.tokens);
  CHECK(w.tokens[kPadId] == "<pad>");
  CHECK(w.tokens[kBosId] == "<bos>");
  CHECK(w.tokens[kEosId] == "<eos>");
  CHECK(w.tokens[kUnkId] == "<unk>");
  fs::remove_all(dir);
}

TEST_CASE("annotations round trip and validation") {
  const std::string dir = tmp_dir("densecap_ann_test");
  fs::create_directories(dir);
  AnnotationMap anns;
  AnnotationRecord rec;
  rec.video_id = "v1";
  rec.duration_seconds = 30.0;
  rec.events = {{1.25, 5.5, "A man runs."}, {10.0, 22.75, "The dog swims."}};
  anns.emplace("v1", rec);
  const std::string path = dir + "/ann.json";
  save_annotations(path, anns);
  const AnnotationMap back = load_annotations(path);
  REQUIRE(back.count("v1"));
  CHECK(back.at("v1").duration_seconds == 30.0);
  REQUIRE(back.at("v1").events.size() == 2);
  CHECK(back.at("v1").events[0].t_start == 1.25);
  CHECK(back.at("v1").events[1].t_end == 22.75);
  CHECK(back.at("v1").events[0].sentence == "A man runs.");

  // malformed JSON
  std::ofstream bad(dir + "/bad.json");
  bad << "{ not json";
  bad.close();
  CHECK_THROWS(load_annotations(dir + "/bad.json"));

  // timestamp beyond the duration names the video
  std::ofstream oob(dir + "/oob.json");
  oob << R"({"vid_x": {"duration": 10.0, "timestamps": [[2.0, 12.0]],
             "sentences": ["late"]}})";
  oob.close();
  try {
    load_annotations(dir + "/oob.json");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("vid_x") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("infeasible synthetic layouts are rejected") {
  SyntheticConfig cfg = small_config();
  cfg.events_min = cfg.events_max = 5;
  cfg.min_len_frac = 0.25;
  cfg.max_len_frac = 0.30;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  SyntheticConfig ok = small_config();
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("corpus generation is byte-identical under a fixed seed") {
  const std::string d1 = tmp_dir("densecap_corpus_a");
  const std::string d2 = tmp_dir("densecap_corpus_b");
  const SyntheticConfig cfg = small_config();
  const CorpusPaths p1 = generate_corpus(cfg, d1);
  const CorpusPaths p2 = generate_corpus(cfg, d2);

  CHECK(slurp(p1.annotations) == slurp(p2.annotations));
  CHECK(slurp(p1.vocab) == slurp(p2.vocab));
  CHECK(slurp(p1.meta) == slurp(p2.meta));
  for (const auto& entry : fs::directory_iterator(p1.features_dir)) {
    const std::string name = entry.path().filename().string();
    CHECK(slurp(entry.path().string()) ==
          slurp((fs::path(p2.features_dir) / name).string()));
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("corpus respects event count bounds and layout constraints") {
  const std::string dir = tmp_dir("densecap_corpus_c");
  SyntheticConfig cfg = small_config();
  cfg.n_videos = 40;
  const CorpusPaths paths = generate_corpus(cfg, dir);
  const AnnotationMap anns = load_annotations(paths.annotations);
  CHECK(anns.size() == 40);
  long total = 0;
  for (const auto& [vid, rec] : anns) {
    const size_t n = rec.events.size();
    CHECK(n >= static_cast<size_t>(cfg.events_min));
    CHECK(n <= static_cast<size_t>(cfg.events_max));
    total += static_cast<long>(n);
    for (const auto& e : rec.events) {
      CHECK(e.t_start >= 0.0);
      CHECK(e.t_end <= rec.duration_seconds + 1e-9);
      const double len = (e.t_end - e.t_start) / rec.duration_seconds;
      CHECK(len >= cfg.min_len_frac - 1e-9);
      CHECK(len <= cfg.max_len_frac + 1e-9);
    }
    // pairwise overlap bound, in normalized time
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j) {
        const TemporalSegment a{rec.events[i].t_start / rec.duration_seconds,
                                rec.events[i].t_end / rec.duration_seconds};
        const TemporalSegment b{rec.events[j].t_start / rec.duration_seconds,
                                rec.events[j].t_end / rec.duration_seconds};
        CHECK(iou(a, b) <= cfg.max_overlap_iou + 1e-9);
      }
    }
  }
  CHECK(total >= 40L * cfg.events_min);
  CHECK(total <= 40L * cfg.events_max);
  fs::remove_all(dir);
}

TEST_CASE("planted class signatures are linearly recoverable") {
  const std::string dir = tmp_dir("densecap_corpus_probe");
  SyntheticConfig cfg;
  cfg.n_videos = 200;
  cfg.seed = 23;
  cfg.c_in = 16;
  cfg.t_raw_min = 30;
  cfg.t_raw_max = 60;
  const CorpusPaths paths = generate_corpus(cfg, dir);
  const CorpusMeta meta = load_corpus_meta(paths.meta);

  // mean in-segment feature per event
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> ys;
  for (const auto& [vid, events] : meta) {
    const auto seq = read_feature_file(paths.features_dir, vid);
    const int T = static_cast<int>(seq.features.rows());
    for (const auto& ev : events) {
      const int t0 = static_cast<int>(std::floor(ev.segment.start * T));
      const int t1 = std::max(t0 + 1, static_cast<int>(std::ceil(ev.segment.end * T)));
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(cfg.c_in);
      int count = 0;
      for (int t = t0; t < std::min(t1, T); ++t, ++count) {
        mean += seq.features.row(t).transpose();
      }
      mean /= std::max(1, count);
      xs.push_back(mean);
      ys.push_back(ev.event_class);
    }
  }
  REQUIRE(xs.size() > 300);

  // ridge-regression one-vs-all probe: fit on the first 70%, test the rest
  const int n = static_cast<int>(xs.size());
  const int n_train = (n * 7) / 10;
  Eigen::MatrixXd X(n_train, cfg.c_in + 1);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n_train, cfg.n_classes);
  for (int i = 0; i < n_train; ++i) {
    X.row(i).head(cfg.c_in) = xs[i].transpose();
    X(i, cfg.c_in) = 1.0;
    Y(i, ys[i]) = 1.0;
  }
  const Eigen::MatrixXd A =
      X.transpose() * X +
      1e-3 * Eigen::MatrixXd::Identity(cfg.c_in + 1, cfg.c_in + 1);
  const Eigen::MatrixXd W = A.ldlt().solve(X.transpose() * Y);

  int correct = 0;
  for (int i = n_train; i < n; ++i) {
    Eigen::RowVectorXd x(cfg.c_in + 1);
    x.head(cfg.c_in) = xs[i].transpose();
    x(cfg.c_in) = 1.0;
    Eigen::Index arg;
    (x * W).maxCoeff(&arg);
    if (static_cast<int>(arg) == ys[i]) ++correct;
  }
  const double acc = static_cast<double>(correct) / (n - n_train);
  CHECK(acc >= 0.95);
  fs::remove_all(dir);
}

TEST_CASE("captions agree with the planted class metadata") {
  const std::string dir = tmp_dir("densecap_corpus_check");
  SyntheticConfig cfg = small_config();
  const CorpusPaths paths = generate_corpus(cfg, dir);
  const CorpusMeta meta = load_corpus_meta(paths.meta);
  const AnnotationMap anns = load_annotations(paths.annotations);
  // two events with the same planted class share their verb token
  std::map<int, std::string> class_verb;
  for (const auto& [vid, events] : meta) {
    const auto& rec = anns.at(vid);
    REQUIRE(rec.events.size() == events.size());
    for (size_t i = 0; i < events.size(); ++i) {
      const auto words = tokenize_words(rec.events[i].sentence);
      REQUIRE(words.size() >= 3);
      const std::string verb = words[2];  // article subject verb ...
      auto it = class_verb.find(events[i].event_class);
      if (it == class_verb.end()) {
        class_verb[events[i].event_class] = verb;
      } else {
        CHECK(it->second == verb);
      }
    }
  }
  CHECK(class_verb.size() > 1);
  fs::remove_all(dir);
}
