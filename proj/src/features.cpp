#include "densecap/features.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace densecap {

Mat rescale_temporal(const Mat& seq, int T) {
  if (seq.rows() < 1) throw std::invalid_argument("rescale_temporal: empty sequence");
  if (T < 2) throw std::invalid_argument("rescale_temporal: T must be >= 2");
  if (!seq.allFinite()) throw std::invalid_argument("rescale_temporal: non-finite input");
  const Eigen::Index Tr = seq.rows();
  if (Tr == T) return seq;
  Mat out(T, seq.cols());
  if (Tr == 1) {
    out = seq.row(0).replicate(T, 1);
    return out;
  }
  const double step = static_cast<double>(Tr - 1) / static_cast<double>(T - 1);
  for (int t = 0; t < T; ++t) {
    const double x = step * t;
    const Eigen::Index i0 = std::min<Eigen::Index>(
        static_cast<Eigen::Index>(std::floor(x)), Tr - 1);
    const Eigen::Index i1 = std::min<Eigen::Index>(i0 + 1, Tr - 1);
    const double f = x - static_cast<double>(i0);
    out.row(t) = (1.0 - f) * seq.row(i0) + f * seq.row(i1);
  }
  return out;
}

Mat sinusoid_embedding(int T, int D) {
  if (D % 2 != 0) throw std::invalid_argument("sinusoid_embedding: D must be even");
  if (T < 1) throw std::invalid_argument("sinusoid_embedding: T must be >= 1");
  const int half = D / 2;
  Mat e(T, D);
  const double two_pi = 2.0 * M_PI;
  for (int i = 0; i < T; ++i) {
    const double p = (T > 1) ? static_cast<double>(i) / (T - 1) : 0.5;
    for (int j = 0; j < half; ++j) {
      const double omega =
          two_pi / std::pow(10000.0, 2.0 * j / static_cast<double>(D));
      e(i, j) = std::sin(p * omega);
      e(i, half + j) = std::cos(p * omega);
    }
  }
  return e;
}

PyramidBuilder PyramidBuilder::make(nn::ParamStore& ps, const PyramidConfig& cfg,
                                    nn::Init& init) {
  if (cfg.levels < 1) throw std::invalid_argument("PyramidBuilder: levels >= 1");
  if (cfg.width % 2 != 0) throw std::invalid_argument("PyramidBuilder: width must be even");
  PyramidBuilder b;
  b.cfg_ = cfg;
  b.input_proj_ = nn::Linear::make(ps, "pyramid.proj", cfg.c_in, cfg.width, init);
  b.input_norm_ = nn::GroupNorm::make(ps, "pyramid.norm", cfg.width, cfg.gn_groups);
  for (int l = 1; l < cfg.levels; ++l) {
    const std::string base = "pyramid.conv" + std::to_string(l);
    b.convs_.push_back(
        nn::Linear::make(ps, base, 3 * cfg.width, cfg.width, init));
    b.conv_norms_.push_back(
        nn::GroupNorm::make(ps, base + ".norm", cfg.width, cfg.gn_groups));
  }
  for (int l = 0; l < cfg.levels; ++l) {
    b.level_embed_.push_back(ps.create(
        "pyramid.level_embed" + std::to_string(l),
        init.normal(1, cfg.width, 0.02)));
  }
  return b;
}

FeaturePyramid PyramidBuilder::build(const Mat& frames) const {
  if (frames.cols() != cfg_.c_in) {
    throw std::invalid_argument("PyramidBuilder: feature width mismatch");
  }
  const Eigen::Index min_rows = Eigen::Index(1) << (cfg_.levels - 1);
  if (frames.rows() < min_rows) {
    throw std::invalid_argument("PyramidBuilder: too few frames for level count");
  }
  FeaturePyramid pyr;
  Var x = input_norm_(input_proj_(ad::constant(frames)));
  pyr.levels.push_back(x);
  for (size_t l = 0; l < convs_.size(); ++l) {
    x = conv_norms_[l](convs_[l](ad::unfold_k3s2(x)));
    pyr.levels.push_back(x);
  }
  for (int l = 0; l < cfg_.levels; ++l) {
    Mat sin = sinusoid_embedding(static_cast<int>(pyr.levels[l].rows()),
                                 cfg_.width);
    pyr.pos.push_back(ad::add_rowvec(ad::constant(sin), level_embed_[l]));
  }
  return pyr;
}

namespace {
std::string feature_path(const std::string& dir, const std::string& id) {
  return (std::filesystem::path(dir) / (id + ".bin")).string();
}
std::string sidecar_path(const std::string& dir, const std::string& id) {
  return (std::filesystem::path(dir) / (id + ".json")).string();
}
}  // namespace

void write_feature_file(const std::string& dir, const std::string& video_id,
                        const Mat& features, double duration_seconds) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(feature_path(dir, video_id), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write feature file for " + video_id);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      const float v = static_cast<float>(features(i, j));
      bin.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  }
  bin.close();

  nlohmann::json meta;
  meta["video_id"] = video_id;
  meta["T_raw"] = features.rows();
  meta["C_in"] = features.cols();
  meta["duration"] = duration_seconds;
  std::ofstream side(sidecar_path(dir, video_id));
  side << meta.dump(2) << "\n";
}

FrameFeatureSequence read_feature_file(const std::string& dir,
                                       const std::string& video_id) {
  std::ifstream side(sidecar_path(dir, video_id));
  if (!side) throw std::runtime_error("missing feature sidecar for " + video_id);
  nlohmann::json meta = nlohmann::json::parse(side);
  const Eigen::Index T = meta.at("T_raw").get<Eigen::Index>();
  const Eigen::Index C = meta.at("C_in").get<Eigen::Index>();

  FrameFeatureSequence seq;
  seq.video_id = meta.at("video_id").get<std::string>();
  seq.duration_seconds = meta.at("duration").get<double>();
  seq.features.resize(T, C);

  std::ifstream bin(feature_path(dir, video_id), std::ios::binary);
  if (!bin) throw std::runtime_error("missing feature file for " + video_id);
  for (Eigen::Index i = 0; i < T; ++i) {
    for (Eigen::Index j = 0; j < C; ++j) {
      float v;
      bin.read(reinterpret_cast<char*>(&v), sizeof(float));
      if (!bin) {
        throw std::runtime_error("truncated feature file for " + video_id);
      }
      seq.features(i, j) = static_cast<double>(v);
    }
  }
  return seq;
}

}  // namespace densecap
