#pragma once

#include <string>
#include <vector>

#include "densecap/nn.hpp"

namespace densecap {

using ad::Mat;
using ad::Var;

// Raw per-frame features for one video plus duration metadata.
struct FrameFeatureSequence {
  Mat features;  // T_raw x C_in
  double duration_seconds{0};
  std::string video_id;
};

// Linear interpolation along the temporal axis to exactly T rows. An input
// that already has T rows passes through bit-identically.
Mat rescale_temporal(const Mat& seq, int T);

// Fixed sinusoidal embedding of normalized temporal position (T x D, D even).
// Columns [0, D/2) hold sines, [D/2, D) the matching cosines; row 0 is all
// zeros / ones.
Mat sinusoid_embedding(int T, int D);

struct PyramidConfig {
  int c_in{32};
  int width{64};   // model width D
  int levels{4};   // L
  int gn_groups{8};
};

// Multi-resolution temporal features plus their positional embeddings.
// Level 0 has T rows; each following level has ceil(previous / 2).
struct FeaturePyramid {
  std::vector<Var> levels;
  std::vector<Var> pos;  // sinusoid + per-level learned embedding
};

// Projects raw frames to model width and derives the coarser levels with
// stride-2 kernel-3 temporal convolutions. Every level is group normalized.
class PyramidBuilder {
 public:
  static PyramidBuilder make(nn::ParamStore& ps, const PyramidConfig& cfg,
                             nn::Init& init);

  FeaturePyramid build(const Mat& frames) const;  // frames: T x C_in
  const PyramidConfig& config() const { return cfg_; }

 private:
  PyramidConfig cfg_;
  nn::Linear input_proj_;
  nn::GroupNorm input_norm_;
  std::vector<nn::Linear> convs_;       // act on unfolded (rows x 3D)
  std::vector<nn::GroupNorm> conv_norms_;
  std::vector<Var> level_embed_;        // 1 x D each
};

// Feature files are float32 little-endian row-major (T_raw x C_in) with a
// JSON sidecar carrying {video_id, T_raw, C_in, duration}.
void write_feature_file(const std::string& dir, const std::string& video_id,
                        const Mat& features, double duration_seconds);
FrameFeatureSequence read_feature_file(const std::string& dir,
                                       const std::string& video_id);

}  // namespace densecap
