#pragma once

#include <functional>
#include <string>
#include <vector>

#include "densecap/features.hpp"
#include "densecap/nn.hpp"

namespace densecap {

struct AttentionConfig {
  int heads{8};
  int points{4};  // K sampling points per level per head
  int levels{4};  // L
  int width{64};  // D

  void validate() const;
  int slots() const { return heads * levels * points; }
};

// Multi-scale deformable attention over a temporal pyramid. Offsets and
// per-slot weights are linear in the query; weights are softmax normalized
// per head across all K*L slots. Sampled features are read by linear
// interpolation with edge clamping and combined per Eqn-style weighted sum.
class MsDeformAttn {
 public:
  static MsDeformAttn make(nn::ParamStore& ps, const std::string& name,
                           const AttentionConfig& cfg, nn::Init& init);

  // queries: Q x D content driving offsets/weights; ref: Q x 1 normalized
  // reference points; mem_levels: L feature matrices (values before the
  // value projection).
  Var forward(const Var& queries, const Var& ref,
              const std::vector<Var>& mem_levels) const;

  // Variant with K fixed evenly spaced sampling positions spanning
  // [center - length/2, center + length/2]; offsets are not predicted but
  // per-slot weights still are.
  Var forward_even_keys(const Var& queries, const Var& ref_center,
                        const Var& ref_length,
                        const std::vector<Var>& mem_levels) const;

  const AttentionConfig& config() const { return cfg_; }

 private:
  Var combine(const Var& queries, const Var& pos_norm,
              const std::vector<Var>& mem_levels) const;

  AttentionConfig cfg_;
  nn::Linear value_proj_, out_proj_, offset_proj_, weight_proj_;
};

// Standard dense multi-head self-attention over N query rows.
struct MultiHeadSelfAttn {
  nn::Linear q, k, v, o;
  int heads{8};
  Var operator()(const Var& x) const;
  static MultiHeadSelfAttn make(nn::ParamStore& ps, const std::string& name,
                                int width, int heads, nn::Init& init);
};

// Pre-norm deformable encoder. Each layer adds a deformable self-attention
// branch (every pyramid position is a query anchored at its own normalized
// position, sampling all levels) and a feed-forward branch; zeroing a layer's
// weights makes it an exact identity.
class Encoder {
 public:
  static Encoder make(nn::ParamStore& ps, const AttentionConfig& cfg, int ffn,
                      int n_layers, nn::Init& init);

  std::vector<Var> encode(const FeaturePyramid& pyr) const;
  int layer_count() const { return static_cast<int>(layers_.size()); }

 private:
  struct Layer {
    nn::LayerNorm ln_attn, ln_ffn;
    MsDeformAttn attn;
    nn::Linear ffn1, ffn2;
  };
  AttentionConfig cfg_;
  std::vector<Layer> layers_;
};

struct DecoderOptions {
  bool even_keys{false};       // weak supervision: fixed evenly spaced keys
  bool refine{true};           // update references between layers
  bool detach_updates{true};   // stop gradients across layer boundaries
};

struct DecoderLayerOut {
  Var qtilde;  // N x D refined queries (after the shared output norm)
  Var ref_in;  // reference consumed by this layer: N x 1, or N x 2 even-keys
};

// Pre-norm decoder: query self-attention, deformable cross-attention into
// the encoded memory at the current reference points, feed-forward. The
// refine callback receives each layer's outputs and returns the next
// reference (typically from the localization head).
class Decoder {
 public:
  using RefineFn = std::function<Var(int layer, const Var& qtilde, const Var& ref_in)>;

  static Decoder make(nn::ParamStore& ps, const AttentionConfig& cfg, int ffn,
                      int n_layers, nn::Init& init);

  std::vector<DecoderLayerOut> run(const std::vector<Var>& memory,
                                   const Var& init_queries, const Var& init_ref,
                                   const RefineFn& refine,
                                   const DecoderOptions& opt) const;
  int layer_count() const { return static_cast<int>(layers_.size()); }

 private:
  struct Layer {
    nn::LayerNorm ln_self, ln_cross, ln_ffn;
    MultiHeadSelfAttn self_attn;
    MsDeformAttn cross_attn;
    nn::Linear ffn1, ffn2;
  };
  AttentionConfig cfg_;
  std::vector<Layer> layers_;
  nn::LayerNorm out_norm_;
};

// Normalized anchor for row i of a level with T rows: i / (T - 1).
Mat level_reference_points(const std::vector<Var>& levels);

}  // namespace densecap
