#include "densecap/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace densecap {

void AttentionConfig::validate() const {
  if (width <= 0 || heads <= 0 || points <= 0 || levels <= 0) {
    throw std::invalid_argument("AttentionConfig: all fields must be positive");
  }
  if (width % heads != 0) {
    throw std::invalid_argument("AttentionConfig: width must divide by heads");
  }
}

MsDeformAttn MsDeformAttn::make(nn::ParamStore& ps, const std::string& name,
                                const AttentionConfig& cfg, nn::Init& init) {
  cfg.validate();
  MsDeformAttn a;
  a.cfg_ = cfg;
  a.value_proj_ = nn::Linear::make(ps, name + ".value", cfg.width, cfg.width, init);
  a.out_proj_ = nn::Linear::make(ps, name + ".out", cfg.width, cfg.width, init);
  // Offsets start at zero weights with biases spreading the sampling points
  // around the reference; weights start uniform.
  a.offset_proj_ = nn::Linear::make_zero(ps, name + ".offset", cfg.width, cfg.slots());
  a.weight_proj_ = nn::Linear::make_zero(ps, name + ".weight", cfg.width, cfg.slots());
  Mat ob = Mat::Zero(1, cfg.slots());
  for (int h = 0; h < cfg.heads; ++h) {
    const double sign = (h % 2 == 0) ? 1.0 : -1.0;
    for (int l = 0; l < cfg.levels; ++l) {
      for (int k = 0; k < cfg.points; ++k) {
        ob(0, (h * cfg.levels + l) * cfg.points + k) = sign * (k + 1.0);
      }
    }
  }
  a.offset_proj_.b.set_value(ob);
  return a;
}

Var MsDeformAttn::combine(const Var& queries, const Var& pos_norm,
                          const std::vector<Var>& mem_levels) const {
  Var logits = weight_proj_(queries);
  Var weights = ad::softmax_row_blocks(logits, cfg_.levels * cfg_.points);
  std::vector<Var> values;
  values.reserve(mem_levels.size());
  for (const auto& lv : mem_levels) values.push_back(value_proj_(lv));
  Var sampled = ad::deform_sample(values, pos_norm, weights, cfg_.heads);
  return out_proj_(sampled);
}

Var MsDeformAttn::forward(const Var& queries, const Var& ref,
                          const std::vector<Var>& mem_levels) const {
  if (static_cast<int>(mem_levels.size()) != cfg_.levels) {
    throw std::invalid_argument("MsDeformAttn: level count mismatch");
  }
  if (!queries.value().allFinite() || !ref.value().allFinite()) {
    throw std::invalid_argument("MsDeformAttn: non-finite inputs");
  }
  const int S = cfg_.slots();
  // Offsets are predicted in frame units of each level and normalized by
  // that level's length so the learned scale is comparable across levels.
  Eigen::RowVectorXd inv_t(S);
  for (int h = 0; h < cfg_.heads; ++h) {
    for (int l = 0; l < cfg_.levels; ++l) {
      const double tl = static_cast<double>(mem_levels[l].rows());
      for (int k = 0; k < cfg_.points; ++k) {
        inv_t((h * cfg_.levels + l) * cfg_.points + k) = 1.0 / tl;
      }
    }
  }
  Var offsets = ad::scale_cols(offset_proj_(queries), inv_t);
  Var pos = ad::add(ad::broadcast_col(ref, S), offsets);
  return combine(queries, pos, mem_levels);
}

Var MsDeformAttn::forward_even_keys(const Var& queries, const Var& ref_center,
                                    const Var& ref_length,
                                    const std::vector<Var>& mem_levels) const {
  if (static_cast<int>(mem_levels.size()) != cfg_.levels) {
    throw std::invalid_argument("MsDeformAttn: level count mismatch");
  }
  const int S = cfg_.slots();
  const int K = cfg_.points;
  // Fractions -1/2 .. +1/2 of the segment length, endpoints included.
  Eigen::RowVectorXd frac(S);
  for (int h = 0; h < cfg_.heads; ++h) {
    for (int l = 0; l < cfg_.levels; ++l) {
      for (int k = 0; k < K; ++k) {
        const double f =
            K > 1 ? -0.5 + static_cast<double>(k) / (K - 1) : 0.0;
        frac((h * cfg_.levels + l) * K + k) = f;
      }
    }
  }
  Var pos = ad::add(ad::broadcast_col(ref_center, S),
                    ad::scale_cols(ad::broadcast_col(ref_length, S), frac));
  return combine(queries, pos, mem_levels);
}

MultiHeadSelfAttn MultiHeadSelfAttn::make(nn::ParamStore& ps,
                                          const std::string& name, int width,
                                          int heads, nn::Init& init) {
  if (width % heads != 0) {
    throw std::invalid_argument("MultiHeadSelfAttn: width % heads != 0");
  }
  MultiHeadSelfAttn a;
  a.heads = heads;
  a.q = nn::Linear::make(ps, name + ".q", width, width, init);
  a.k = nn::Linear::make(ps, name + ".k", width, width, init);
  a.v = nn::Linear::make(ps, name + ".v", width, width, init);
  a.o = nn::Linear::make(ps, name + ".o", width, width, init);
  return a;
}

Var MultiHeadSelfAttn::operator()(const Var& x) const {
  const Eigen::Index D = x.cols();
  const Eigen::Index dh = D / heads;
  Var Q = q(x), K = k(x), V = v(x);
  std::vector<Var> outs;
  outs.reserve(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(Q, h * dh, dh);
    Var kh = ad::slice_cols(K, h * dh, dh);
    Var vh = ad::slice_cols(V, h * dh, dh);
    Var scores = ad::scalar_mul(ad::matmul(qh, ad::transpose(kh)), scale);
    outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  return o(ad::concat_cols(outs));
}

Mat level_reference_points(const std::vector<Var>& levels) {
  Eigen::Index total = 0;
  for (const auto& lv : levels) total += lv.rows();
  Mat ref(total, 1);
  Eigen::Index r = 0;
  for (const auto& lv : levels) {
    const Eigen::Index T = lv.rows();
    for (Eigen::Index i = 0; i < T; ++i) {
      ref(r++, 0) = T > 1 ? static_cast<double>(i) / (T - 1) : 0.5;
    }
  }
  return ref;
}

Encoder Encoder::make(nn::ParamStore& ps, const AttentionConfig& cfg, int ffn,
                      int n_layers, nn::Init& init) {
  cfg.validate();
  Encoder e;
  e.cfg_ = cfg;
  for (int i = 0; i < n_layers; ++i) {
    const std::string base = "encoder.layer" + std::to_string(i);
    Layer layer{
        nn::LayerNorm::make(ps, base + ".ln_attn", cfg.width),
        nn::LayerNorm::make(ps, base + ".ln_ffn", cfg.width),
        MsDeformAttn::make(ps, base + ".attn", cfg, init),
        nn::Linear::make(ps, base + ".ffn1", cfg.width, ffn, init),
        nn::Linear::make(ps, base + ".ffn2", ffn, cfg.width, init),
    };
    e.layers_.push_back(std::move(layer));
  }
  return e;
}

std::vector<Var> Encoder::encode(const FeaturePyramid& pyr) const {
  if (static_cast<int>(pyr.levels.size()) != cfg_.levels) {
    throw std::invalid_argument("Encoder: pyramid level count mismatch");
  }
  if (pyr.pos.size() != pyr.levels.size()) {
    throw std::invalid_argument("Encoder: pyramid lacks positional embeddings");
  }
  std::vector<Eigen::Index> sizes;
  for (const auto& lv : pyr.levels) sizes.push_back(lv.rows());

  Var x = ad::concat_rows(pyr.levels);
  Var pos = ad::concat_rows(pyr.pos);
  Var ref = ad::constant(level_reference_points(pyr.levels));

  for (const auto& layer : layers_) {
    Var normed = layer.ln_attn(x);
    // Per-level content views feed the value projection; positional
    // embeddings only steer offsets and weights.
    std::vector<Var> mem;
    Eigen::Index r = 0;
    for (Eigen::Index s : sizes) {
      mem.push_back(ad::slice_rows(normed, r, s));
      r += s;
    }
    Var queries = ad::add(normed, pos);
    x = ad::add(x, layer.attn.forward(queries, ref, mem));
    Var f = layer.ln_ffn(x);
    x = ad::add(x, layer.ffn2(ad::relu(layer.ffn1(f))));
  }

  std::vector<Var> out;
  Eigen::Index r = 0;
  for (Eigen::Index s : sizes) {
    out.push_back(ad::slice_rows(x, r, s));
    r += s;
  }
  return out;
}

Decoder Decoder::make(nn::ParamStore& ps, const AttentionConfig& cfg, int ffn,
                      int n_layers, nn::Init& init) {
  cfg.validate();
  Decoder d;
  d.cfg_ = cfg;
  for (int i = 0; i < n_layers; ++i) {
    const std::string base = "decoder.layer" + std::to_string(i);
    Layer layer{
        nn::LayerNorm::make(ps, base + ".ln_self", cfg.width),
        nn::LayerNorm::make(ps, base + ".ln_cross", cfg.width),
        nn::LayerNorm::make(ps, base + ".ln_ffn", cfg.width),
        MultiHeadSelfAttn::make(ps, base + ".self", cfg.width, cfg.heads, init),
        MsDeformAttn::make(ps, base + ".cross", cfg, init),
        nn::Linear::make(ps, base + ".ffn1", cfg.width, ffn, init),
        nn::Linear::make(ps, base + ".ffn2", ffn, cfg.width, init),
    };
    d.layers_.push_back(std::move(layer));
  }
  d.out_norm_ = nn::LayerNorm::make(ps, "decoder.out_norm", cfg.width);
  return d;
}

std::vector<DecoderLayerOut> Decoder::run(const std::vector<Var>& memory,
                                          const Var& init_queries,
                                          const Var& init_ref,
                                          const RefineFn& refine,
                                          const DecoderOptions& opt) const {
  if (static_cast<int>(memory.size()) != cfg_.levels) {
    throw std::invalid_argument("Decoder: memory level count mismatch");
  }
  std::vector<DecoderLayerOut> outs;
  Var x = init_queries;
  Var ref = init_ref;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    x = ad::add(x, layer.self_attn(layer.ln_self(x)));
    Var c = layer.ln_cross(x);
    Var cross;
    if (opt.even_keys) {
      cross = layer.cross_attn.forward_even_keys(
          c, ad::slice_cols(ref, 0, 1), ad::slice_cols(ref, 1, 1), memory);
    } else {
      cross = layer.cross_attn.forward(c, ref, memory);
    }
    x = ad::add(x, cross);
    Var f = layer.ln_ffn(x);
    x = ad::add(x, layer.ffn2(ad::relu(layer.ffn1(f))));

    DecoderLayerOut out;
    out.qtilde = out_norm_(x);
    out.ref_in = ref;
    outs.push_back(out);

    if (opt.refine && refine) {
      Var next = refine(static_cast<int>(i), out.qtilde, ref);
      ref = opt.detach_updates ? ad::detach(next) : next;
    }
  }
  return outs;
}

}  // namespace densecap
