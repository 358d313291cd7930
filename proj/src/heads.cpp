#include "densecap/heads.hpp"

#include <cmath>
#include <stdexcept>

namespace densecap {

LocalizationHead LocalizationHead::make(nn::ParamStore& ps, int width,
                                        nn::Init& init) {
  LocalizationHead h;
  h.box_ = nn::Mlp3::make(ps, "head.loc.box", width, width, 2, init);
  // Start as a no-op refinement with short segments: zero final weights,
  // bias picks length sigmoid(-1.386) ~ 0.2.
  h.box_.l3.W.set_value(Mat::Zero(width, 2));
  Mat bb(1, 2);
  bb << 0.0, -1.386;
  h.box_.l3.b.set_value(bb);
  h.cls_ = nn::Linear::make(ps, "head.loc.cls", width, 1, init);
  Mat cb(1, 1);
  cb(0, 0) = -2.197;  // prior foreground probability ~ 0.1
  h.cls_.b.set_value(cb);
  return h;
}

LocalizationHead::Out LocalizationHead::forward(const Var& qtilde,
                                                const Var& ref) const {
  Var d = box_(qtilde);
  Var delta_c = ad::slice_cols(d, 0, 1);
  Var raw_len = ad::slice_cols(d, 1, 1);
  Out out;
  Var ref_c = ref.cols() > 1 ? ad::slice_cols(ref, 0, 1) : ref;
  out.center = ad::sigmoid(ad::add(ad::inverse_sigmoid(ref_c), delta_c));
  if (ref.cols() > 1) {
    Var ref_l = ad::slice_cols(ref, 1, 1);
    out.length = ad::sigmoid(ad::add(ad::inverse_sigmoid(ref_l), raw_len));
  } else {
    out.length = ad::sigmoid(raw_len);
  }
  out.conf_logit = cls_(qtilde);
  return out;
}

std::vector<EventDetection> to_detections(const LocalizationHead::Out& out) {
  std::vector<EventDetection> dets;
  const Eigen::Index N = out.center.rows();
  dets.reserve(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    EventDetection d;
    d.segment = segment_from_center_length<double>(
        {out.center.value()(i, 0), out.length.value()(i, 0)});
    const double logit = out.conf_logit.value()(i, 0);
    d.loc_confidence = 1.0 / (1.0 + std::exp(-logit));
    d.query_index = static_cast<int>(i);
    dets.push_back(d);
  }
  return dets;
}

EventCounter EventCounter::make(nn::ParamStore& ps, int width, int max_count,
                                nn::Init& init) {
  if (max_count < 1) throw std::invalid_argument("EventCounter: max_count >= 1");
  EventCounter c;
  c.max_count_ = max_count;
  c.fc_ = nn::Linear::make(ps, "head.counter", width, max_count + 1, init);
  return c;
}

Var EventCounter::forward(const Var& qtilde) const {
  return fc_(ad::max_rows(qtilde));
}

CountPrediction EventCounter::predict(const Var& logits) const {
  CountPrediction p;
  const Eigen::RowVectorXd row = logits.value().row(0);
  const double m = row.maxCoeff();
  Eigen::VectorXd d = (row.array() - m).exp().transpose();
  d /= d.sum();
  p.distribution = d;
  Eigen::Index arg = 0;
  d.maxCoeff(&arg);
  p.predicted_count = std::max<int>(1, static_cast<int>(arg));
  return p;
}

namespace {

Var embed_token(const Var& table, int token) {
  return ad::gather_rows(table, {token});
}

// Shared greedy loop; `step` advances the recurrent state and returns the
// next word distribution as a value-only row.
template <typename StepFn>
CaptionHypothesis greedy_loop(const CaptionConfig& cfg, StepFn step) {
  CaptionHypothesis hyp;
  int prev = kBosId;
  for (int t = 0; t < cfg.max_len; ++t) {
    Eigen::RowVectorXd probs = step(prev);
    Eigen::Index arg = 0;
    probs.maxCoeff(&arg);
    const int tok = static_cast<int>(arg);
    hyp.tokens.push_back(tok);
    hyp.token_probs.push_back(probs(tok));
    if (tok == kEosId) return hyp;
    prev = tok;
  }
  // Out of budget: force the end token and record the truncation.
  Eigen::RowVectorXd probs = step(prev);
  hyp.tokens.push_back(kEosId);
  hyp.token_probs.push_back(probs(kEosId));
  hyp.truncated = true;
  return hyp;
}

Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::RowVectorXd p = (logits.array() - m).exp();
  p /= p.sum();
  return p;
}

}  // namespace

std::unique_ptr<LightCaptioner> LightCaptioner::make(nn::ParamStore& ps,
                                                     const CaptionConfig& cfg,
                                                     int query_width,
                                                     nn::Init& init) {
  auto c = std::make_unique<LightCaptioner>();
  c->cfg_ = cfg;
  c->embed_ = ps.create("head.cap.embed",
                        init.normal(cfg.vocab_size, cfg.word_dim, 0.1));
  c->lstm_ = nn::LstmCell::make(ps, "head.cap.lstm",
                                query_width + cfg.word_dim, cfg.hidden, init);
  c->out_ = nn::Linear::make(ps, "head.cap.out", cfg.hidden, cfg.vocab_size, init);
  return c;
}

Var LightCaptioner::teacher_force(const Var& query_row, const Var& /*ref_row*/,
                                  const std::vector<Var>& /*memory*/,
                                  const std::vector<int>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("teacher_force: empty caption");
  Var h = ad::constant(Mat::Zero(1, cfg_.hidden));
  Var c = ad::constant(Mat::Zero(1, cfg_.hidden));
  int prev = kBosId;
  std::vector<Var> logps;
  for (int tok : tokens) {
    Var x = ad::concat_cols({query_row, embed_token(embed_, prev)});
    std::tie(h, c) = lstm_.step(x, h, c);
    Var lp = ad::log_softmax_rows(out_(h));
    logps.push_back(ad::rows_pick_cols(lp, {tok}));
    prev = tok;
  }
  return ad::concat_rows(logps);
}

CaptionHypothesis LightCaptioner::greedy(const Var& query_row,
                                         const Var& /*ref_row*/,
                                         const std::vector<Var>& /*memory*/) const {
  Var h = ad::constant(Mat::Zero(1, cfg_.hidden));
  Var c = ad::constant(Mat::Zero(1, cfg_.hidden));
  return greedy_loop(cfg_, [&](int prev) {
    Var x = ad::concat_cols({query_row, embed_token(embed_, prev)});
    std::tie(h, c) = lstm_.step(x, h, c);
    return softmax_row(out_(h).value().row(0));
  });
}

std::unique_ptr<DsaCaptioner> DsaCaptioner::make(nn::ParamStore& ps,
                                                 const CaptionConfig& cfg,
                                                 int query_width, int levels,
                                                 int points, nn::Init& init) {
  auto c = std::make_unique<DsaCaptioner>();
  c->cfg_ = cfg;
  c->levels_ = levels;
  c->points_ = points;
  c->query_width_ = query_width;
  c->embed_ = ps.create("head.cap.embed",
                        init.normal(cfg.vocab_size, cfg.word_dim, 0.1));
  const int ctx_in = cfg.hidden + query_width;
  c->offset_ = nn::Linear::make_zero(ps, "head.cap.offset", ctx_in,
                                     levels * points);
  Mat ob(1, levels * points);
  for (int l = 0; l < levels; ++l) {
    for (int k = 0; k < points; ++k) {
      ob(0, l * points + k) = (k % 2 == 0 ? 1.0 : -1.0) * (1.0 + k / 2);
    }
  }
  c->offset_.b.set_value(ob);
  c->att_key_ = nn::Linear::make(ps, "head.cap.att_key", query_width,
                                 cfg.hidden, init);
  c->att_query_ = nn::Linear::make(ps, "head.cap.att_query", ctx_in,
                                   cfg.hidden, init);
  c->att_value_ = nn::Linear::make(ps, "head.cap.att_value", query_width,
                                   query_width, init);
  c->att_score_ = ps.create("head.cap.att_score",
                            init.xavier(cfg.hidden, 1));
  c->lstm_ = nn::LstmCell::make(
      ps, "head.cap.lstm", query_width + query_width + cfg.word_dim,
      cfg.hidden, init);
  c->out_ = nn::Linear::make(ps, "head.cap.out", cfg.hidden, cfg.vocab_size, init);
  return c;
}

Var DsaCaptioner::context(const Var& h_prev, const Var& query_row,
                          const Var& ref_row,
                          const std::vector<Var>& memory) const {
  if (static_cast<int>(memory.size()) != levels_) {
    throw std::invalid_argument("DsaCaptioner: memory level count mismatch");
  }
  const int S = levels_ * points_;
  Var ctx = ad::concat_cols({h_prev, query_row});
  Eigen::RowVectorXd inv_t(S);
  for (int l = 0; l < levels_; ++l) {
    for (int k = 0; k < points_; ++k) {
      inv_t(l * points_ + k) = 1.0 / static_cast<double>(memory[l].rows());
    }
  }
  Var offsets = ad::scale_cols(offset_(ctx), inv_t);
  Var pos = ad::add(ad::broadcast_col(ref_row, S), offsets);
  Var samples = ad::deform_gather(memory, pos);  // S x D

  Var scores = ad::matmul(
      ad::tanh_(ad::add_rowvec(att_key_(samples), att_query_(ctx))),
      att_score_);                                   // S x 1
  Var alpha = ad::softmax_rows(ad::transpose(scores));  // 1 x S
  last_attention_.push_back(alpha.value().row(0));
  return ad::matmul(alpha, att_value_(samples));  // 1 x D
}

Var DsaCaptioner::teacher_force(const Var& query_row, const Var& ref_row,
                                const std::vector<Var>& memory,
                                const std::vector<int>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("teacher_force: empty caption");
  last_attention_.clear();
  Var h = ad::constant(Mat::Zero(1, cfg_.hidden));
  Var c = ad::constant(Mat::Zero(1, cfg_.hidden));
  int prev = kBosId;
  std::vector<Var> logps;
  for (int tok : tokens) {
    Var z = context(h, query_row, ref_row, memory);
    Var x = ad::concat_cols({z, query_row, embed_token(embed_, prev)});
    std::tie(h, c) = lstm_.step(x, h, c);
    Var lp = ad::log_softmax_rows(out_(h));
    logps.push_back(ad::rows_pick_cols(lp, {tok}));
    prev = tok;
  }
  return ad::concat_rows(logps);
}

CaptionHypothesis DsaCaptioner::greedy(const Var& query_row, const Var& ref_row,
                                       const std::vector<Var>& memory) const {
  last_attention_.clear();
  Var h = ad::constant(Mat::Zero(1, cfg_.hidden));
  Var c = ad::constant(Mat::Zero(1, cfg_.hidden));
  return greedy_loop(cfg_, [&](int prev) {
    Var z = context(h, query_row, ref_row, memory);
    Var x = ad::concat_cols({z, query_row, embed_token(embed_, prev)});
    std::tie(h, c) = lstm_.step(x, h, c);
    return softmax_row(out_(h).value().row(0));
  });
}

std::unique_ptr<Captioner> make_captioner(const std::string& kind,
                                          nn::ParamStore& ps,
                                          const CaptionConfig& cfg,
                                          int query_width, int levels,
                                          int points, nn::Init& init) {
  if (kind == "light") {
    return LightCaptioner::make(ps, cfg, query_width, init);
  }
  if (kind == "dsa") {
    return DsaCaptioner::make(ps, cfg, query_width, levels, points, init);
  }
  throw std::invalid_argument("unknown caption head kind: " + kind);
}

}  // namespace densecap
