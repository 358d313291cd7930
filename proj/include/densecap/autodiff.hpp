#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "densecap/geometry.hpp"

namespace densecap::ad {

using Real = double;
using Mat = Eigen::MatrixXd;

// One node of the reverse-mode tape. `value` is fixed once the node is
// created; `grad` is allocated lazily during backward().
struct Node {
  Mat value;
  Mat grad;
  bool requires_grad{false};
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad (and value where needed) and accumulates into parents.
  std::function<void(Node&)> backprop;
};

// Cheap value-semantics handle onto a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(Mat value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Mat& value() const { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }

  // Handles are shallow; these mutate the shared node (parameters only).
  void zero_grad() const { node_->grad.resize(0, 0); }
  void set_value(const Mat& v) const { node_->value = v; }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Mat value);

// ---- elementwise / arithmetic ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var hadamard(const Var& a, const Var& b);
Var scalar_mul(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh_(const Var& a);
Var relu(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);
Var clamp_min(const Var& a, double lo);
Var inverse_sigmoid(const Var& a, double eps = 1e-6);

// ---- linear algebra / shaping ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_rowvec(const Var& x, const Var& row);    // broadcast 1xC over rows
Var broadcast_col(const Var& col, Eigen::Index n);  // Rx1 -> Rxn
Var scale_cols(const Var& x, const Eigen::RowVectorXd& s);  // constant scales
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& x, Eigen::Index r0, Eigen::Index n);
Var slice_cols(const Var& x, Eigen::Index c0, Eigen::Index n);
Var gather_rows(const Var& x, const std::vector<int>& rows);
Var rows_pick_cols(const Var& x, const std::vector<int>& cols);  // Rx1
Var max_rows(const Var& x);  // column-wise max over rows -> 1xC
Var sum_all(const Var& x);   // 1x1
Var mean_all(const Var& x);  // 1x1

// ---- normalization / softmax ----
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);
// Softmax over each contiguous block of `block` columns within every row.
Var softmax_row_blocks(const Var& x, Eigen::Index block);
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var group_norm_rows(const Var& x, const Var& gain, const Var& bias, int groups,
                    double eps = 1e-5);

// ---- task-specific fused ops ----

// Temporal im2col for a stride-2 kernel-3 convolution with symmetric padding
// of one frame: row t of the output is [x[2t-1], x[2t], x[2t+1]] (zero padded
// at the edges), so the output has ceil(T/2) rows and 3C columns.
Var unfold_k3s2(const Var& x);

// Multi-scale deformable sampling with per-slot weights. `levels` holds L
// value matrices (T_l x D with D = heads * head_dim). `pos_norm` and
// `weights` are Q x (heads*L*K); slot (h,l,k) lives at column (h*L+l)*K+k.
// Positions are normalized to [0,1] and mapped onto level l as p*(T_l-1)
// with edge clamping; samples are read by linear interpolation. The output
// is Q x D where the block of head h is the weighted sum of its K*L samples.
Var deform_sample(const std::vector<Var>& levels, const Var& pos_norm,
                  const Var& weights, int heads);

// Gathers the raw sampled features instead of reducing them: `pos_norm` is
// 1 x (L*K) and the output stacks the samples as (L*K) x D.
Var deform_gather(const std::vector<Var>& levels, const Var& pos_norm);

// Focal loss per row from logits. targets[i] in {0,1}; probabilities are
// clamped to [1e-8, 1-1e-8] before the log.
Var focal_from_logits(const Var& logits, const std::vector<int>& targets,
                      double alpha, double gamma);

// Row-wise generalized IOU of predicted (center, length) pairs against fixed
// ground-truth segments. Endpoints are deliberately left unclamped so the
// gradient stays alive when a prediction overshoots [0,1].
Var giou_against(const Var& center, const Var& length,
                 const std::vector<TemporalSegment>& gts);

Var detach(const Var& x);

// Reverse pass from a 1x1 root. Touches only the subgraph that requires
// gradients; parameter grads accumulate across calls until zeroed.
void backward(const Var& root);

}  // namespace densecap::ad
