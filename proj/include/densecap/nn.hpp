#pragma once

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "densecap/autodiff.hpp"

namespace densecap::nn {

using ad::Mat;
using ad::Var;

// Name-keyed registry of trainable tensors. Iteration order is the name
// order, which keeps optimizer updates and checkpoints deterministic.
class ParamStore {
 public:
  Var create(const std::string& name, Mat init);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::map<std::string, Var>& all() const { return params_; }
  void zero_grad();
  std::map<std::string, Mat> snapshot() const;
  // Assigns values for every registered parameter; shapes must match.
  void load(const std::map<std::string, Mat>& values);
  size_t count() const { return params_.size(); }

 private:
  std::map<std::string, Var> params_;
};

// Seeded weight initializer.
struct Init {
  std::mt19937_64 rng;
  explicit Init(uint64_t seed) : rng(seed) {}

  Mat uniform(Eigen::Index rows, Eigen::Index cols, double lo, double hi);
  Mat xavier(Eigen::Index rows, Eigen::Index cols);
  Mat normal(Eigen::Index rows, Eigen::Index cols, double stddev);
};

// y = x W + b for row-major activations (R x in -> R x out).
struct Linear {
  Var W, b;
  Var operator()(const Var& x) const { return ad::add_rowvec(ad::matmul(x, W), b); }
  static Linear make(ParamStore& ps, const std::string& name, int in, int out,
                     Init& init);
  static Linear make_zero(ParamStore& ps, const std::string& name, int in, int out);
};

struct LayerNorm {
  Var gain, bias;
  Var operator()(const Var& x) const { return ad::layer_norm_rows(x, gain, bias); }
  static LayerNorm make(ParamStore& ps, const std::string& name, int width);
};

struct GroupNorm {
  Var gain, bias;
  int groups{1};
  Var operator()(const Var& x) const {
    return ad::group_norm_rows(x, gain, bias, groups);
  }
  static GroupNorm make(ParamStore& ps, const std::string& name, int width,
                        int groups);
};

// Three-layer perceptron with ReLU between layers.
struct Mlp3 {
  Linear l1, l2, l3;
  Var operator()(const Var& x) const {
    return l3(ad::relu(l2(ad::relu(l1(x)))));
  }
  static Mlp3 make(ParamStore& ps, const std::string& name, int in, int hidden,
                   int out, Init& init);
};

// Single LSTM cell; gate order [input, forget, cell, output]. The forget
// gate bias starts at 1.
struct LstmCell {
  Linear gates;  // (R x (in+hidden)) -> (R x 4*hidden)
  int hidden{0};
  // Returns (h', c').
  std::pair<Var, Var> step(const Var& x, const Var& h, const Var& c) const;
  static LstmCell make(ParamStore& ps, const std::string& name, int in,
                       int hidden, Init& init);
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update using the accumulated grads, then leaves grads intact
  // (callers zero them). Optionally clips the global grad norm first.
  void step(ParamStore& ps, double max_grad_norm = 0.0);

  long steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }

  // Moment tensors plus the step counter, for checkpointing.
  std::map<std::string, Mat> state() const;
  void load_state(const std::map<std::string, Mat>& state);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments_;
};

}  // namespace densecap::nn
