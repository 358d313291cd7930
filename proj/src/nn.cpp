#include "densecap/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace densecap::nn {

Var ParamStore::create(const std::string& name, Mat init) {
  if (params_.count(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  }
  Var v(std::move(init), /*requires_grad=*/true);
  params_.emplace(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  }
  return it->second;
}

bool ParamStore::has(const std::string& name) const {
  return params_.count(name) > 0;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

std::map<std::string, Mat> ParamStore::snapshot() const {
  std::map<std::string, Mat> out;
  for (const auto& [name, v] : params_) out.emplace(name, v.value());
  return out;
}

void ParamStore::load(const std::map<std::string, Mat>& values) {
  for (auto& [name, v] : params_) {
    auto it = values.find(name);
    if (it == values.end()) {
      throw std::invalid_argument("ParamStore: missing tensor " + name);
    }
    if (it->second.rows() != v.rows() || it->second.cols() != v.cols()) {
      throw std::invalid_argument("ParamStore: shape mismatch for " + name);
    }
    v.set_value(it->second);
  }
}

Mat Init::uniform(Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

Mat Init::xavier(Eigen::Index rows, Eigen::Index cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return uniform(rows, cols, -bound, bound);
}

Mat Init::normal(Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

Linear Linear::make(ParamStore& ps, const std::string& name, int in, int out,
                    Init& init) {
  Linear l;
  l.W = ps.create(name + ".W", init.xavier(in, out));
  l.b = ps.create(name + ".b", Mat::Zero(1, out));
  return l;
}

Linear Linear::make_zero(ParamStore& ps, const std::string& name, int in,
                         int out) {
  Linear l;
  l.W = ps.create(name + ".W", Mat::Zero(in, out));
  l.b = ps.create(name + ".b", Mat::Zero(1, out));
  return l;
}

LayerNorm LayerNorm::make(ParamStore& ps, const std::string& name, int width) {
  LayerNorm n;
  n.gain = ps.create(name + ".gain", Mat::Ones(1, width));
  n.bias = ps.create(name + ".bias", Mat::Zero(1, width));
  return n;
}

GroupNorm GroupNorm::make(ParamStore& ps, const std::string& name, int width,
                          int groups) {
  if (groups <= 0 || width % groups != 0) {
    throw std::invalid_argument("GroupNorm: groups must divide width");
  }
  GroupNorm n;
  n.gain = ps.create(name + ".gain", Mat::Ones(1, width));
  n.bias = ps.create(name + ".bias", Mat::Zero(1, width));
  n.groups = groups;
  return n;
}

Mlp3 Mlp3::make(ParamStore& ps, const std::string& name, int in, int hidden,
                int out, Init& init) {
  Mlp3 m;
  m.l1 = Linear::make(ps, name + ".l1", in, hidden, init);
  m.l2 = Linear::make(ps, name + ".l2", hidden, hidden, init);
  m.l3 = Linear::make(ps, name + ".l3", hidden, out, init);
  return m;
}

std::pair<Var, Var> LstmCell::step(const Var& x, const Var& h, const Var& c) const {
  Var g = gates(ad::concat_cols({x, h}));
  Var i = ad::sigmoid(ad::slice_cols(g, 0, hidden));
  Var f = ad::sigmoid(ad::slice_cols(g, hidden, hidden));
  Var z = ad::tanh_(ad::slice_cols(g, 2 * hidden, hidden));
  Var o = ad::sigmoid(ad::slice_cols(g, 3 * hidden, hidden));
  Var c_next = ad::add(ad::hadamard(f, c), ad::hadamard(i, z));
  Var h_next = ad::hadamard(o, ad::tanh_(c_next));
  return {h_next, c_next};
}

LstmCell LstmCell::make(ParamStore& ps, const std::string& name, int in,
                        int hidden, Init& init) {
  LstmCell cell;
  cell.hidden = hidden;
  cell.gates = Linear::make(ps, name + ".gates", in + hidden, 4 * hidden, init);
  Mat b = Mat::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();  // forget gate bias
  cell.gates.b.set_value(b);
  return cell;
}

void Adam::step(ParamStore& ps, double max_grad_norm) {
  double scale = 1.0;
  if (max_grad_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, v] : ps.all()) {
      if (v.has_grad()) sq += v.grad().squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > max_grad_norm) scale = max_grad_norm / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, v] : ps.all()) {
    if (!v.has_grad()) continue;
    Mat g = v.grad() * scale;
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_
               .emplace(name, std::make_pair(Mat::Zero(g.rows(), g.cols()),
                                             Mat::Zero(g.rows(), g.cols())))
               .first;
    }
    Mat& m = it->second.first;
    Mat& s = it->second.second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    s = beta2_ * s + (1.0 - beta2_) * g.cwiseProduct(g);
    Mat mhat = m / bc1;
    Mat shat = s / bc2;
    Mat upd =
        (mhat.array() / (shat.array().sqrt() + eps_)).matrix() * lr_;
    v.set_value(v.value() - upd);
  }
}

std::map<std::string, Mat> Adam::state() const {
  std::map<std::string, Mat> out;
  for (const auto& [name, ms] : moments_) {
    out.emplace("adam.m." + name, ms.first);
    out.emplace("adam.v." + name, ms.second);
  }
  Mat t(1, 1);
  t(0, 0) = static_cast<double>(t_);
  out.emplace("adam.t", t);
  return out;
}

void Adam::load_state(const std::map<std::string, Mat>& state) {
  moments_.clear();
  t_ = 0;
  auto it = state.find("adam.t");
  if (it != state.end()) t_ = static_cast<long>(it->second(0, 0));
  for (const auto& [key, m] : state) {
    if (key.rfind("adam.m.", 0) == 0) {
      const std::string name = key.substr(7);
      auto vit = state.find("adam.v." + name);
      if (vit == state.end()) {
        throw std::invalid_argument("Adam: missing second moment for " + name);
      }
      moments_[name] = {m, vit->second};
    }
  }
}

}  // namespace densecap::nn
