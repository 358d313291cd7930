#include "densecap/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace densecap::ad {

namespace {

void accum(const std::shared_ptr<Node>& n, const Mat& g) {
  if (!n->requires_grad) return;
  if (n->grad.size() == 0) n->grad = Mat::Zero(n->value.rows(), n->value.cols());
  n->grad += g;
}

Mat& grad_buffer(const std::shared_ptr<Node>& n) {
  if (n->grad.size() == 0) n->grad = Mat::Zero(n->value.rows(), n->value.cols());
  return n->grad;
}

bool any_requires_grad(const std::vector<Var>& parents) {
  for (const auto& p : parents) {
    if (p.requires_grad()) return true;
  }
  return false;
}

Var make(Mat value, const std::vector<Var>& parents,
         std::function<void(Node&)> backprop) {
  Var out(std::move(value), false);
  if (any_requires_grad(parents)) {
    out.node()->requires_grad = true;
    auto& ps = out.node()->parents;
    ps.reserve(parents.size());
    for (const auto& p : parents) ps.push_back(p.node());
    out.node()->backprop = std::move(backprop);
  }
  return out;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var constant(Mat value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto an = a.node(), bn = b.node();
  return make(a.value() + b.value(), {a, b}, [an, bn](Node& n) {
    accum(an, n.grad);
    accum(bn, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto an = a.node(), bn = b.node();
  return make(a.value() - b.value(), {a, b}, [an, bn](Node& n) {
    accum(an, n.grad);
    accum(bn, -n.grad);
  });
}

Var neg(const Var& a) {
  auto an = a.node();
  return make(-a.value(), {a}, [an](Node& n) { accum(an, -n.grad); });
}

Var hadamard(const Var& a, const Var& b) {
  check_same_shape(a, b, "hadamard");
  auto an = a.node(), bn = b.node();
  return make(a.value().cwiseProduct(b.value()), {a, b}, [an, bn](Node& n) {
    accum(an, n.grad.cwiseProduct(bn->value));
    accum(bn, n.grad.cwiseProduct(an->value));
  });
}

Var scalar_mul(const Var& a, double s) {
  auto an = a.node();
  return make(a.value() * s, {a}, [an, s](Node& n) { accum(an, n.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  auto an = a.node();
  return make(a.value().array() + s, {a}, [an](Node& n) { accum(an, n.grad); });
}

Var sigmoid(const Var& a) {
  Mat y = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  auto an = a.node();
  return make(std::move(y), {a}, [an](Node& n) {
    accum(an, n.grad.cwiseProduct(
                  (n.value.array() * (1.0 - n.value.array())).matrix()));
  });
}

Var tanh_(const Var& a) {
  Mat y = a.value().array().tanh();
  auto an = a.node();
  return make(std::move(y), {a}, [an](Node& n) {
    accum(an, n.grad.cwiseProduct((1.0 - n.value.array().square()).matrix()));
  });
}

Var relu(const Var& a) {
  Mat y = a.value().cwiseMax(0.0);
  auto an = a.node();
  return make(std::move(y), {a}, [an](Node& n) {
    accum(an, n.grad.cwiseProduct(
                  (an->value.array() > 0.0).cast<double>().matrix()));
  });
}

Var exp_(const Var& a) {
  Mat y = a.value().array().exp();
  auto an = a.node();
  return make(std::move(y), {a},
              [an](Node& n) { accum(an, n.grad.cwiseProduct(n.value)); });
}

Var log_(const Var& a) {
  Mat y = a.value().array().log();
  auto an = a.node();
  return make(std::move(y), {a}, [an](Node& n) {
    accum(an, n.grad.cwiseQuotient(an->value));
  });
}

Var clamp_min(const Var& a, double lo) {
  Mat y = a.value().cwiseMax(lo);
  auto an = a.node();
  return make(std::move(y), {a}, [an, lo](Node& n) {
    accum(an, n.grad.cwiseProduct(
                  (an->value.array() > lo).cast<double>().matrix()));
  });
}

Var inverse_sigmoid(const Var& a, double eps) {
  Mat p = a.value().cwiseMax(eps).cwiseMin(1.0 - eps);
  Mat y = (p.array() / (1.0 - p.array())).log();
  auto an = a.node();
  return make(std::move(y), {a}, [an, eps](Node& n) {
    Mat d(an->value.rows(), an->value.cols());
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      for (Eigen::Index i = 0; i < d.rows(); ++i) {
        const double x = an->value(i, j);
        d(i, j) = (x > eps && x < 1.0 - eps) ? 1.0 / (x * (1.0 - x)) : 0.0;
      }
    }
    accum(an, n.grad.cwiseProduct(d));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims");
  auto an = a.node(), bn = b.node();
  return make(a.value() * b.value(), {a, b}, [an, bn](Node& n) {
    if (an->requires_grad) accum(an, n.grad * bn->value.transpose());
    if (bn->requires_grad) accum(bn, an->value.transpose() * n.grad);
  });
}

Var transpose(const Var& a) {
  auto an = a.node();
  return make(a.value().transpose(), {a},
              [an](Node& n) { accum(an, n.grad.transpose()); });
}

Var add_rowvec(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw std::invalid_argument("add_rowvec: row must be 1 x cols(x)");
  }
  Mat y = x.value();
  y.rowwise() += Eigen::RowVectorXd(row.value().row(0));
  auto xn = x.node(), rn = row.node();
  return make(std::move(y), {x, row}, [xn, rn](Node& n) {
    accum(xn, n.grad);
    accum(rn, n.grad.colwise().sum());
  });
}

Var broadcast_col(const Var& col, Eigen::Index n) {
  if (col.cols() != 1) throw std::invalid_argument("broadcast_col: need Rx1");
  Mat y = col.value().replicate(1, n);
  auto cn = col.node();
  return make(std::move(y), {col},
              [cn](Node& n2) { accum(cn, n2.grad.rowwise().sum()); });
}

Var scale_cols(const Var& x, const Eigen::RowVectorXd& s) {
  if (s.size() != x.cols()) throw std::invalid_argument("scale_cols: size");
  Mat y = x.value().array().rowwise() * s.array();
  auto xn = x.node();
  return make(std::move(y), {x}, [xn, s](Node& n) {
    accum(xn, (n.grad.array().rowwise() * s.array()).matrix());
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: cols");
    rows += p.rows();
  }
  Mat y(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<Eigen::Index> offs;
  r = 0;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    offs.push_back(r);
    r += p.rows();
  }
  return make(std::move(y), parts, [nodes, offs](Node& n) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      accum(nodes[i], n.grad.middleRows(offs[i], nodes[i]->value.rows()));
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: rows");
    cols += p.cols();
  }
  Mat y(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<Eigen::Index> offs;
  c = 0;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    offs.push_back(c);
    c += p.cols();
  }
  return make(std::move(y), parts, [nodes, offs](Node& n) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      accum(nodes[i], n.grad.middleCols(offs[i], nodes[i]->value.cols()));
    }
  });
}

Var slice_rows(const Var& x, Eigen::Index r0, Eigen::Index n) {
  if (r0 < 0 || r0 + n > x.rows()) throw std::invalid_argument("slice_rows");
  auto xn = x.node();
  return make(x.value().middleRows(r0, n), {x}, [xn, r0, n](Node& out) {
    if (!xn->requires_grad) return;
    grad_buffer(xn).middleRows(r0, n) += out.grad;
  });
}

Var slice_cols(const Var& x, Eigen::Index c0, Eigen::Index n) {
  if (c0 < 0 || c0 + n > x.cols()) throw std::invalid_argument("slice_cols");
  auto xn = x.node();
  return make(x.value().middleCols(c0, n), {x}, [xn, c0, n](Node& out) {
    if (!xn->requires_grad) return;
    grad_buffer(xn).middleCols(c0, n) += out.grad;
  });
}

Var gather_rows(const Var& x, const std::vector<int>& rows) {
  Mat y(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) {
      throw std::invalid_argument("gather_rows: index out of range");
    }
    y.row(static_cast<Eigen::Index>(i)) = x.value().row(rows[i]);
  }
  auto xn = x.node();
  return make(std::move(y), {x}, [xn, rows](Node& n) {
    if (!xn->requires_grad) return;
    Mat& g = grad_buffer(xn);
    for (size_t i = 0; i < rows.size(); ++i) {
      g.row(rows[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var rows_pick_cols(const Var& x, const std::vector<int>& cols) {
  if (static_cast<Eigen::Index>(cols.size()) != x.rows()) {
    throw std::invalid_argument("rows_pick_cols: one column index per row");
  }
  Mat y(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (cols[i] < 0 || cols[i] >= x.cols()) {
      throw std::invalid_argument("rows_pick_cols: index out of range");
    }
    y(i, 0) = x.value()(i, cols[i]);
  }
  auto xn = x.node();
  return make(std::move(y), {x}, [xn, cols](Node& n) {
    if (!xn->requires_grad) return;
    Mat& g = grad_buffer(xn);
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      g(i, cols[i]) += n.grad(i, 0);
    }
  });
}

Var max_rows(const Var& x) {
  if (x.rows() < 1) throw std::invalid_argument("max_rows: empty");
  Mat y(1, x.cols());
  std::vector<Eigen::Index> arg(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::Index r;
    y(0, j) = x.value().col(j).maxCoeff(&r);
    arg[j] = r;  // first maximal row on ties
  }
  auto xn = x.node();
  return make(std::move(y), {x}, [xn, arg](Node& n) {
    if (!xn->requires_grad) return;
    Mat& g = grad_buffer(xn);
    for (Eigen::Index j = 0; j < n.value.cols(); ++j) {
      g(arg[j], j) += n.grad(0, j);
    }
  });
}

Var sum_all(const Var& x) {
  Mat y(1, 1);
  y(0, 0) = x.value().sum();
  auto xn = x.node();
  return make(std::move(y), {x}, [xn](Node& n) {
    accum(xn, Mat::Constant(xn->value.rows(), xn->value.cols(), n.grad(0, 0)));
  });
}

Var mean_all(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x.rows() * x.cols());
  Mat y(1, 1);
  y(0, 0) = x.value().sum() * inv;
  auto xn = x.node();
  return make(std::move(y), {x}, [xn, inv](Node& n) {
    accum(xn, Mat::Constant(xn->value.rows(), xn->value.cols(),
                            n.grad(0, 0) * inv));
  });
}

Var softmax_rows(const Var& x) { return softmax_row_blocks(x, x.cols()); }

Var softmax_row_blocks(const Var& x, Eigen::Index block) {
  if (block <= 0 || x.cols() % block != 0) {
    throw std::invalid_argument("softmax_row_blocks: block must divide cols");
  }
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index b = 0; b < x.cols(); b += block) {
      const double m = x.value().row(i).segment(b, block).maxCoeff();
      Eigen::RowVectorXd e =
          (x.value().row(i).segment(b, block).array() - m).exp();
      y.row(i).segment(b, block) = e / e.sum();
    }
  }
  auto xn = x.node();
  return make(std::move(y), {x}, [xn, block](Node& n) {
    if (!xn->requires_grad) return;
    Mat d(n.value.rows(), n.value.cols());
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      for (Eigen::Index b = 0; b < n.value.cols(); b += block) {
        auto p = n.value.row(i).segment(b, block);
        auto g = n.grad.row(i).segment(b, block);
        const double dot = (p.array() * g.array()).sum();
        d.row(i).segment(b, block) = (p.array() * (g.array() - dot)).matrix();
      }
    }
    accum(xn, d);
  });
}

Var log_softmax_rows(const Var& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.value().row(i).maxCoeff();
    const double lse = std::log((x.value().row(i).array() - m).exp().sum()) + m;
    y.row(i) = x.value().row(i).array() - lse;
  }
  auto xn = x.node();
  return make(std::move(y), {x}, [xn](Node& n) {
    if (!xn->requires_grad) return;
    Mat d(n.value.rows(), n.value.cols());
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      const double gsum = n.grad.row(i).sum();
      d.row(i) = n.grad.row(i).array() - n.value.row(i).array().exp() * gsum;
    }
    accum(xn, d);
  });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  return group_norm_rows(x, gain, bias, 1, eps);
}

Var group_norm_rows(const Var& x, const Var& gain, const Var& bias, int groups,
                    double eps) {
  const Eigen::Index C = x.cols();
  if (gain.rows() != 1 || gain.cols() != C || bias.rows() != 1 || bias.cols() != C) {
    throw std::invalid_argument("group_norm_rows: gain/bias must be 1 x cols");
  }
  if (groups <= 0 || C % groups != 0) {
    throw std::invalid_argument("group_norm_rows: groups must divide width");
  }
  const Eigen::Index gw = C / groups;

  Mat xhat(x.rows(), C);
  Mat inv_std(x.rows(), groups);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (int g = 0; g < groups; ++g) {
      auto seg = x.value().row(i).segment(g * gw, gw);
      const double mu = seg.mean();
      const double var = (seg.array() - mu).square().mean();
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std(i, g) = is;
      xhat.row(i).segment(g * gw, gw) = (seg.array() - mu) * is;
    }
  }
  Mat y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.array().rowwise() += bias.value().row(0).array();

  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make(std::move(y), {x, gain, bias},
              [xn, gn, bn, xhat, inv_std, groups, gw](Node& n) {
    accum(bn, n.grad.colwise().sum());
    accum(gn, (n.grad.array() * xhat.array()).colwise().sum().matrix());
    if (!xn->requires_grad) return;
    Mat dx(n.value.rows(), n.value.cols());
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      for (int g = 0; g < groups; ++g) {
        Eigen::RowVectorXd gh =
            (n.grad.row(i).segment(g * gw, gw).array() *
             gn->value.row(0).segment(g * gw, gw).array()).matrix();
        auto xh = xhat.row(i).segment(g * gw, gw);
        const double mean_gh = gh.mean();
        const double mean_ghx = (gh.array() * xh.array()).mean();
        dx.row(i).segment(g * gw, gw) =
            ((gh.array() - mean_gh - xh.array() * mean_ghx) * inv_std(i, g))
                .matrix();
      }
    }
    accum(xn, dx);
  });
}

Var unfold_k3s2(const Var& x) {
  const Eigen::Index T = x.rows();
  const Eigen::Index C = x.cols();
  if (T < 1) throw std::invalid_argument("unfold_k3s2: empty input");
  const Eigen::Index To = (T + 1) / 2;
  Mat y = Mat::Zero(To, 3 * C);
  for (Eigen::Index t = 0; t < To; ++t) {
    const Eigen::Index c = 2 * t;
    if (c - 1 >= 0) y.row(t).segment(0, C) = x.value().row(c - 1);
    y.row(t).segment(C, C) = x.value().row(c);
    if (c + 1 < T) y.row(t).segment(2 * C, C) = x.value().row(c + 1);
  }
  auto xn = x.node();
  return make(std::move(y), {x}, [xn, T, C, To](Node& n) {
    if (!xn->requires_grad) return;
    Mat& g = grad_buffer(xn);
    for (Eigen::Index t = 0; t < To; ++t) {
      const Eigen::Index c = 2 * t;
      if (c - 1 >= 0) g.row(c - 1) += n.grad.row(t).segment(0, C);
      g.row(c) += n.grad.row(t).segment(C, C);
      if (c + 1 < T) g.row(c + 1) += n.grad.row(t).segment(2 * C, C);
    }
  });
}

namespace {

struct SampleRef {
  Eigen::Index i0, i1;
  double frac;
  double didx;  // d(continuous index)/d(normalized position); 0 when clamped
};

SampleRef locate(double pos_norm, Eigen::Index T) {
  SampleRef r;
  const double scale = static_cast<double>(T - 1);
  const double idx = pos_norm * scale;
  if (idx < 0.0) {  // clamped left; no positional gradient
    r.i0 = r.i1 = 0;
    r.frac = 0.0;
    r.didx = 0.0;
  } else if (idx >= scale) {  // clamped right (or T == 1)
    r.i0 = r.i1 = T - 1;
    r.frac = 0.0;
    r.didx = 0.0;
  } else {
    r.i0 = static_cast<Eigen::Index>(std::floor(idx));
    r.i1 = r.i0 + 1;
    r.frac = idx - static_cast<double>(r.i0);
    r.didx = scale;
  }
  return r;
}

}  // namespace

Var deform_sample(const std::vector<Var>& levels, const Var& pos_norm,
                  const Var& weights, int heads) {
  const int L = static_cast<int>(levels.size());
  if (L == 0) throw std::invalid_argument("deform_sample: no levels");
  const Eigen::Index D = levels[0].cols();
  if (heads <= 0 || D % heads != 0) {
    throw std::invalid_argument("deform_sample: heads must divide width");
  }
  const Eigen::Index Dh = D / heads;
  const Eigen::Index Q = pos_norm.rows();
  const Eigen::Index S = pos_norm.cols();
  if (S % (heads * L) != 0) {
    throw std::invalid_argument("deform_sample: slot count mismatch");
  }
  const Eigen::Index K = S / (heads * L);
  if (weights.rows() != Q || weights.cols() != S) {
    throw std::invalid_argument("deform_sample: weights shape");
  }
  if (!pos_norm.value().allFinite()) {
    throw std::invalid_argument("deform_sample: non-finite positions");
  }

  Mat y = Mat::Zero(Q, D);
  for (Eigen::Index q = 0; q < Q; ++q) {
    for (int h = 0; h < heads; ++h) {
      auto out = y.row(q).segment(h * Dh, Dh);
      for (int l = 0; l < L; ++l) {
        const Mat& V = levels[l].value();
        const Eigen::Index Tl = V.rows();
        const Eigen::Index base = (static_cast<Eigen::Index>(h) * L + l) * K;
        for (Eigen::Index k = 0; k < K; ++k) {
          const Eigen::Index col = base + k;
          const SampleRef r = locate(pos_norm.value()(q, col), Tl);
          const double w = weights.value()(q, col);
          out += w * ((1.0 - r.frac) * V.row(r.i0).segment(h * Dh, Dh) +
                      r.frac * V.row(r.i1).segment(h * Dh, Dh));
        }
      }
    }
  }

  std::vector<Var> parents = levels;
  parents.push_back(pos_norm);
  parents.push_back(weights);
  std::vector<std::shared_ptr<Node>> lvl_nodes;
  for (const auto& lv : levels) lvl_nodes.push_back(lv.node());
  auto pn = pos_norm.node(), wn = weights.node();

  return make(std::move(y), parents,
              [lvl_nodes, pn, wn, heads, L, K, Dh](Node& n) {
    const Eigen::Index Q = pn->value.rows();
    const bool need_pos = pn->requires_grad;
    const bool need_w = wn->requires_grad;
    for (Eigen::Index q = 0; q < Q; ++q) {
      for (int h = 0; h < heads; ++h) {
        auto gh = n.grad.row(q).segment(h * Dh, Dh);
        for (int l = 0; l < L; ++l) {
          auto& ln = lvl_nodes[l];
          const Mat& V = ln->value;
          const Eigen::Index Tl = V.rows();
          const Eigen::Index base = (static_cast<Eigen::Index>(h) * L + l) * K;
          for (Eigen::Index k = 0; k < K; ++k) {
            const Eigen::Index col = base + k;
            const SampleRef r = locate(pn->value(q, col), Tl);
            const double w = wn->value(q, col);
            if (ln->requires_grad) {
              Mat& gv = grad_buffer(ln);
              gv.row(r.i0).segment(h * Dh, Dh) += (w * (1.0 - r.frac)) * gh;
              if (r.i1 != r.i0) {
                gv.row(r.i1).segment(h * Dh, Dh) += (w * r.frac) * gh;
              }
            }
            if (need_w || need_pos) {
              auto v0 = V.row(r.i0).segment(h * Dh, Dh);
              auto v1 = V.row(r.i1).segment(h * Dh, Dh);
              if (need_w) {
                const double sample =
                    gh.dot((1.0 - r.frac) * v0 + r.frac * v1);
                grad_buffer(wn)(q, col) += sample;
              }
              if (need_pos && r.didx != 0.0) {
                grad_buffer(pn)(q, col) += w * r.didx * gh.dot(v1 - v0);
              }
            }
          }
        }
      }
    }
  });
}

Var deform_gather(const std::vector<Var>& levels, const Var& pos_norm) {
  const int L = static_cast<int>(levels.size());
  if (L == 0) throw std::invalid_argument("deform_gather: no levels");
  if (pos_norm.rows() != 1) throw std::invalid_argument("deform_gather: 1xS");
  const Eigen::Index S = pos_norm.cols();
  if (S % L != 0) throw std::invalid_argument("deform_gather: slots per level");
  const Eigen::Index K = S / L;
  const Eigen::Index D = levels[0].cols();

  Mat y(S, D);
  for (int l = 0; l < L; ++l) {
    const Mat& V = levels[l].value();
    for (Eigen::Index k = 0; k < K; ++k) {
      const Eigen::Index s = l * K + k;
      const SampleRef r = locate(pos_norm.value()(0, s), V.rows());
      y.row(s) = (1.0 - r.frac) * V.row(r.i0) + r.frac * V.row(r.i1);
    }
  }

  std::vector<Var> parents = levels;
  parents.push_back(pos_norm);
  std::vector<std::shared_ptr<Node>> lvl_nodes;
  for (const auto& lv : levels) lvl_nodes.push_back(lv.node());
  auto pn = pos_norm.node();

  return make(std::move(y), parents, [lvl_nodes, pn, L, K](Node& n) {
    for (int l = 0; l < L; ++l) {
      auto& ln = lvl_nodes[l];
      const Mat& V = ln->value;
      for (Eigen::Index k = 0; k < K; ++k) {
        const Eigen::Index s = l * K + k;
        const SampleRef r = locate(pn->value(0, s), V.rows());
        if (ln->requires_grad) {
          Mat& gv = grad_buffer(ln);
          gv.row(r.i0) += (1.0 - r.frac) * n.grad.row(s);
          if (r.i1 != r.i0) gv.row(r.i1) += r.frac * n.grad.row(s);
        }
        if (pn->requires_grad && r.didx != 0.0) {
          grad_buffer(pn)(0, s) +=
              r.didx * n.grad.row(s).dot(V.row(r.i1) - V.row(r.i0));
        }
      }
    }
  });
}

Var focal_from_logits(const Var& logits, const std::vector<int>& targets,
                      double alpha, double gamma) {
  if (logits.cols() != 1 ||
      static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw std::invalid_argument("focal_from_logits: need Nx1 logits + targets");
  }
  const double eps = 1e-8;
  const Eigen::Index N = logits.rows();
  Mat y(N, 1);
  Mat prob(N, 1);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double x = logits.value()(i, 0);
    double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
    p = std::clamp(p, eps, 1.0 - eps);
    prob(i, 0) = p;
    if (targets[i] == 1) {
      y(i, 0) = -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    } else {
      y(i, 0) = -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
    }
  }
  auto ln = logits.node();
  return make(std::move(y), {logits}, [ln, targets, alpha, gamma, prob](Node& n) {
    if (!ln->requires_grad) return;
    Mat d(prob.rows(), 1);
    for (Eigen::Index i = 0; i < prob.rows(); ++i) {
      const double p = prob(i, 0);
      if (targets[i] == 1) {
        d(i, 0) = alpha * std::pow(1.0 - p, gamma) *
                  (gamma * p * std::log(p) - (1.0 - p));
      } else {
        d(i, 0) = -(1.0 - alpha) * std::pow(p, gamma) *
                  (gamma * (1.0 - p) * std::log(1.0 - p) - p);
      }
    }
    accum(ln, n.grad.cwiseProduct(d));
  });
}

Var giou_against(const Var& center, const Var& length,
                 const std::vector<TemporalSegment>& gts) {
  const Eigen::Index M = center.rows();
  if (center.cols() != 1 || length.cols() != 1 || length.rows() != M ||
      static_cast<Eigen::Index>(gts.size()) != M) {
    throw std::invalid_argument("giou_against: need Mx1 center/length + M gts");
  }
  Mat y(M, 1);
  std::vector<GiouGrad> grads(M);
  for (Eigen::Index i = 0; i < M; ++i) {
    const double c = center.value()(i, 0);
    const double l = std::max(0.0, length.value()(i, 0));
    const TemporalSegment pred{c - l / 2, c + l / 2};
    grads[i] = giou_with_grad(pred, gts[i]);
    y(i, 0) = grads[i].value;
  }
  auto cn = center.node(), ln = length.node();
  return make(std::move(y), {center, length}, [cn, ln, grads](Node& n) {
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      const double g = n.grad(i, 0);
      const auto& gg = grads[static_cast<size_t>(i)];
      if (cn->requires_grad) {
        grad_buffer(cn)(i, 0) += g * (gg.d_a_start + gg.d_a_end);
      }
      if (ln->requires_grad) {
        grad_buffer(ln)(i, 0) += g * 0.5 * (gg.d_a_end - gg.d_a_start);
      }
    }
  });
}

Var detach(const Var& x) { return constant(x.value()); }

void backward(const Var& root) {
  if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("backward: root must be a defined 1x1 value");
  }
  Node* r = root.node().get();
  if (!r->requires_grad) return;

  // Iterative post-order DFS over grad-requiring parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& top = stack.back();
    Node* n = top.first;
    if (top.second < n->parents.size()) {
      Node* p = n->parents[top.second++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  r->grad = Mat::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() > 0) n->backprop(*n);
  }
}

}  // namespace densecap::ad
