#pragma once

#include <functional>
#include <random>
#include <vector>

#include "densecap/autodiff.hpp"
#include "densecap/nn.hpp"

namespace densecap::testutil {

// Central-difference gradient check. `build` must reconstruct the scalar
// graph from the current parameter values on every call; the analytic
// gradient from one backward pass is compared entry-wise against finite
// differences on every listed tensor.
struct GradCheck {
  double max_rel_err{0};
  long checked{0};
};

inline GradCheck grad_check(const std::function<ad::Var()>& build,
                            const std::vector<ad::Var>& params,
                            double h = 1e-5, double floor = 1e-6) {
  for (const auto& p : params) p.zero_grad();
  ad::Var root = build();
  ad::backward(root);

  GradCheck res;
  for (const auto& p : params) {
    ad::Mat analytic = p.has_grad()
                           ? p.grad()
                           : ad::Mat::Zero(p.rows(), p.cols());
    ad::Mat base = p.value();
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        ad::Mat bumped = base;
        bumped(i, j) = base(i, j) + h;
        p.set_value(bumped);
        const double up = build().scalar();
        bumped(i, j) = base(i, j) - h;
        p.set_value(bumped);
        const double dn = build().scalar();
        p.set_value(base);
        const double numeric = (up - dn) / (2.0 * h);
        const double a = analytic(i, j);
        const double denom = std::max({floor, std::abs(a), std::abs(numeric)});
        res.max_rel_err = std::max(res.max_rel_err, std::abs(a - numeric) / denom);
        ++res.checked;
      }
    }
  }
  return res;
}

inline ad::Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                          double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  ad::Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = dist(rng);
  }
  return m;
}

// Reduces a matrix-valued op output to a scalar with fixed random weights so
// every output entry receives a distinct gradient.
inline ad::Var weighted_sum(const ad::Var& x, const ad::Mat& w) {
  return ad::sum_all(ad::hadamard(x, ad::constant(w)));
}

}  // namespace densecap::testutil
