#pragma once

// Ridge-penalized logistic regression by iteratively reweighted least squares, and
// ridge OLS. Both add an unpenalized intercept and standardize columns internally.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "akirisk/error.hpp"

namespace akirisk {

namespace detail {

struct Standardizer {
  Eigen::RowVectorXd center;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& x) {
    Standardizer s;
    const double n = static_cast<double>(x.rows());
    s.center = x.colwise().mean();
    s.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - s.center(j)).square().sum() / std::max(1.0, n);
      s.scale(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Eigen::MatrixXd design(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd d(x.rows(), x.cols() + 1);
    d.col(0).setOnes();
    d.rightCols(x.cols()) = (x.rowwise() - center).array().rowwise() / scale.array();
    return d;
  }
};

inline double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

struct LogisticModel {
  detail::Standardizer standardizer;
  Eigen::VectorXd coef;  // intercept first, on the standardized scale
  double ridge = 0.0;
  int iterations = 0;

  Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x) const { return standardizer.design(x) * coef; }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd eta = linear_predictor(x);
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta(i) = detail::logistic(eta(i));
    return eta;
  }
};

struct IrlsOptions {
  double ridge = 1.0;
  int max_iter = 50;
  double tol = 1e-8;
};

/// Newton steps on the penalized log-likelihood. Throws NonConvergence when the step
/// size is still above tol after max_iter, SingularSystem when the Hessian cannot be
/// factored.
inline LogisticModel fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const IrlsOptions& opt = {}) {
  if (x.rows() != y.size()) fail(Errc::shape_mismatch, "fit_logistic: row count differs from label count");
  if (x.rows() == 0) fail(Errc::invalid_config, "fit_logistic: no rows");
  LogisticModel m;
  m.standardizer = detail::Standardizer::fit(x);
  m.ridge = opt.ridge;
  const Eigen::MatrixXd d = m.standardizer.design(x);
  const Eigen::Index p = d.cols();
  m.coef = Eigen::VectorXd::Zero(p);
  const double ybar = std::clamp(y.mean(), 1e-6, 1.0 - 1e-6);
  m.coef(0) = std::log(ybar / (1.0 - ybar));
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, opt.ridge);
  penalty(0) = 0.0;

  for (int it = 0; it < opt.max_iter; ++it) {
    Eigen::VectorXd eta = d * m.coef;
    Eigen::VectorXd prob(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      prob(i) = detail::logistic(eta(i));
      w(i) = std::max(prob(i) * (1.0 - prob(i)), 1e-12);
    }
    Eigen::VectorXd grad = d.transpose() * (y - prob) - penalty.cwiseProduct(m.coef);
    Eigen::MatrixXd hess = d.transpose() * w.asDiagonal() * d;
    hess.diagonal() += penalty;
    hess.diagonal().array() += 1e-10;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) fail(Errc::singular_system, "fit_logistic: Hessian not positive definite");
    Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) fail(Errc::singular_system, "fit_logistic: non-finite Newton step");
    m.coef += step;
    m.iterations = it + 1;
    if (step.cwiseAbs().maxCoeff() < opt.tol) return m;
  }
  fail(Errc::non_convergence, "fit_logistic: no convergence after " + std::to_string(opt.max_iter) + " iterations");
}

/// Retries with a tenfold larger ridge on NonConvergence or SingularSystem.
inline LogisticModel fit_logistic_robust(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, IrlsOptions opt = {},
                                         int retries = 4) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fit_logistic(x, y, opt);
    } catch (const Error& e) {
      if (attempt >= retries || (e.code() != Errc::non_convergence && e.code() != Errc::singular_system)) throw;
      opt.ridge = std::max(opt.ridge * 10.0, 1e-3);
    }
  }
}

struct LinearModel {
  detail::Standardizer standardizer;
  Eigen::VectorXd coef;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const { return standardizer.design(x) * coef; }
};

inline LinearModel fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double ridge = 1e-6) {
  if (x.rows() != y.size()) fail(Errc::shape_mismatch, "fit_ols: row count differs from target count");
  if (x.rows() == 0) fail(Errc::invalid_config, "fit_ols: no rows");
  LinearModel m;
  m.standardizer = detail::Standardizer::fit(x);
  const Eigen::MatrixXd d = m.standardizer.design(x);
  Eigen::MatrixXd gram = d.transpose() * d;
  gram.diagonal().tail(d.cols() - 1).array() += ridge;
  gram(0, 0) += 1e-12;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success) fail(Errc::singular_system, "fit_ols: normal equations not solvable");
  m.coef = ldlt.solve(d.transpose() * y);
  if (!m.coef.allFinite()) fail(Errc::singular_system, "fit_ols: non-finite coefficients");
  return m;
}

}  // namespace akirisk
