#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace omm {

/// Box constraints; use +-infinity for unbounded coordinates.
template <typename Scalar>
struct Box {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> lower;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> upper;

  static Box unbounded(Eigen::Index n) {
    return {Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Constant(n, -std::numeric_limits<Scalar>::infinity()),
            Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Constant(n, std::numeric_limits<Scalar>::infinity())};
  }
};

struct LbfgsOptions {
  int max_iterations = 200;
  int history_size = 10;
  double convergence_tol = 1e-10;  ///< stop when the relative loss decrease falls below this
  double gradient_tol = 1e-12;     ///< stop when the projected gradient inf-norm falls below this
  double armijo = 1e-4;
  double backtrack = 0.5;
  int max_line_search = 40;
};

struct AdamOptions {
  int max_iterations = 1000;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double convergence_tol = 0.0;  ///< relative loss decrease; 0 disables
};

template <typename Scalar>
struct MinimizeResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x;
  Scalar value = std::numeric_limits<Scalar>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  std::string status;
  std::vector<Scalar> trace;  ///< loss at the start and after each accepted step
};

/// Called after each accepted step with (iteration, x, loss); return false to stop.
template <typename Scalar>
using IterationCallback =
    std::function<bool(int, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>&, Scalar)>;

namespace detail {

template <typename Vec>
Vec project(const Vec& x, const Vec& lower, const Vec& upper) {
  return x.cwiseMax(lower).cwiseMin(upper);
}

/// Coordinates pinned at a bound with the gradient pushing outward.
template <typename Vec>
Eigen::Array<bool, Eigen::Dynamic, 1> active_set(const Vec& x, const Vec& g, const Vec& lower, const Vec& upper) {
  return ((x.array() <= lower.array()) && (g.array() > 0)) || ((x.array() >= upper.array()) && (g.array() < 0));
}

}  // namespace detail

/// Limited-memory BFGS with Armijo backtracking, optionally projected onto a box.
///
/// `fg(x, grad)` returns the objective and writes the gradient. Accepted steps
/// strictly satisfy the sufficient-decrease condition, so `trace` is
/// non-increasing. A non-finite trial value is treated as a failed trial and
/// the step is halved. When backtracking runs out, the memory is dropped and a
/// steepest-descent step is tried before giving up with the best point found.
template <typename Scalar, typename Objective>
MinimizeResult<Scalar> minimize_lbfgs(Objective&& fg, Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x0,
                                      const LbfgsOptions& opt, const std::optional<Box<Scalar>>& box = std::nullopt,
                                      const IterationCallback<Scalar>& callback = {}) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = x0.size();
  const Box<Scalar> bounds = box ? *box : Box<Scalar>::unbounded(n);

  MinimizeResult<Scalar> res;
  Vec x = detail::project(x0, bounds.lower, bounds.upper);
  Vec g(n);
  Scalar f = fg(x, g);
  res.x = x;
  res.value = f;
  if (!std::isfinite(f) || !g.allFinite()) {
    res.status = "non-finite objective at the initial point";
    return res;
  }
  res.trace.push_back(f);
  if (opt.max_iterations <= 0) {
    res.status = "no iterations requested";
    return res;
  }

  std::deque<Vec> s_hist;
  std::deque<Vec> y_hist;
  std::deque<Scalar> rho_hist;
  Vec g_new(n);
  Vec x_new(n);

  for (int it = 0; it < opt.max_iterations; ++it) {
    const auto active = detail::active_set(x, g, bounds.lower, bounds.upper);
    Vec q = active.select(Vec::Zero(n), g);
    if (q.template lpNorm<Eigen::Infinity>() <= opt.gradient_tol) {
      res.converged = true;
      res.status = "projected gradient below tolerance";
      break;
    }

    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      // Two-loop recursion over the stored curvature pairs.
      Vec d = q;
      std::vector<Scalar> a(s_hist.size());
      for (std::size_t k = s_hist.size(); k-- > 0;) {
        a[k] = rho_hist[k] * s_hist[k].dot(d);
        d -= a[k] * y_hist[k];
      }
      Scalar step = 1;
      if (!s_hist.empty()) {
        d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      } else {
        step = std::min(Scalar(1), Scalar(1) / q.template lpNorm<Eigen::Infinity>());
      }
      for (std::size_t k = 0; k < s_hist.size(); ++k) {
        const Scalar b = rho_hist[k] * y_hist[k].dot(d);
        d += (a[k] - b) * s_hist[k];
      }
      d = -d;
      d = active.select(Vec::Zero(n), d);
      if (!(g.dot(d) < 0)) {
        d = -q;
        step = std::min(Scalar(1), Scalar(1) / q.template lpNorm<Eigen::Infinity>());
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
      }

      for (int ls = 0; ls < opt.max_line_search; ++ls) {
        x_new = detail::project(Vec(x + step * d), bounds.lower, bounds.upper);
        const Scalar f_new = fg(x_new, g_new);
        const Scalar decrease = g.dot(x_new - x);
        if (std::isfinite(f_new) && g_new.allFinite() && f_new <= f + Scalar(opt.armijo) * decrease && f_new <= f) {
          accepted = true;
          const Vec s = x_new - x;
          const Vec y = g_new - g;
          const Scalar sy = s.dot(y);
          if (sy > Scalar(1e-12) * y.squaredNorm() && sy > 0) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(Scalar(1) / sy);
            if (static_cast<int>(s_hist.size()) > opt.history_size) {
              s_hist.pop_front();
              y_hist.pop_front();
              rho_hist.pop_front();
            }
          }
          const Scalar rel = (f - f_new) / std::max({std::abs(f), std::abs(f_new), Scalar(1e-300)});
          x = x_new;
          g = g_new;
          f = f_new;
          res.trace.push_back(f);
          res.iterations = it + 1;
          if (rel < Scalar(opt.convergence_tol)) {
            res.converged = true;
            res.status = "relative decrease below tolerance";
          }
          break;
        }
        step *= Scalar(opt.backtrack);
      }
      if (!accepted) {
        if (s_hist.empty()) break;
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
      }
    }
    if (!accepted) {
      res.status = "line search failed";
      break;
    }
    if (callback && !callback(res.iterations, x, f)) {
      res.status = "stopped by callback";
      break;
    }
    if (res.converged) break;
  }
  if (res.status.empty()) res.status = "iteration limit reached";
  res.x = x;
  res.value = f;
  return res;
}

/// Adam over the same objective interface; returns the best iterate seen.
template <typename Scalar, typename Objective>
MinimizeResult<Scalar> minimize_adam(Objective&& fg, Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x0,
                                     const AdamOptions& opt, const std::optional<Box<Scalar>>& box = std::nullopt,
                                     const IterationCallback<Scalar>& callback = {}) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = x0.size();
  const Box<Scalar> bounds = box ? *box : Box<Scalar>::unbounded(n);

  MinimizeResult<Scalar> res;
  Vec x = detail::project(x0, bounds.lower, bounds.upper);
  Vec g(n);
  Scalar f = fg(x, g);
  res.x = x;
  res.value = f;
  if (!std::isfinite(f) || !g.allFinite()) {
    res.status = "non-finite objective at the initial point";
    return res;
  }
  res.trace.push_back(f);
  Vec m = Vec::Zero(n);
  Vec v = Vec::Zero(n);
  Scalar b1t = 1;
  Scalar b2t = 1;
  for (int it = 0; it < opt.max_iterations; ++it) {
    m = Scalar(opt.beta1) * m + Scalar(1 - opt.beta1) * g;
    v = Scalar(opt.beta2) * v + Scalar(1 - opt.beta2) * g.cwiseAbs2();
    b1t *= Scalar(opt.beta1);
    b2t *= Scalar(opt.beta2);
    const Vec m_hat = m / (1 - b1t);
    const Vec v_hat = v / (1 - b2t);
    x = detail::project(Vec(x - Scalar(opt.learning_rate) * (m_hat.array() / (v_hat.array().sqrt() + Scalar(opt.epsilon))).matrix()),
                        bounds.lower, bounds.upper);
    const Scalar f_prev = f;
    f = fg(x, g);
    res.iterations = it + 1;
    if (!std::isfinite(f) || !g.allFinite()) {
      res.status = "non-finite objective";
      return res;
    }
    res.trace.push_back(f);
    if (f < res.value) {
      res.value = f;
      res.x = x;
    }
    if (callback && !callback(res.iterations, x, f)) {
      res.status = "stopped by callback";
      return res;
    }
    if (opt.convergence_tol > 0 &&
        std::abs(f_prev - f) / std::max({std::abs(f_prev), std::abs(f), Scalar(1e-300)}) < Scalar(opt.convergence_tol)) {
      res.converged = true;
      res.status = "relative change below tolerance";
      return res;
    }
  }
  res.status = "iteration limit reached";
  return res;
}

}  // namespace omm
