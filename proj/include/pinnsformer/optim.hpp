#pragma once

// Full-batch optimizers on flat Eigen parameter vectors: Adam, and L-BFGS
// with a strong-Wolfe line search (bracketing plus cubic-interpolation zoom).
//
// An objective is any callable `double(const Vector& x, Vector& grad)`.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace pinnsformer {

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotDescentDirection : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Vector>
bool all_finite(const Vector& v) {
  return v.allFinite();
}

// --- Adam ------------------------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Vector = Eigen::VectorXd>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(Vector& params, const Vector& grads) {
    if (grads.size() != params.size()) throw std::invalid_argument("Adam: gradient size differs from parameters");
    if (!all_finite(grads)) throw NonFiniteGradient("Adam: non-finite gradient");
    if (m_.size() != params.size()) {
      m_ = Vector::Zero(params.size());
      v_ = Vector::Zero(params.size());
      count_ = 0;
    }
    ++count_;
    m_ = options_.beta1 * m_ + (1.0 - options_.beta1) * grads;
    v_ = options_.beta2 * v_ + (1.0 - options_.beta2) * grads.cwiseAbs2();
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(count_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(count_));
    params.array() -= options_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + options_.epsilon);
  }

  long steps() const { return count_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }

 private:
  AdamOptions options_;
  Vector m_;
  Vector v_;
  long count_ = 0;
};

// --- strong Wolfe line search -------------------------------------------------------------------

struct WolfeOptions {
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_evals = 25;
  double tolerance_change = 1e-12;  // smallest bracket width worth refining

  void validate() const {
    if (!(0.0 < c1 && c1 < c2 && c2 < 1.0)) throw std::invalid_argument("Wolfe constants need 0 < c1 < c2 < 1");
    if (max_evals < 1) throw std::invalid_argument("line search needs at least one evaluation");
  }
};

template <typename Vector>
struct LineSearchResult {
  double alpha = 0.0;
  double value = 0.0;
  Vector gradient;
  int evals = 0;
  bool success = false;
};

// Minimizer of the cubic through (x1, f1, g1) and (x2, f2, g2), clamped to the bounds.
inline double cubic_interpolate(double x1, double f1, double g1, double x2, double f2, double g2, double lo,
                                double hi) {
  const double d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
  const double d2_square = d1 * d1 - g1 * g2;
  if (d2_square >= 0.0 && std::isfinite(d2_square)) {
    const double d2 = std::sqrt(d2_square);
    const double min_pos = x1 <= x2 ? x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
                                    : x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2));
    if (std::isfinite(min_pos)) return std::min(std::max(min_pos, lo), hi);
  }
  return 0.5 * (lo + hi);
}

// `value` and `gradient` are f and its gradient at x.  Returns the step
// satisfying f(x + a p) <= f + c1 a g'p and |g(x + a p)'p| <= c2 |g'p|, or the
// best point seen with success = false when the evaluation budget runs out.
template <typename Objective, typename Vector>
LineSearchResult<Vector> wolfe_line_search(Objective&& f, const Vector& x, double value, const Vector& gradient,
                                           const Vector& direction, double alpha0, const WolfeOptions& options = {}) {
  options.validate();
  const double gtd0 = gradient.dot(direction);
  if (!(gtd0 < 0.0)) throw NotDescentDirection("line search direction is not a descent direction");
  const double d_norm = direction.cwiseAbs().maxCoeff();

  struct Point {
    double t;
    double f;
    double gtd;
    Vector g;
  };
  LineSearchResult<Vector> result;
  auto evaluate = [&](double t) {
    Vector g(x.size());
    double fv = f(Vector(x + t * direction), g);
    if (!std::isfinite(fv) || !all_finite(g)) fv = std::numeric_limits<double>::infinity();
    ++result.evals;
    return Point{t, fv, std::isfinite(fv) ? g.dot(direction) : std::numeric_limits<double>::quiet_NaN(), g};
  };
  auto accept = [&](const Point& p, bool ok) {
    result.alpha = p.t;
    result.value = p.f;
    result.gradient = p.g;
    result.success = ok;
    return result;
  };
  auto sufficient = [&](const Point& p) { return p.f <= value + options.c1 * p.t * gtd0; };
  auto curvature = [&](const Point& p) { return std::abs(p.gtd) <= -options.c2 * gtd0; };

  Point prev{0.0, value, gtd0, gradient};
  Point cur = evaluate(alpha0);
  Point lo, hi;
  bool bracketed = false;
  while (true) {
    if (!sufficient(cur) || (result.evals > 1 && cur.f >= prev.f)) {
      lo = prev;
      hi = cur;
      bracketed = true;
      break;
    }
    if (curvature(cur)) return accept(cur, true);
    if (cur.gtd >= 0.0) {
      lo = cur;
      hi = prev;
      bracketed = true;
      break;
    }
    if (result.evals >= options.max_evals) break;
    const double min_step = cur.t + 0.01 * (cur.t - prev.t);
    const double max_step = cur.t * 10.0;
    const double next = cubic_interpolate(prev.t, prev.f, prev.gtd, cur.t, cur.f, cur.gtd, min_step, max_step);
    prev = cur;
    cur = evaluate(next);
  }
  if (!bracketed) return accept(cur, false);

  // Zoom: lo always holds the lowest sufficient-decrease point found so far.
  bool insufficient_progress = false;
  while (result.evals < options.max_evals) {
    const double left = std::min(lo.t, hi.t);
    const double right = std::max(lo.t, hi.t);
    if ((right - left) * d_norm < options.tolerance_change) break;
    double t = std::isfinite(hi.f) ? cubic_interpolate(lo.t, lo.f, lo.gtd, hi.t, hi.f, hi.gtd, left, right)
                                   : 0.5 * (left + right);
    const double eps = 0.1 * (right - left);
    if (std::min(right - t, t - left) < eps) {
      if (insufficient_progress || t >= right || t <= left) {
        t = std::abs(t - right) < std::abs(t - left) ? right - eps : left + eps;
        insufficient_progress = false;
      } else {
        insufficient_progress = true;
      }
    } else {
      insufficient_progress = false;
    }
    const Point p = evaluate(t);
    if (!sufficient(p) || p.f >= lo.f) {
      hi = p;
    } else {
      if (curvature(p)) return accept(p, true);
      if (p.gtd * (hi.t - lo.t) >= 0.0) hi = lo;
      lo = p;
    }
  }
  return accept(lo, false);
}

// --- L-BFGS -------------------------------------------------------------------------------------

struct LbfgsOptions {
  int history = 50;
  WolfeOptions wolfe;
  double fallback_step = 1e-3;
  double curvature_guard = 1e-10;
  double gradient_tolerance = 1e-12;  // max-norm below which an iteration is a no-op
};

enum class StepStatus { ok, converged, line_search_failed, diverged };

inline const char* to_string(StepStatus s) {
  switch (s) {
    case StepStatus::ok: return "ok";
    case StepStatus::converged: return "converged";
    case StepStatus::line_search_failed: return "line_search_failed";
    case StepStatus::diverged: return "diverged";
  }
  return "unknown";
}

struct StepReport {
  StepStatus status = StepStatus::ok;
  double value = 0.0;  // objective at the new point
  double alpha = 0.0;
  int evals = 0;
};

template <typename Vector = Eigen::VectorXd>
class Lbfgs {
 public:
  explicit Lbfgs(LbfgsOptions options = {}) : options_(options) {
    options_.wolfe.validate();
    if (options_.history < 1) throw std::invalid_argument("L-BFGS history must be >= 1");
  }

  // One outer iteration: direction from the two-loop recursion, strong-Wolfe
  // step, history update.  `x` is updated in place.
  template <typename Objective>
  StepReport step(Objective&& f, Vector& x) {
    StepReport report;
    if (!primed_ || x.size() != x_.size() || x != x_) {
      gradient_.resize(x.size());
      value_ = f(x, gradient_);
      x_ = x;
      primed_ = true;
      ++report.evals;
    }
    if (!std::isfinite(value_) || !all_finite(gradient_)) {
      report.status = StepStatus::diverged;
      report.value = value_;
      return report;
    }
    if (gradient_.cwiseAbs().maxCoeff() <= options_.gradient_tolerance) {
      report.status = StepStatus::converged;
      report.value = value_;
      return report;
    }

    Vector direction = two_loop(-gradient_);
    if (!(gradient_.dot(direction) < 0.0)) {
      // Stale curvature information; restart from steepest descent.
      s_.clear();
      y_.clear();
      direction = -gradient_;
    }
    const double alpha0 = iterations_ == 0 ? std::min(1.0, 1.0 / gradient_.template lpNorm<1>()) : 1.0;
    const auto ls = wolfe_line_search(f, x_, value_, gradient_, direction, alpha0, options_.wolfe);
    report.evals += ls.evals;

    Vector x_new;
    Vector g_new;
    double f_new;
    if (ls.success) {
      x_new = x_ + ls.alpha * direction;
      g_new = ls.gradient;
      f_new = ls.value;
      report.alpha = ls.alpha;
    } else {
      x_new = x_ - options_.fallback_step * gradient_;
      g_new.resize(x.size());
      f_new = f(x_new, g_new);
      ++report.evals;
      report.alpha = options_.fallback_step;
      report.status = StepStatus::line_search_failed;
    }
    if (!std::isfinite(f_new) || !all_finite(g_new)) {
      report.status = StepStatus::diverged;
      report.value = f_new;
      return report;
    }

    const Vector s = x_new - x_;
    const Vector y = g_new - gradient_;
    if (s.dot(y) > options_.curvature_guard) {
      s_.push_back(s);
      y_.push_back(y);
      if (static_cast<int>(s_.size()) > options_.history) {
        s_.pop_front();
        y_.pop_front();
      }
    }
    x_ = x_new;
    gradient_ = g_new;
    value_ = f_new;
    x = x_;
    ++iterations_;
    report.value = value_;
    return report;
  }

  double value() const { return value_; }
  const Vector& gradient() const { return gradient_; }
  std::size_t history_size() const { return s_.size(); }
  long iterations() const { return iterations_; }

 private:
  Vector two_loop(Vector q) const {
    const std::size_t n = s_.size();
    if (n == 0) return q;
    std::vector<double> a(n);
    for (std::size_t i = n; i-- > 0;) {
      a[i] = s_[i].dot(q) / y_[i].dot(s_[i]);
      q -= a[i] * y_[i];
    }
    q *= s_.back().dot(y_.back()) / y_.back().squaredNorm();
    for (std::size_t i = 0; i < n; ++i) {
      const double b = y_[i].dot(q) / y_[i].dot(s_[i]);
      q += (a[i] - b) * s_[i];
    }
    return q;
  }

  LbfgsOptions options_;
  std::deque<Vector> s_;
  std::deque<Vector> y_;
  Vector x_;
  Vector gradient_;
  double value_ = 0.0;
  bool primed_ = false;
  long iterations_ = 0;
};

}  // namespace pinnsformer
