#ifndef UNMIX_SOLVERS_HPP
#define UNMIX_SOLVERS_HPP

// The three optimization routines: standard projected-gradient NMF over a
// shared endmember set, the pixel-by-pixel variant that gives every pixel its
// own source set (one gradient step on the full stacked matrix, one per-pixel
// coefficient step, sum-to-one normalization), and the inertia-penalized
// variant that adds mu * sum_m Tr(Cov(class m rows)) to the cost to keep each
// class's per-pixel estimates from drifting apart.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "unmix/core.hpp"
#include "unmix/metrics.hpp"
#include "unmix/parallel.hpp"

namespace unmix {

/// Knobs shared by all three solvers.
struct SolverOptions {
  double mu = 0.0;              // inertia weight; only the penalized solver reads it
  int max_iters = 500;
  double step_R = 1.0;          // starting step for the source update
  double step_C = 1.0;          // starting step for the coefficient update
  double epsilon_floor = kDefaultEpsilonFloor;
  double tol_rel = 1e-6;        // relative-cost stopping tolerance
  int tol_consecutive = 10;     // iterations below tol_rel required to stop
  bool armijo = true;           // backtracking line search; false = fixed steps
  double armijo_beta = 0.5;
  double armijo_sigma = 0.01;
  int armijo_max_halvings = 20;
};

enum class StopReason { max_iters, tol_reached, step_stalled };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::max_iters: return "max_iters";
    case StopReason::tol_reached: return "tol_reached";
    case StopReason::step_stalled: return "step_stalled";
  }
  return "unknown";
}

/// One cost sample, taken after the gradient steps of an iteration and before
/// the coefficient normalization (iteration 0 is the starting point).
struct CostRecord {
  int iteration;
  double j_re;     // 0.5 ||X - reconstruction||_F^2
  double j_i;      // summed class inertia (0 for the shared-endmember solver)
  double j_total;  // j_re + mu * j_i
};

struct SolverTrace {
  std::vector<CostRecord> costs;
  StopReason stop_reason = StopReason::max_iters;
  int iterations_run = 0;
  double wall_time = 0.0;  // seconds
};

/// Pixel-by-pixel solver output: one source set per pixel.
struct UnmixResult {
  StackedEndmembers endmembers;
  AbundanceMatrix abundances;
  SolverTrace trace;
};

/// Shared-endmember solver output.
struct NmfResult {
  EndmemberMatrix endmembers;
  AbundanceMatrix abundances;
  SolverTrace trace;
};

/// 0.5 * ||X - C~R~||_F^2 for the pixel-by-pixel model.
inline double cost_upnmf(const ObservationMatrix& x, const AbundanceMatrix& c,
                         const StackedEndmembers& rt) {
  if (c.pixels() != x.pixels() || c.classes() != rt.classes() ||
      c.pixels() != rt.pixels() || rt.bands() != x.bands())
    throw shape_error("cost_upnmf: shape mismatch");
  return 0.5 * (x.data() - detail::mix_forward_raw(c.data(), rt.data())).squaredNorm();
}

namespace detail {

inline void require_stacked(const Matrix& rt, Index m_count, const char* who) {
  if (m_count < 1 || rt.rows() < m_count || rt.rows() % m_count != 0)
    throw shape_error(std::string(who) + ": row count " + std::to_string(rt.rows()) +
                      " is not a positive multiple of M=" + std::to_string(m_count));
}

// Class-wise column sums accumulated pairwise over the pixel axis.
inline Matrix class_column_sums(const Matrix& rt, Index m_count) {
  const Index p_count = rt.rows() / m_count;
  const Index bands = rt.cols();
  Matrix sums(m_count, bands);
  Matrix slice(p_count, bands);
  for (Index m = 0; m < m_count; ++m) {
    for (Index p = 0; p < p_count; ++p) slice.row(p) = rt.row(p * m_count + m);
    for (Index l = 0; l < bands; ++l)
      sums(m, l) = pairwise_sum(slice.col(l).data(), p_count);
  }
  return sums;
}

// Summed class inertia through the trace identity
//   (1/P) Tr(Rt^T Rt) - (1/P^2) sum_m ||column sums of class m||^2,
// which equals sum_m Tr(Cov(class m rows)) with 1/P covariance normalization.
// Clamped at zero: the two terms cancel exactly for zero-spread classes and
// rounding may leave a tiny negative remainder.
inline double inertia_raw(const Matrix& rt, Index m_count) {
  require_stacked(rt, m_count, "inertia_penalty");
  const double p_count = static_cast<double>(rt.rows() / m_count);
  const Matrix sums = class_column_sums(rt, m_count);
  const double value =
      rt.squaredNorm() / p_count - sums.squaredNorm() / (p_count * p_count);
  return std::max(0.0, value);
}

// Gradient of the summed class inertia in class-mean-centering form: the row
// for (p, m) is (2/P) * (row - class-m mean). Equal to the tiled-identity
// matrix expression without materializing the PM x PM operator.
inline Matrix inertia_gradient_raw(const Matrix& rt, Index m_count) {
  require_stacked(rt, m_count, "inertia_gradient");
  const Index p_count = rt.rows() / m_count;
  const Matrix means = class_column_sums(rt, m_count) / static_cast<double>(p_count);
  const double scale = 2.0 / static_cast<double>(p_count);
  Matrix grad(rt.rows(), rt.cols());
  for (Index p = 0; p < p_count; ++p)
    for (Index m = 0; m < m_count; ++m)
      grad.row(p * m_count + m) = scale * (rt.row(p * m_count + m) - means.row(m));
  return grad;
}

}  // namespace detail

/// Summed class inertia sum_m Tr(Cov(class m rows)), population (1/P)
/// covariance normalization.
inline double inertia_penalty(const StackedEndmembers& rt) {
  return detail::inertia_raw(rt.data(), rt.classes());
}
inline double inertia_penalty(const Matrix& rt, Index m_count) {
  return detail::inertia_raw(rt, m_count);
}

/// Gradient of inertia_penalty with respect to the stacked source matrix.
inline Matrix inertia_gradient(const StackedEndmembers& rt) {
  return detail::inertia_gradient_raw(rt.data(), rt.classes());
}
inline Matrix inertia_gradient(const Matrix& rt, Index m_count) {
  return detail::inertia_gradient_raw(rt, m_count);
}

/// Analytic gradients of cost_upnmf. The stacked-source gradient row for
/// (p, m) is -c_pm * (x_p - c_p^T R(p)); the compact coefficient gradient row
/// for pixel p is -(x_p - c_p^T R(p)) R(p)^T. Only the block entries of the
/// mixing matrix are represented; off-block entries stay zero by convention.
inline std::pair<Matrix, Matrix> gradients_upnmf(const ObservationMatrix& x,
                                                 const AbundanceMatrix& c,
                                                 const StackedEndmembers& rt) {
  if (c.pixels() != x.pixels() || c.classes() != rt.classes() ||
      c.pixels() != rt.pixels() || rt.bands() != x.bands())
    throw shape_error("gradients_upnmf: shape mismatch");
  const Index p_count = x.pixels();
  const Index m_count = rt.classes();
  const Matrix residual = x.data() - detail::mix_forward_raw(c.data(), rt.data());
  Matrix grad_r(rt.data().rows(), rt.bands());
  Matrix grad_c(p_count, m_count);
  for (Index p = 0; p < p_count; ++p) {
    for (Index m = 0; m < m_count; ++m) {
      grad_r.row(p * m_count + m) = -c.data()(p, m) * residual.row(p);
      grad_c(p, m) = -residual.row(p).dot(rt.data().row(p * m_count + m));
    }
  }
  return {std::move(grad_r), std::move(grad_c)};
}

namespace detail {

inline void validate_options(const SolverOptions& o) {
  if (!(o.mu >= 0.0)) throw std::invalid_argument("SolverOptions: mu must be >= 0");
  if (o.max_iters < 1) throw std::invalid_argument("SolverOptions: max_iters must be >= 1");
  if (!(o.step_R > 0.0) || !(o.step_C > 0.0))
    throw std::invalid_argument("SolverOptions: steps must be > 0");
  if (!(o.epsilon_floor > 0.0))
    throw std::invalid_argument("SolverOptions: epsilon_floor must be > 0");
  if (!(o.tol_rel > 0.0)) throw std::invalid_argument("SolverOptions: tol_rel must be > 0");
  if (o.tol_consecutive < 1)
    throw std::invalid_argument("SolverOptions: tol_consecutive must be >= 1");
  if (!(o.armijo_beta > 0.0 && o.armijo_beta < 1.0))
    throw std::invalid_argument("SolverOptions: armijo_beta must be in (0,1)");
  if (!(o.armijo_sigma > 0.0 && o.armijo_sigma < 1.0))
    throw std::invalid_argument("SolverOptions: armijo_sigma must be in (0,1)");
  if (o.armijo_max_halvings < 1)
    throw std::invalid_argument("SolverOptions: armijo_max_halvings must be >= 1");
}

// Backtracking projected gradient step. Accepts the first candidate
// max(x - alpha * grad, eps) satisfying the sufficient-decrease condition
//   J(cand) <= J(x) + sigma * <grad, cand - x>.
// The inner product is strictly negative whenever the candidate moves, so an
// accepted step never increases J. Returns moved=false (x unchanged) when
// every trial collapses onto x or fails the condition.
template <typename Mat, typename CostFn>
struct ArmijoOutcome {
  Mat x;
  bool moved;
  double cost;
};

template <typename Mat, typename CostFn>
ArmijoOutcome<Mat, CostFn> armijo_project_step(const Mat& x, const Mat& grad,
                                               double cost_at_x, CostFn&& cost,
                                               double eps_floor,
                                               const SolverOptions& opts,
                                               double start_step) {
  double alpha = start_step;
  for (int t = 0; t <= opts.armijo_max_halvings; ++t, alpha *= opts.armijo_beta) {
    Mat cand = (x - alpha * grad).cwiseMax(eps_floor);
    const Mat diff = cand - x;
    if (!(diff.squaredNorm() > 0.0)) continue;
    const double gd = (grad.array() * diff.array()).sum();
    const double cand_cost = cost(cand);
    if (cand_cost <= cost_at_x + opts.armijo_sigma * gd)
      return {std::move(cand), true, cand_cost};
  }
  return {x, false, cost_at_x};
}

// Test hook: reports the total cost immediately before and after each
// accepted gradient step ('R' source update, 'C' coefficient sweep).
struct StepProbe {
  std::function<void(int iteration, char which, double j_before, double j_after)>
      on_step;
};

inline UnmixResult run_pixelwise(const ObservationMatrix& x,
                                 const StackedEndmembers& r0,
                                 const AbundanceMatrix& c0,
                                 const SolverOptions& opts, double mu,
                                 const StepProbe* probe) {
  validate_options(opts);
  if (!(mu >= 0.0)) throw std::invalid_argument("run_pixelwise: mu must be >= 0");
  if (r0.pixels() != x.pixels() || r0.bands() != x.bands() ||
      c0.pixels() != x.pixels() || c0.classes() != r0.classes())
    throw shape_error("solver: initialization does not match the observations");
  const auto t_start = std::chrono::steady_clock::now();
  const Index p_count = x.pixels();
  const Index m_count = r0.classes();
  const double eps = opts.epsilon_floor;

  // Iterates live at or above the floor from the first projection on; the
  // starting point is floored too so a stalled first step cannot leak zeros.
  Matrix rt = project_positive(r0.data(), eps);
  Matrix c = c0.data();

  const auto total_cost = [&](const Matrix& cc, const Matrix& rr) {
    double v = 0.5 * (x.data() - mix_forward_raw(cc, rr)).squaredNorm();
    if (mu != 0.0) v += mu * inertia_raw(rr, m_count);
    return v;
  };

  SolverTrace trace;
  {
    const double j_re = 0.5 * (x.data() - mix_forward_raw(c, rt)).squaredNorm();
    const double j_i = inertia_raw(rt, m_count);
    trace.costs.push_back({0, j_re, j_i, mu != 0.0 ? j_re + mu * j_i : j_re});
  }
  double j_prev = trace.costs.back().j_total;
  int consecutive = 0;

  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    bool moved_r = true;
    bool moved_c = true;

    // Source update: one projected step on the full stacked matrix.
    Matrix residual = x.data() - mix_forward_raw(c, rt);
    Matrix grad_r(rt.rows(), rt.cols());
    for (Index p = 0; p < p_count; ++p)
      for (Index m = 0; m < m_count; ++m)
        grad_r.row(p * m_count + m) = -c(p, m) * residual.row(p);
    if (mu != 0.0) grad_r += mu * inertia_gradient_raw(rt, m_count);

    Matrix rt_old;
    if (!opts.armijo) rt_old = rt;
    double j_after_r;
    if (opts.armijo) {
      const double j_here = total_cost(c, rt);
      auto outcome = armijo_project_step(
          rt, grad_r, j_here,
          [&](const Matrix& cand) { return total_cost(c, cand); }, eps, opts,
          opts.step_R);
      rt = std::move(outcome.x);
      moved_r = outcome.moved;
      j_after_r = outcome.cost;
      if (probe && probe->on_step) probe->on_step(iter, 'R', j_here, j_after_r);
    } else {
      rt = (rt - opts.step_R * grad_r).cwiseMax(eps);
      j_after_r = 0.0;  // unused
    }

    // Coefficient update, one independent step per pixel. The line-searched
    // mode sweeps against the updated sources; the fixed-step mode follows
    // the plain listing and reads the sources from the previous iterate.
    if (opts.armijo) {
      std::vector<char> moved(static_cast<std::size_t>(p_count), 0);
      parallel_for(p_count, [&](Index p) {
        const auto rp = rt.middleRows(p * m_count, m_count);
        const Vector xp = x.data().row(p).transpose();
        const Vector cp = c.row(p).transpose();
        const Vector res_p = xp - rp.transpose() * cp;
        const double jp = 0.5 * res_p.squaredNorm();
        const Vector grad_p = -(rp * res_p);
        auto outcome = armijo_project_step(
            cp, grad_p, jp,
            [&](const Vector& cand) {
              return 0.5 * (xp - rp.transpose() * cand).squaredNorm();
            },
            eps, opts, opts.step_C);
        c.row(p) = outcome.x.transpose();
        moved[static_cast<std::size_t>(p)] = outcome.moved ? 1 : 0;
      });
      moved_c = false;
      for (char mv : moved) moved_c = moved_c || mv != 0;
    } else {
      parallel_for(p_count, [&](Index p) {
        const auto rp = rt_old.middleRows(p * m_count, m_count);
        const Vector cp = c.row(p).transpose();
        const Vector grad_p = -(rp * (x.data().row(p).transpose() - rp.transpose() * cp));
        c.row(p) = (cp - opts.step_C * grad_p).cwiseMax(eps).transpose();
      });
    }

    // Record before normalization; normalization may trade cost for
    // feasibility and is excluded from the descent accounting.
    const double j_re = 0.5 * (x.data() - mix_forward_raw(c, rt)).squaredNorm();
    const double j_i = inertia_raw(rt, m_count);
    const double j_total = mu != 0.0 ? j_re + mu * j_i : j_re;
    if (!std::isfinite(j_total))
      throw divergence_error(
          "solver diverged: non-finite cost at iteration " + std::to_string(iter),
          iter);
    trace.costs.push_back({iter, j_re, j_i, j_total});
    trace.iterations_run = iter;
    if (probe && probe->on_step && opts.armijo)
      probe->on_step(iter, 'C', j_after_r, j_total);

    for (Index p = 0; p < p_count; ++p) c.row(p) /= c.row(p).sum();

    if (opts.armijo && !moved_r && !moved_c) {
      trace.stop_reason = StopReason::step_stalled;
      break;
    }
    const double rel = std::abs(j_total - j_prev) / std::max(j_prev, 1e-30);
    consecutive = rel < opts.tol_rel ? consecutive + 1 : 0;
    j_prev = j_total;
    if (consecutive >= opts.tol_consecutive) {
      trace.stop_reason = StopReason::tol_reached;
      break;
    }
  }
  trace.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return UnmixResult{StackedEndmembers(std::move(rt), m_count),
                     AbundanceMatrix(std::move(c)), std::move(trace)};
}

inline NmfResult run_flat(const ObservationMatrix& x, const EndmemberMatrix& r0,
                          const AbundanceMatrix& c0, const SolverOptions& opts,
                          const StepProbe* probe) {
  validate_options(opts);
  if (r0.bands() != x.bands() || c0.pixels() != x.pixels() ||
      c0.classes() != r0.classes())
    throw shape_error("solver: initialization does not match the observations");
  const auto t_start = std::chrono::steady_clock::now();
  const Index p_count = x.pixels();
  const Index m_count = r0.classes();
  const double eps = opts.epsilon_floor;

  Matrix r = project_positive(r0.data(), eps);
  Matrix c = c0.data();
  const auto cost = [&](const Matrix& cc, const Matrix& rr) {
    return 0.5 * (x.data() - cc * rr).squaredNorm();
  };

  SolverTrace trace;
  trace.costs.push_back({0, cost(c, r), 0.0, cost(c, r)});
  double j_prev = trace.costs.back().j_total;
  int consecutive = 0;

  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    bool moved_r = true;
    bool moved_c = true;

    const Matrix residual = x.data() - c * r;
    const Matrix grad_r = -c.transpose() * residual;
    if (opts.armijo) {
      const double j_here = cost(c, r);
      auto outcome = armijo_project_step(
          r, grad_r, j_here, [&](const Matrix& cand) { return cost(c, cand); },
          eps, opts, opts.step_R);
      r = std::move(outcome.x);
      moved_r = outcome.moved;
      if (probe && probe->on_step) probe->on_step(iter, 'R', j_here, outcome.cost);
    } else {
      r = (r - opts.step_R * grad_r).cwiseMax(eps);
    }

    if (opts.armijo) {
      std::vector<char> moved(static_cast<std::size_t>(p_count), 0);
      parallel_for(p_count, [&](Index p) {
        const Vector xp = x.data().row(p).transpose();
        const Vector cp = c.row(p).transpose();
        const Vector res_p = xp - r.transpose() * cp;
        const Vector grad_p = -(r * res_p);
        auto outcome = armijo_project_step(
            cp, grad_p, 0.5 * res_p.squaredNorm(),
            [&](const Vector& cand) {
              return 0.5 * (xp - r.transpose() * cand).squaredNorm();
            },
            eps, opts, opts.step_C);
        c.row(p) = outcome.x.transpose();
        moved[static_cast<std::size_t>(p)] = outcome.moved ? 1 : 0;
      });
      moved_c = false;
      for (char mv : moved) moved_c = moved_c || mv != 0;
    } else {
      parallel_for(p_count, [&](Index p) {
        const Vector cp = c.row(p).transpose();
        const Vector grad_p = -(r * (x.data().row(p).transpose() - r.transpose() * cp));
        c.row(p) = (cp - opts.step_C * grad_p).cwiseMax(eps).transpose();
      });
    }

    const double j_re = cost(c, r);
    if (!std::isfinite(j_re))
      throw divergence_error(
          "solver diverged: non-finite cost at iteration " + std::to_string(iter),
          iter);
    trace.costs.push_back({iter, j_re, 0.0, j_re});
    trace.iterations_run = iter;

    for (Index p = 0; p < p_count; ++p) c.row(p) /= c.row(p).sum();

    if (opts.armijo && !moved_r && !moved_c) {
      trace.stop_reason = StopReason::step_stalled;
      break;
    }
    const double rel = std::abs(j_re - j_prev) / std::max(j_prev, 1e-30);
    consecutive = rel < opts.tol_rel ? consecutive + 1 : 0;
    j_prev = j_re;
    if (consecutive >= opts.tol_consecutive) {
      trace.stop_reason = StopReason::tol_reached;
      break;
    }
  }
  trace.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return NmfResult{EndmemberMatrix(std::move(r)), AbundanceMatrix(std::move(c)),
                   std::move(trace)};
}

}  // namespace detail

/// Standard NMF (shared endmember set), projected gradient with alternating
/// source/coefficient updates and sum-to-one normalization. opts.mu is
/// ignored.
inline NmfResult solve_nmf(const ObservationMatrix& x, const EndmemberMatrix& r0,
                           const AbundanceMatrix& c0, const SolverOptions& opts) {
  return detail::run_flat(x, r0, c0, opts, nullptr);
}

/// Pixel-by-pixel NMF without any spread control.
inline UnmixResult solve_upnmf(const ObservationMatrix& x,
                               const StackedEndmembers& r0,
                               const AbundanceMatrix& c0,
                               const SolverOptions& opts) {
  return detail::run_pixelwise(x, r0, c0, opts, 0.0, nullptr);
}

/// Pixel-by-pixel NMF with the class-inertia penalty weighted by opts.mu.
/// With mu = 0 the iteration is identical to solve_upnmf.
inline UnmixResult solve_ipnmf(const ObservationMatrix& x,
                               const StackedEndmembers& r0,
                               const AbundanceMatrix& c0,
                               const SolverOptions& opts) {
  return detail::run_pixelwise(x, r0, c0, opts, opts.mu, nullptr);
}

}  // namespace unmix

#endif  // UNMIX_SOLVERS_HPP
