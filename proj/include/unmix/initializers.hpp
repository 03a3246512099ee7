#ifndef UNMIX_INITIALIZERS_HPP
#define UNMIX_INITIALIZERS_HPP

// Initial spectra and coefficients for the solvers, plus the geometric
// baselines N-FINDR and VCA and the FCLS abundance regression.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "unmix/core.hpp"
#include "unmix/metrics.hpp"
#include "unmix/parallel.hpp"
#include "unmix/random.hpp"

namespace unmix {

enum class SpectraInit { random_pixels, nfindr, vca, class_means, manual };
enum class CoeffInit { uniform, fcls };

/// How to build the starting point of a solver run.
struct InitSpec {
  SpectraInit spectra_mode = SpectraInit::vca;
  CoeffInit coeff_mode = CoeffInit::uniform;
  std::uint64_t seed = 0;
  std::optional<EndmemberMatrix> manual_spectra;  // required for manual mode
};

/// Endmembers extracted by a pure-pixel method together with the pixels they
/// came from (ascending).
struct Extraction {
  EndmemberMatrix endmembers;
  std::vector<Index> pixel_indices;
};

/// M distinct observation rows chosen uniformly without replacement.
inline EndmemberMatrix init_random_pixels(const ObservationMatrix& x, Index m,
                                          std::uint64_t seed) {
  if (m < 1 || m > x.pixels())
    throw shape_error("init_random_pixels: need 1 <= M <= P");
  auto rng = detail::make_engine(seed);
  std::vector<Index> idx(static_cast<std::size_t>(x.pixels()));
  std::iota(idx.begin(), idx.end(), Index{0});
  // Partial Fisher-Yates: the first M slots end up a uniform sample.
  for (Index i = 0; i < m; ++i) {
    std::uniform_int_distribution<Index> pick(i, x.pixels() - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  Matrix out(m, x.bands());
  for (Index i = 0; i < m; ++i) out.row(i) = x.data().row(idx[static_cast<std::size_t>(i)]);
  return EndmemberMatrix(std::move(out));
}

namespace detail {

inline void require_spread(const Matrix& x, const char* who) {
  const Matrix centered = x.rowwise() - x.colwise().mean();
  if (!(centered.squaredNorm() > 0.0))
    throw data_error(std::string(who) + ": degenerate data (all pixels identical)");
}

// Simplex volume proxy: |det| of the (M x M) matrix whose columns are the
// candidate vertices in (M-1)-dim coordinates augmented with a ones row.
inline double simplex_volume(const Matrix& scores, const std::vector<Index>& vertices) {
  const Index m = static_cast<Index>(vertices.size());
  Matrix e(m, m);
  for (Index j = 0; j < m; ++j) {
    e(0, j) = 1.0;
    e.block(1, j, m - 1, 1) =
        scores.row(vertices[static_cast<std::size_t>(j)]).transpose();
  }
  return std::abs(e.determinant());
}

}  // namespace detail

/// N-FINDR: searches for the pixel set spanning the maximum-volume simplex in
/// the (M-1)-dimensional principal subspace. Greedy single-swap ascent from
/// several seeded starting sets; the best local optimum wins.
inline Extraction nfindr(const ObservationMatrix& x, Index m, std::uint64_t seed,
                         int restarts = 5) {
  const Index p_count = x.pixels();
  if (m < 2) throw shape_error("nfindr: need M >= 2");
  if (p_count < m) throw shape_error("nfindr: need P >= M");
  if (x.bands() < m - 1) throw shape_error("nfindr: need L >= M-1");
  detail::require_spread(x.data(), "nfindr");

  auto [model, scores] = pca_fit_project(x.data(), m - 1);
  (void)model;

  auto rng = detail::make_engine(seed);
  std::vector<Index> best_set;
  double best_vol = -1.0;
  for (int r = 0; r < restarts; ++r) {
    std::vector<Index> idx(static_cast<std::size_t>(p_count));
    std::iota(idx.begin(), idx.end(), Index{0});
    for (Index i = 0; i < m; ++i) {
      std::uniform_int_distribution<Index> pick(i, p_count - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<Index> current(idx.begin(), idx.begin() + m);
    double vol = detail::simplex_volume(scores, current);

    bool improved = true;
    while (improved) {
      improved = false;
      Index best_slot = -1, best_pixel = -1;
      double best_swap = vol;
      for (Index slot = 0; slot < m; ++slot) {
        std::vector<Index> trial = current;
        for (Index q = 0; q < p_count; ++q) {
          if (std::find(current.begin(), current.end(), q) != current.end()) continue;
          trial[static_cast<std::size_t>(slot)] = q;
          const double v = detail::simplex_volume(scores, trial);
          if (v > best_swap) {
            best_swap = v;
            best_slot = slot;
            best_pixel = q;
          }
        }
      }
      if (best_slot >= 0) {
        current[static_cast<std::size_t>(best_slot)] = best_pixel;
        vol = best_swap;
        improved = true;
      }
    }
    if (vol > best_vol) {
      best_vol = vol;
      best_set = current;
    }
  }
  if (!(best_vol > 0.0))
    throw data_error("nfindr: every candidate simplex is degenerate");

  std::sort(best_set.begin(), best_set.end());
  Matrix out(m, x.bands());
  for (Index i = 0; i < m; ++i)
    out.row(i) = x.data().row(best_set[static_cast<std::size_t>(i)]);
  return Extraction{EndmemberMatrix(std::move(out)), std::move(best_set)};
}

/// VCA: projects onto the M-dimensional SVD subspace of the mean-removed
/// data (coordinates augmented with a constant so the selection stays
/// well-posed on noiseless simplices), then repeatedly picks the pixel most
/// extreme along a direction orthogonal to the endmembers found so far.
inline Extraction vca(const ObservationMatrix& x, Index m, std::uint64_t seed) {
  const Index p_count = x.pixels();
  if (m < 2) throw shape_error("vca: need M >= 2");
  if (p_count < m) throw shape_error("vca: need P >= M");
  if (x.bands() < m) throw shape_error("vca: need L >= M");
  detail::require_spread(x.data(), "vca");

  const Matrix centered = x.data().rowwise() - x.data().colwise().mean();
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  const Matrix subspace = svd.matrixV().leftCols(m);  // L x M
  Matrix y(p_count, m + 1);
  y.leftCols(m) = centered * subspace;
  y.col(m).setOnes();

  auto rng = detail::make_engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Index> selected;
  Matrix basis(m + 1, 0);  // orthonormal basis of selected coordinate vectors
  for (Index i = 0; i < m; ++i) {
    Vector f(m + 1);
    double fnorm = 0.0;
    for (int attempt = 0; attempt < 64 && !(fnorm > 1e-12); ++attempt) {
      for (Index j = 0; j < m + 1; ++j) f(j) = gauss(rng);
      if (basis.cols() > 0) f -= basis * (basis.transpose() * f);
      fnorm = f.norm();
    }
    if (!(fnorm > 0.0)) throw data_error("vca: could not find a projection direction");
    f /= fnorm;

    const Vector proj = y * f;
    Index best = -1;
    double best_val = -1.0;
    for (Index p = 0; p < p_count; ++p) {
      if (std::find(selected.begin(), selected.end(), p) != selected.end()) continue;
      const double v = std::abs(proj(p));
      if (v > best_val) {  // strict: ties keep the lowest pixel index
        best_val = v;
        best = p;
      }
    }
    selected.push_back(best);

    Vector col = y.row(best).transpose();
    if (basis.cols() > 0) col -= basis * (basis.transpose() * col);
    const double cnorm = col.norm();
    if (cnorm > 1e-12) {
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = col / cnorm;
    }
  }

  std::sort(selected.begin(), selected.end());
  Matrix out(m, x.bands());
  for (Index i = 0; i < m; ++i)
    out.row(i) = x.data().row(selected[static_cast<std::size_t>(i)]);
  return Extraction{EndmemberMatrix(std::move(out)), std::move(selected)};
}

/// Per-class average of the true per-pixel sources (semi-synthetic runs only).
inline EndmemberMatrix class_means(const StackedEndmembers& r_true) {
  Matrix out(r_true.classes(), r_true.bands());
  for (Index m = 0; m < r_true.classes(); ++m)
    out.row(m) = r_true.class_slice(m).colwise().mean();
  return EndmemberMatrix(std::move(out));
}

/// All coefficients set to the same constant 1/M.
inline AbundanceMatrix uniform_coefficients(Index pixels, Index classes) {
  if (pixels < 1 || classes < 1)
    throw shape_error("uniform_coefficients: need P, M >= 1");
  return AbundanceMatrix(
      Matrix::Constant(pixels, classes, 1.0 / static_cast<double>(classes)));
}

namespace detail {

// Lawson-Hanson active-set NNLS: min ||A z - b||_2 with z >= 0.
inline Vector nnls(const Matrix& a, const Vector& b, int max_iter) {
  const Index n = a.cols();
  Vector z = Vector::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  Vector w = a.transpose() * b;
  const double tol = 1e-12 * a.norm() * (b.norm() + 1.0);
  int iters = 0;
  while (true) {
    Index cand = -1;
    double wmax = tol;
    for (Index i = 0; i < n; ++i) {
      if (!passive[static_cast<std::size_t>(i)] && w(i) > wmax) {
        wmax = w(i);
        cand = i;
      }
    }
    if (cand < 0) break;
    passive[static_cast<std::size_t>(cand)] = true;

    while (true) {
      if (++iters > max_iter)
        throw convergence_error("nnls: iteration cap exceeded");
      std::vector<Index> pset;
      for (Index i = 0; i < n; ++i)
        if (passive[static_cast<std::size_t>(i)]) pset.push_back(i);
      Matrix ap(a.rows(), static_cast<Index>(pset.size()));
      for (std::size_t j = 0; j < pset.size(); ++j) ap.col(static_cast<Index>(j)) = a.col(pset[j]);
      const Vector zp = ap.colPivHouseholderQr().solve(b);

      bool feasible = true;
      for (Index j = 0; j < zp.size(); ++j)
        if (!(zp(j) > 0.0)) feasible = false;
      if (feasible) {
        z.setZero();
        for (std::size_t j = 0; j < pset.size(); ++j) z(pset[j]) = zp(static_cast<Index>(j));
        break;
      }
      double alpha = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < pset.size(); ++j) {
        const double zj = z(pset[j]);
        const double zpj = zp(static_cast<Index>(j));
        if (zpj <= 0.0) alpha = std::min(alpha, zj / (zj - zpj));
      }
      for (std::size_t j = 0; j < pset.size(); ++j) {
        const Index i = pset[j];
        z(i) += alpha * (zp(static_cast<Index>(j)) - z(i));
        if (z(i) <= 1e-14) {
          z(i) = 0.0;
          passive[static_cast<std::size_t>(i)] = false;
        }
      }
    }
    w = a.transpose() * (b - a * z);
  }
  return z;
}

}  // namespace detail

/// Fully constrained least squares: per pixel, the abundance vector closest
/// to x_p in the span of R under nonnegativity and sum-to-one. The sum
/// constraint enters as a delta-weighted all-ones equation appended to the
/// least-squares system; the active-set NNLS solution is then renormalized so
/// feasibility holds exactly even far outside the simplex hull.
inline AbundanceMatrix fcls(const ObservationMatrix& x, const EndmemberMatrix& r,
                            double delta = 1e3) {
  if (r.bands() != x.bands()) throw shape_error("fcls: band mismatch");
  if (r.classes() > r.bands()) throw shape_error("fcls: need M <= L");
  for (Index m = 0; m < r.classes(); ++m)
    if (!(r.data().row(m).norm() > 0.0))
      throw data_error("fcls: endmember " + std::to_string(m) + " is a zero row");

  const Index m_count = r.classes();
  const int cap = static_cast<int>(30 * m_count);
  Matrix a(x.bands() + 1, m_count);
  a.topRows(x.bands()) = r.data().transpose();
  a.row(x.bands()).setConstant(delta);

  Matrix c(x.pixels(), m_count);
  std::exception_ptr failure;
  std::mutex failure_guard;
  parallel_for(x.pixels(), [&](Index p) {
    try {
      Vector b(x.bands() + 1);
      b.head(x.bands()) = x.data().row(p).transpose();
      b(x.bands()) = delta;
      Vector z = detail::nnls(a, b, cap);
      const double s = z.sum();
      if (!(s > 0.0))
        throw data_error("fcls: pixel " + std::to_string(p) +
                         " yields an all-zero abundance vector");
      c.row(p) = (z / s).transpose();
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_guard);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);
  return AbundanceMatrix(std::move(c));
}

/// Builds the stacked starting point R-tilde(0): every pixel block is a copy
/// of the M seed spectra.
inline StackedEndmembers replicate_to_stacked(const EndmemberMatrix& r, Index pixels) {
  if (pixels < 1) throw shape_error("replicate_to_stacked: need pixels >= 1");
  Matrix out(pixels * r.classes(), r.bands());
  for (Index p = 0; p < pixels; ++p)
    out.middleRows(p * r.classes(), r.classes()) = r.data();
  return StackedEndmembers(std::move(out), r.classes());
}

/// Resolves an InitSpec into concrete (R0, C0) for a run on x.
/// `truth` is consulted only in class_means mode.
inline std::pair<EndmemberMatrix, AbundanceMatrix> build_initial(
    const ObservationMatrix& x, Index m, const InitSpec& spec,
    const StackedEndmembers* truth = nullptr) {
  std::optional<EndmemberMatrix> r0;
  switch (spec.spectra_mode) {
    case SpectraInit::random_pixels:
      r0 = init_random_pixels(x, m, spec.seed);
      break;
    case SpectraInit::nfindr:
      r0 = nfindr(x, m, spec.seed).endmembers;
      break;
    case SpectraInit::vca:
      r0 = vca(x, m, spec.seed).endmembers;
      break;
    case SpectraInit::class_means:
      if (truth == nullptr)
        throw data_error("build_initial: class-means init needs true sources");
      if (truth->classes() != m)
        throw shape_error("build_initial: true sources disagree with M");
      r0 = class_means(*truth);
      break;
    case SpectraInit::manual:
      if (!spec.manual_spectra)
        throw data_error("build_initial: manual init needs an M x L matrix");
      if (spec.manual_spectra->classes() != m ||
          spec.manual_spectra->bands() != x.bands())
        throw shape_error("build_initial: manual spectra have the wrong shape");
      r0 = *spec.manual_spectra;
      break;
  }
  AbundanceMatrix c0 = spec.coeff_mode == CoeffInit::uniform
                           ? uniform_coefficients(x.pixels(), m)
                           : fcls(x, *r0);
  return {std::move(*r0), std::move(c0)};
}

}  // namespace unmix

#endif  // UNMIX_INITIALIZERS_HPP
