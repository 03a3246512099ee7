#ifndef UNMIX_METRICS_HPP
#define UNMIX_METRICS_HPP

// Evaluation criteria (per-pixel spectral angle, reconstruction error,
// coefficient error), pixel-to-pixel correlation and PCA projection for
// variability analysis.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "unmix/core.hpp"

namespace unmix {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kRadToDeg = 180.0 / kPi;

namespace detail {

// Pairwise (cascade) summation: a fixed association order that keeps
// aggregated means reproducible to 1e-12 regardless of how the per-pixel
// values were produced.
inline double pairwise_sum(const double* v, Index n) {
  if (n <= 4) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const Index half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

inline double pairwise_mean(const Vector& v) {
  return v.size() == 0 ? 0.0 : pairwise_sum(v.data(), v.size()) / static_cast<double>(v.size());
}

}  // namespace detail

/// Per-pixel values of one criterion plus their mean.
struct MetricReport {
  Vector per_pixel;
  double mean = 0.0;
  std::string metric_name;
  std::string units;
};

inline MetricReport make_report(std::string name, std::string units, Vector per_pixel) {
  MetricReport r;
  r.mean = detail::pairwise_mean(per_pixel);
  r.per_pixel = std::move(per_pixel);
  r.metric_name = std::move(name);
  r.units = std::move(units);
  return r;
}

/// Angle between two spectra in degrees; the arccos argument is clamped to
/// [-1, 1] so collinear pairs come out as exactly 0 instead of NaN.
inline double spectral_angle_deg(const Eigen::Ref<const Vector>& a,
                                 const Eigen::Ref<const Vector>& b) {
  if (a.size() != b.size())
    throw shape_error("spectral_angle_deg: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0))
    throw data_error("spectral_angle_deg: zero-norm spectrum");
  const double cosv = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return std::acos(cosv) * kRadToDeg;
}

/// Mean over classes of the angle between true and estimated spectra of one
/// pixel, classes paired by row index. Degrees.
inline double sam_per_pixel(const Matrix& r_true, const Matrix& r_est) {
  if (r_true.rows() != r_est.rows() || r_true.cols() != r_est.cols())
    throw shape_error("sam_per_pixel: shape mismatch");
  double acc = 0.0;
  for (Index m = 0; m < r_true.rows(); ++m)
    acc += spectral_angle_deg(r_true.row(m).transpose(), r_est.row(m).transpose());
  return acc / static_cast<double>(r_true.rows());
}

/// (1/L) * ||x_p - c_p^T R(p)||_2.
inline double reconstruction_error_per_pixel(const Eigen::Ref<const Vector>& x,
                                             const Eigen::Ref<const Vector>& c,
                                             const Matrix& r_pixel) {
  if (r_pixel.rows() != c.size() || r_pixel.cols() != x.size())
    throw shape_error("reconstruction_error_per_pixel: shape mismatch");
  const Vector recon = r_pixel.transpose() * c;
  return (x - recon).norm() / static_cast<double>(x.size());
}

/// (1/M) * ||c_p - c_hat_p||_2.
inline double coefficient_error_per_pixel(const Eigen::Ref<const Vector>& c,
                                          const Eigen::Ref<const Vector>& c_hat) {
  if (c.size() != c_hat.size())
    throw shape_error("coefficient_error_per_pixel: length mismatch");
  return (c - c_hat).norm() / static_cast<double>(c.size());
}

/// Pearson correlation between every pair of rows. Symmetric, unit diagonal,
/// entries clamped to [-1, 1]. A constant row has no defined correlation.
inline Matrix correlation_matrix(const Matrix& y) {
  const Index n = y.rows();
  const Index l = y.cols();
  if (n < 1 || l < 1) throw shape_error("correlation_matrix: empty input");
  // Each spectrum is centered along its own bands (row means).
  Matrix centered = y;
  Vector norms(n);
  for (Index i = 0; i < n; ++i) {
    const double mean = y.row(i).mean();
    centered.row(i).array() -= mean;
    norms(i) = centered.row(i).norm();
    if (!(norms(i) > 0.0))
      throw data_error("correlation_matrix: row " + std::to_string(i) +
                       " has zero variance");
  }
  Matrix corr(n, n);
  for (Index i = 0; i < n; ++i) {
    corr(i, i) = 1.0;
    for (Index j = i + 1; j < n; ++j) {
      const double v =
          centered.row(i).dot(centered.row(j)) / (norms(i) * norms(j));
      corr(i, j) = corr(j, i) = std::clamp(v, -1.0, 1.0);
    }
  }
  return corr;
}

/// Principal axes of a spectra set, eigenvalue-ordered.
struct PcaModel {
  Vector mean_spectrum;   // length L
  Matrix axes;            // K x L, orthonormal rows, descending eigenvalue
  Vector eigenvalues;     // K, nonincreasing, >= 0
};

/// Fits PCA on the rows of y (sample covariance of the centered rows) and
/// projects. Axis signs are fixed so the first nonzero coordinate of each
/// axis is positive, which keeps scores reproducible across runs.
inline std::pair<PcaModel, Matrix> pca_fit_project(const Matrix& y, Index k) {
  const Index n = y.rows();
  const Index l = y.cols();
  if (n < 2) throw shape_error("pca_fit_project: need at least two spectra");
  if (k < 1 || k > std::min(n, l))
    throw shape_error("pca_fit_project: component count " + std::to_string(k) +
                      " outside [1, min(N, L)]");
  PcaModel model;
  model.mean_spectrum = y.colwise().mean().transpose();
  Matrix centered = y.rowwise() - model.mean_spectrum.transpose();
  const Matrix cov =
      (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success)
    throw data_error("pca_fit_project: eigendecomposition failed");
  model.axes.resize(k, l);
  model.eigenvalues.resize(k);
  for (Index i = 0; i < k; ++i) {
    const Index src = l - 1 - i;  // Eigen sorts ascending
    Vector axis = eig.eigenvectors().col(src);
    for (Index j = 0; j < l; ++j) {
      if (std::abs(axis(j)) > 1e-14) {
        if (axis(j) < 0.0) axis = -axis;
        break;
      }
    }
    model.axes.row(i) = axis.transpose();
    model.eigenvalues(i) = std::max(0.0, eig.eigenvalues()(src));
  }
  Matrix scores = centered * model.axes.transpose();
  return {std::move(model), std::move(scores)};
}

// -- Report builders over whole experiments ---------------------------------

/// Per-pixel SAM between two stacked source sets, classes paired by index
/// after applying `perm` to the estimate: estimated class perm[m] is compared
/// with true class m. Pass the identity (or leave empty) for lineage pairing.
inline MetricReport sam_report(const StackedEndmembers& truth,
                               const StackedEndmembers& est,
                               const std::vector<Index>& perm = {}) {
  if (truth.pixels() != est.pixels() || truth.classes() != est.classes() ||
      truth.bands() != est.bands())
    throw shape_error("sam_report: shape mismatch");
  const Index p_count = truth.pixels();
  const Index m_count = truth.classes();
  std::vector<Index> map(static_cast<std::size_t>(m_count));
  if (perm.empty()) {
    std::iota(map.begin(), map.end(), Index{0});
  } else {
    if (static_cast<Index>(perm.size()) != m_count)
      throw shape_error("sam_report: permutation length mismatch");
    map = perm;
  }
  Vector per_pixel(p_count);
  for (Index p = 0; p < p_count; ++p) {
    double acc = 0.0;
    for (Index m = 0; m < m_count; ++m)
      acc += spectral_angle_deg(
          truth.data().row(p * m_count + m).transpose(),
          est.data().row(p * m_count + map[static_cast<std::size_t>(m)]).transpose());
    per_pixel(p) = acc / static_cast<double>(m_count);
  }
  return make_report("SAM", "degrees", std::move(per_pixel));
}

/// Per-pixel reconstruction error of an estimate pair against observations.
inline MetricReport re_report(const ObservationMatrix& x,
                              const AbundanceMatrix& c_est,
                              const StackedEndmembers& r_est) {
  if (x.pixels() != c_est.pixels() || x.pixels() != r_est.pixels() ||
      c_est.classes() != r_est.classes() || x.bands() != r_est.bands())
    throw shape_error("re_report: shape mismatch");
  Vector per_pixel(x.pixels());
  for (Index p = 0; p < x.pixels(); ++p)
    per_pixel(p) = reconstruction_error_per_pixel(
        x.data().row(p).transpose(), c_est.data().row(p).transpose(),
        r_est.pixel_block(p));
  return make_report("RE", "reflectance", std::move(per_pixel));
}

/// Per-pixel coefficient error; `perm` reorders estimated classes as in
/// sam_report.
inline MetricReport ce_report(const AbundanceMatrix& truth,
                              const AbundanceMatrix& est,
                              const std::vector<Index>& perm = {}) {
  if (truth.pixels() != est.pixels() || truth.classes() != est.classes())
    throw shape_error("ce_report: shape mismatch");
  const Index m_count = truth.classes();
  Matrix est_mapped = est.data();
  if (!perm.empty()) {
    if (static_cast<Index>(perm.size()) != m_count)
      throw shape_error("ce_report: permutation length mismatch");
    for (Index m = 0; m < m_count; ++m)
      est_mapped.col(m) = est.data().col(perm[static_cast<std::size_t>(m)]);
  }
  Vector per_pixel(truth.pixels());
  for (Index p = 0; p < truth.pixels(); ++p)
    per_pixel(p) = coefficient_error_per_pixel(truth.data().row(p).transpose(),
                                               est_mapped.row(p).transpose());
  return make_report("CE", "fraction", std::move(per_pixel));
}

/// Class pairing for estimates without lineage: the permutation of estimated
/// classes minimizing mean SAM, found by enumerating all M! pairings.
/// Returns (perm, mean SAM) with perm as accepted by sam_report/ce_report.
inline std::pair<std::vector<Index>, double> best_sam_permutation(
    const StackedEndmembers& truth, const StackedEndmembers& est) {
  if (truth.pixels() != est.pixels() || truth.classes() != est.classes() ||
      truth.bands() != est.bands())
    throw shape_error("best_sam_permutation: shape mismatch");
  const Index m_count = truth.classes();
  if (m_count > 8)
    throw std::invalid_argument("best_sam_permutation: supported for M <= 8");
  const Index p_count = truth.pixels();
  // mean_angle(i, j): mean over pixels of angle(true class i, est class j).
  Matrix mean_angle = Matrix::Zero(m_count, m_count);
  for (Index p = 0; p < p_count; ++p)
    for (Index i = 0; i < m_count; ++i)
      for (Index j = 0; j < m_count; ++j)
        mean_angle(i, j) += spectral_angle_deg(
            truth.data().row(p * m_count + i).transpose(),
            est.data().row(p * m_count + j).transpose());
  mean_angle /= static_cast<double>(p_count);

  std::vector<Index> perm(static_cast<std::size_t>(m_count));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::vector<Index> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (Index i = 0; i < m_count; ++i)
      cost += mean_angle(i, perm[static_cast<std::size_t>(i)]);
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best, best_cost / static_cast<double>(m_count)};
}

}  // namespace unmix

#endif  // UNMIX_METRICS_HPP
