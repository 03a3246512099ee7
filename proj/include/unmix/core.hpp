#ifndef UNMIX_CORE_HPP
#define UNMIX_CORE_HPP

// Mixing-model data types and the primitives shared by every solver:
// the pixel-major stacked-row convention, the forward model, positivity
// projection and sum-to-one normalization.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace unmix {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Dimension or index misuse on an otherwise valid value.
class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data violates a contract (zero-norm spectrum, degenerate row,
/// unreadable or malformed file, ...).
class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A solver produced a non-finite cost. Carries the offending iteration.
class divergence_error : public std::runtime_error {
 public:
  divergence_error(const std::string& what, int iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// An iterative routine hit its iteration cap without converging.
class convergence_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultEpsilonFloor = 1e-9;
inline constexpr double kSumToOneTolerance = 1e-9;

/// Stacked row index for pixel p and class m, all 1-based:
/// row_of(p, m, M) = (p-1)*M + m. Bijective over {1..P}x{1..M} -> {1..PM}.
inline Index row_of(Index p, Index m, Index num_classes) {
  if (num_classes < 1)
    throw shape_error("row_of: class count must be >= 1");
  if (m < 1 || m > num_classes)
    throw std::out_of_range("row_of: class index " + std::to_string(m) +
                            " outside [1, " + std::to_string(num_classes) + "]");
  if (p < 1) throw std::out_of_range("row_of: pixel index must be >= 1");
  return (p - 1) * num_classes + m;
}

namespace detail {

inline void require_nonnegative(const Matrix& a, const char* who) {
  if (!(a.array() >= 0.0).all())
    throw data_error(std::string(who) + ": entries must be nonnegative and finite");
}

}  // namespace detail

/// X: one sensed reflectance spectrum per row, P pixels by L bands.
class ObservationMatrix {
 public:
  explicit ObservationMatrix(Matrix data) : data_(std::move(data)) {
    if (data_.rows() < 1 || data_.cols() < 1)
      throw shape_error("ObservationMatrix: need at least one pixel and one band");
    detail::require_nonnegative(data_, "ObservationMatrix");
  }

  const Matrix& data() const { return data_; }
  Index pixels() const { return data_.rows(); }
  Index bands() const { return data_.cols(); }

 private:
  Matrix data_;
};

/// R: one endmember spectrum per row, M classes by L bands (the
/// no-variability case where every pixel shares the same sources).
class EndmemberMatrix {
 public:
  explicit EndmemberMatrix(Matrix data) : data_(std::move(data)) {
    if (data_.rows() < 1 || data_.cols() < 1)
      throw shape_error("EndmemberMatrix: need at least one class and one band");
    detail::require_nonnegative(data_, "EndmemberMatrix");
  }

  const Matrix& data() const { return data_; }
  Index classes() const { return data_.rows(); }
  Index bands() const { return data_.cols(); }

 private:
  Matrix data_;
};

/// R-tilde: all per-pixel source estimates stacked pixel-major, PM rows by
/// L bands. Row (p-1)*M + m (1-based) holds the class-m spectrum of pixel p.
class StackedEndmembers {
 public:
  StackedEndmembers(Matrix data, Index num_classes)
      : data_(std::move(data)), classes_(num_classes) {
    if (classes_ < 1)
      throw shape_error("StackedEndmembers: class count must be >= 1");
    if (data_.rows() < classes_ || data_.rows() % classes_ != 0)
      throw shape_error("StackedEndmembers: row count " +
                        std::to_string(data_.rows()) +
                        " is not a positive multiple of M=" +
                        std::to_string(classes_));
    if (data_.cols() < 1)
      throw shape_error("StackedEndmembers: need at least one band");
    detail::require_nonnegative(data_, "StackedEndmembers");
  }

  const Matrix& data() const { return data_; }
  Index classes() const { return classes_; }
  Index pixels() const { return data_.rows() / classes_; }
  Index bands() const { return data_.cols(); }

  /// M x L block of pixel p (0-based).
  Eigen::Block<const Matrix> pixel_block(Index p) const {
    if (p < 0 || p >= pixels())
      throw std::out_of_range("StackedEndmembers: pixel index out of range");
    return data_.middleRows(p * classes_, classes_);
  }

  /// P x L matrix of the class-m rows (0-based), one per pixel.
  Matrix class_slice(Index m) const {
    if (m < 0 || m >= classes_)
      throw std::out_of_range("StackedEndmembers: class index out of range");
    const Index p_count = pixels();
    Matrix slice(p_count, data_.cols());
    for (Index p = 0; p < p_count; ++p) slice.row(p) = data_.row(p * classes_ + m);
    return slice;
  }

 private:
  Matrix data_;
  Index classes_;
};

/// C: the P nonzero blocks of the block-diagonal mixing matrix, stored
/// compactly as P x M. Rows sum to one; the off-block zeros are an indexing
/// convention, never materialized.
class AbundanceMatrix {
 public:
  explicit AbundanceMatrix(Matrix data) : data_(std::move(data)) {
    if (data_.rows() < 1 || data_.cols() < 1)
      throw shape_error("AbundanceMatrix: need at least one pixel and one class");
    detail::require_nonnegative(data_, "AbundanceMatrix");
    for (Index p = 0; p < data_.rows(); ++p) {
      if (std::abs(data_.row(p).sum() - 1.0) > kSumToOneTolerance)
        throw data_error("AbundanceMatrix: row " + std::to_string(p) +
                         " does not sum to one");
    }
  }

  const Matrix& data() const { return data_; }
  Index pixels() const { return data_.rows(); }
  Index classes() const { return data_.cols(); }

 private:
  Matrix data_;
};

/// Entrywise max(a, eps_floor). Idempotent.
inline Matrix project_positive(const Matrix& a, double eps_floor) {
  if (!(eps_floor > 0.0))
    throw std::invalid_argument("project_positive: eps_floor must be > 0");
  return a.cwiseMax(eps_floor);
}

/// Divides each row by its sum. Rows must be nonnegative with positive sum.
inline AbundanceMatrix normalize_sum_to_one(const Matrix& c) {
  Matrix out = c;
  for (Index p = 0; p < out.rows(); ++p) {
    const double s = out.row(p).sum();
    if (!(s > 0.0))
      throw data_error("normalize_sum_to_one: row " + std::to_string(p) +
                       " has nonpositive sum");
    out.row(p) /= s;
  }
  return AbundanceMatrix(std::move(out));
}

/// Forward model: output row p is c_p^T R(p), i.e. sum_m c_pm * rtilde[(p,m)].
/// Works blockwise; the P x PM block-diagonal matrix is never formed.
inline ObservationMatrix mix_forward(const AbundanceMatrix& c,
                                     const StackedEndmembers& rtilde) {
  if (c.classes() != rtilde.classes() || c.pixels() != rtilde.pixels())
    throw shape_error("mix_forward: abundance is " + std::to_string(c.pixels()) +
                      "x" + std::to_string(c.classes()) + " but sources have P=" +
                      std::to_string(rtilde.pixels()) + ", M=" +
                      std::to_string(rtilde.classes()));
  Matrix x(c.pixels(), rtilde.bands());
  for (Index p = 0; p < c.pixels(); ++p)
    x.row(p) = c.data().row(p) * rtilde.pixel_block(p);
  return ObservationMatrix(std::move(x));
}

namespace detail {

// Raw-matrix forward model for solver internals, where iterates are plain
// matrices that need not satisfy the domain-type invariants yet.
inline Matrix mix_forward_raw(const Matrix& c, const Matrix& rtilde) {
  const Index num_classes = c.cols();
  Matrix x(c.rows(), rtilde.cols());
  for (Index p = 0; p < c.rows(); ++p)
    x.row(p) = c.row(p) * rtilde.middleRows(p * num_classes, num_classes);
  return x;
}

}  // namespace detail

}  // namespace unmix

#endif  // UNMIX_CORE_HPP
