#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "talnet/errors.hpp"

namespace talnet {

// Dense row-major matrix. Row t of a temporal feature map is one cell.
template <typename Real>
class Matrix {
 public:
  using value_type = Real;

  Matrix() = default;
  Matrix(int rows, int cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}
  Matrix(int rows, int cols, std::vector<Real> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != checked_size(rows, cols)) throw ShapeError("matrix data size does not match shape");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  Real operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  Real* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const Real* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  std::span<Real> flat() { return data_; }
  std::span<const Real> flat() const { return data_; }

  bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  void fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename Other>
  Matrix<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Matrix<Other>(rows_, cols_, std::move(out));
  }

  bool operator==(const Matrix&) const = default;

 private:
  static std::size_t checked_size(int rows, int cols) {
    if (rows < 0 || cols < 0) throw ShapeError("negative matrix dimension");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<Real> data_;
};

// One stream of one video: T cells by D channels, stored as 32-bit floats
// like the on-disk format.
struct FeatureGrid {
  Matrix<float> data;
  double cells_per_second = 1.0;

  int length() const { return data.rows(); }
  int dim() const { return data.cols(); }

  // Throws ShapeError / ConfigError if T < 1, D < 1, a non-finite entry, or
  // a non-positive rate.
  void validate() const;

  bool operator==(const FeatureGrid&) const = default;
};

// Side-by-side concatenation along channels; both grids must have equal T.
FeatureGrid concat_features(const FeatureGrid& a, const FeatureGrid& b);

}  // namespace talnet
