#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "omenn/error.hpp"

namespace omenn {

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  /// Rank-2 tensor from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;

  /// Rows and columns of a rank-2 tensor.
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::vector<double>& storage() noexcept { return data_; }
  [[nodiscard]] const std::vector<double>& storage() const noexcept { return data_; }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data under a new shape with equal element count.
  [[nodiscard]] Tensor reshaped(std::vector<std::size_t> shape) const;

  [[nodiscard]] bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Token-major activation layout: `tokens` rows of `channels` values. For
/// image data the tokens are the row-major spatial grid height x width.
struct Shape2D {
  std::size_t tokens = 0;
  std::size_t channels = 0;
  std::size_t height = 0;  // 0 when not spatial
  std::size_t width = 0;

  [[nodiscard]] bool spatial() const noexcept { return height != 0 && width != 0; }
  [[nodiscard]] std::size_t size() const noexcept { return tokens * channels; }
  [[nodiscard]] bool valid() const noexcept {
    return tokens > 0 && channels > 0 && (!spatial() || height * width == tokens) &&
           ((height == 0) == (width == 0));
  }
  friend bool operator==(const Shape2D&, const Shape2D&) = default;
};

Shape2D flat_shape(std::size_t tokens, std::size_t channels);
Shape2D image_shape(std::size_t height, std::size_t width, std::size_t channels);

// Basic algebra (rank-2 unless noted).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);

/// Column-major index of element (i, j) of a matrix with `rows` rows.
constexpr std::size_t vec_index(std::size_t i, std::size_t j, std::size_t rows) noexcept {
  return j * rows + i;
}

/// Read-only column-major view over a row-major matrix; no copy is made.
class VecView {
 public:
  explicit VecView(const Tensor& m);
  [[nodiscard]] std::size_t size() const noexcept { return rows_ * cols_; }
  double operator[](std::size_t k) const noexcept {
    return m_->data()[(k % rows_) * cols_ + k / rows_];
  }

 private:
  const Tensor* m_;
  std::size_t rows_;
  std::size_t cols_;
};

/// Column-major stacking of a rank-2 tensor into a rank-1 tensor.
Tensor vec(const Tensor& x);
/// Inverse of vec.
Tensor unvec(const Tensor& v, std::size_t rows, std::size_t cols);

/// Kronecker product of two rank-2 tensors.
Tensor kron(const Tensor& a, const Tensor& b);

struct ConvGeometry {
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::size_t kernel_height = 0;
  std::size_t kernel_width = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  [[nodiscard]] std::size_t out_height() const;
  [[nodiscard]] std::size_t out_width() const;
  [[nodiscard]] std::size_t out_tokens() const { return out_height() * out_width(); }
  /// Throws a shape error when the kernel does not fit the padded input.
  void validate() const;
  /// Input token under kernel offset (ki, kj) for output (oi, oj); -1 when the
  /// cell falls in the zero padding.
  [[nodiscard]] long source_token(std::size_t oi, std::size_t oj, std::size_t ki,
                                  std::size_t kj) const noexcept;
};

/// Patch matrix of shape (kh*kw*d) x t_out. Row index (ki*kw + kj)*d + c,
/// column index = output token. Input is h x w x d (or (h*w) x d).
Tensor im2col(const Tensor& x, const ConvGeometry& geom);

/// Dense doubly block-Toeplitz matrix T(K) with T(K) * vec(X) == vec(conv(X, K)),
/// column-major vectorization over (tokens, channels). Kernel is kh x kw x d_in x d_out.
inline constexpr std::size_t kDefaultDenseCap = 4096;
Tensor dbt_matrix(const Tensor& kernel, const ConvGeometry& geom,
                  std::size_t cap = kDefaultDenseCap);

}  // namespace omenn
