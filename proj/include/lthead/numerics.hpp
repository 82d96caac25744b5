#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lthead {

/// Dense row-major matrix of doubles. Vectors are stored as 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  void fill(double v);
  bool all_finite() const noexcept;
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Counter-based generator (SplitMix64). Identical seeds give identical
/// streams on every platform; all distributions are implemented here rather
/// than through <random> so that holds for derived draws too.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed), counter_(0) {}

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one draw per call, no cached spare).
  double normal() noexcept;

  /// Independent stream keyed by `stream_id`; does not advance this generator.
  Rng substream(std::uint64_t stream_id) const noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose in the caller.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// a^T * b.
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

double log_sum_exp(std::span<const double> v);
Matrix softmax_rows(const Matrix& logits);

struct LayerNormCache {
  Matrix normalized;         // (x - mean) * rstd, per row
  std::vector<double> rstd;  // 1 / sqrt(var + eps), per row
};

struct LayerNormGrads {
  Matrix dx;
  Matrix dgamma;  // 1 x D
  Matrix dbeta;   // 1 x D
};

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer normalization with affine parameters gamma, beta (1 x D).
Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps,
                  LayerNormCache* cache);
LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Matrix& gamma,
                                   const Matrix& dy);

double gelu(double x) noexcept;
double gelu_derivative(double x) noexcept;
/// The tanh term of gelu(x); lets the backward pass reuse the forward value.
double gelu_tanh(double x) noexcept;
double gelu_derivative_from_tanh(double x, double tanh_term) noexcept;

/// Inverted-dropout mask: entries are 0 or 1/(1-rate). Eval mode or rate 0
/// returns all ones without consuming randomness.
Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng, bool train_mode);

/// Mutable view of one named parameter tensor.
struct NamedParam {
  std::string name;
  Matrix* value;
};
using ParamRefs = std::vector<NamedParam>;

std::size_t total_size(const ParamRefs& params);
std::vector<double> flatten(const ParamRefs& params);
void assign_flat(const ParamRefs& params, std::span<const double> values);

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-5;
  /// Lower bound on the relative-error denominator so that gradients that are
  /// zero up to finite-difference noise do not register as failures.
  double denom_floor = 1e-4;
};

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = true;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Compares `analytic` against central differences of `f` at `params`.
GradCheckReport finite_diff_check(const ScalarFunction& f, std::span<const double> params,
                                  std::span<const double> analytic,
                                  const GradCheckOptions& options = {});

}  // namespace lthead
