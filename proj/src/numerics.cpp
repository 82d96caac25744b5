#include "lthead/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "lthead/errors.hpp"

namespace lthead {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------

std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t Rng::next_u64() noexcept {
  ++counter_;
  return mix64(seed_ + counter_ * kGolden);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw DomainError("Rng::below: empty range");
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x >= threshold) return x % n;
  }
}

double Rng::normal() noexcept {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::substream(std::uint64_t stream_id) const noexcept {
  return Rng(mix64(seed_ ^ mix64(stream_id + kGolden)));
}

// ---------------------------------------------------------------------------

// All products accumulate each output element over the inner index in
// ascending order. The inner loop runs over the output row, which lets the
// compiler vectorize without reassociating any sum.
namespace {

// Eight doubles handled as one GCC vector; the compiler maps it onto however
// many SIMD registers the target has.
using v8d = double __attribute__((vector_size(64)));

// C (n x m) = A (n x k) * B (k x m) with B and C row-major and A(i, p) at
// a[i * ars + p * acs], so A may be a transposed view. Every C entry is
// accumulated from zero over p = 0..k-1 in ascending order, exactly like the
// textbook triple loop; the tiling only changes which entries are in flight together.
void gemm_kernel(const double* a, std::size_t ars, std::size_t acs, const double* b, double* c,
                 std::size_t n, std::size_t k, std::size_t m) {
  constexpr std::size_t MR = 4, NR = 8;
  const std::size_t m_full = m - m % NR;
  std::size_t i0 = 0;
  for (; i0 + MR <= n; i0 += MR) {
    const double* a0 = a + i0 * ars;
    const double* a1 = a0 + ars;
    const double* a2 = a1 + ars;
    const double* a3 = a2 + ars;
    for (std::size_t j0 = 0; j0 < m_full; j0 += NR) {
      v8d acc0 = {}, acc1 = {}, acc2 = {}, acc3 = {};
      const double* bp = b + j0;
      for (std::size_t p = 0; p < k; ++p, bp += m) {
        v8d bv;
        __builtin_memcpy(&bv, bp, sizeof bv);
        const std::size_t ap = p * acs;
        acc0 += a0[ap] * bv;
        acc1 += a1[ap] * bv;
        acc2 += a2[ap] * bv;
        acc3 += a3[ap] * bv;
      }
      __builtin_memcpy(c + i0 * m + j0, &acc0, sizeof acc0);
      __builtin_memcpy(c + (i0 + 1) * m + j0, &acc1, sizeof acc1);
      __builtin_memcpy(c + (i0 + 2) * m + j0, &acc2, sizeof acc2);
      __builtin_memcpy(c + (i0 + 3) * m + j0, &acc3, sizeof acc3);
    }
  }
  // Remaining rows and columns: the same per-entry order, one entry at a time.
  auto scalar_entry = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += a[i * ars + p * acs] * b[p * m + j];
    c[i * m + j] = s;
  };
  for (std::size_t i = 0; i < i0; ++i)
    for (std::size_t j = m_full; j < m; ++j) scalar_entry(i, j);
  for (std::size_t i = i0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) scalar_entry(i, j);
}

Matrix gemm(const Matrix& a, bool transposed_a, const Matrix& b, std::size_t n, std::size_t k,
            std::size_t m) {
  Matrix c(n, m);
  if (n == 0 || m == 0) return c;
  if (transposed_a) {
    gemm_kernel(a.data(), 1, a.cols(), b.data(), c.data(), n, k, m);
  } else {
    gemm_kernel(a.data(), a.cols(), 1, b.data(), c.data(), n, k, m);
  }
  return c;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  return gemm(a, false, b, a.rows(), a.cols(), b.cols());
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_bt: inner dimensions " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()));
  }
  return gemm(a, false, transpose(b), a.rows(), a.cols(), b.rows());
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_at: inner dimensions " + std::to_string(a.rows()) + " vs " +
                     std::to_string(b.rows()));
  }
  return gemm(a, true, b, a.cols(), a.rows(), b.cols());
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw DomainError("log_sum_exp: empty vector");
  const double hi = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - hi);
  return hi + std::log(sum);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    const double lse = log_sum_exp(in);
    auto o = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = std::exp(in[c] - lse);
  }
  return out;
}

// ---------------------------------------------------------------------------

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps,
                  LayerNormCache* cache) {
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: gamma/beta length must equal " + std::to_string(d));
  }
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  Matrix y(x.rows(), d);
  Matrix normalized(x.rows(), d);
  std::vector<double> rstd(x.rows());
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean *= inv_d;
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var *= inv_d;
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    auto nr = normalized.row(r);
    auto yr = y.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      nr[c] = (xr[c] - mean) * rs;
      yr[c] = gamma.data()[c] * nr[c] + beta.data()[c];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->rstd = std::move(rstd);
  }
  return y;
}

LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Matrix& gamma,
                                   const Matrix& dy) {
  const Matrix& xhat = cache.normalized;
  if (!dy.same_shape(xhat) || gamma.size() != xhat.cols()) {
    throw ShapeError("layer_norm_backward: shape mismatch");
  }
  const std::size_t d = xhat.cols();
  const double inv_d = 1.0 / static_cast<double>(d);
  LayerNormGrads g{Matrix(dy.rows(), d), Matrix(1, d), Matrix(1, d)};
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const auto dyr = dy.row(r);
    const auto xr = xhat.row(r);
    double sum_dxhat = 0.0, sum_dxhat_x = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      g.dgamma.data()[c] += dyr[c] * xr[c];
      g.dbeta.data()[c] += dyr[c];
      dxhat[c] = dyr[c] * gamma.data()[c];
      sum_dxhat += dxhat[c];
      sum_dxhat_x += dxhat[c] * xr[c];
    }
    auto dxr = g.dx.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      dxr[c] = cache.rstd[r] * (dxhat[c] - inv_d * sum_dxhat - xr[c] * inv_d * sum_dxhat_x);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu_tanh(double x) noexcept { return std::tanh(kGeluC * (x + kGeluA * x * x * x)); }

double gelu(double x) noexcept { return 0.5 * x * (1.0 + gelu_tanh(x)); }

double gelu_derivative_from_tanh(double x, double t) noexcept {
  const double dinner = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

double gelu_derivative(double x) noexcept { return gelu_derivative_from_tanh(x, gelu_tanh(x)); }

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng, bool train_mode) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw DomainError("dropout_mask: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  Matrix mask(rows, cols, 1.0);
  if (!train_mode || rate == 0.0) return mask;
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  for (double& m : mask.values()) m = rng.uniform() < keep ? scale : 0.0;
  return mask;
}

// ---------------------------------------------------------------------------

std::size_t total_size(const ParamRefs& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value->size();
  return n;
}

std::vector<double> flatten(const ParamRefs& params) {
  std::vector<double> out;
  out.reserve(total_size(params));
  for (const auto& p : params) {
    const auto v = p.value->values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void assign_flat(const ParamRefs& params, std::span<const double> values) {
  if (values.size() != total_size(params)) throw ShapeError("assign_flat: length mismatch");
  std::size_t offset = 0;
  for (const auto& p : params) {
    auto dst = p.value->values();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

GradCheckReport finite_diff_check(const ScalarFunction& f, std::span<const double> params,
                                  std::span<const double> analytic,
                                  const GradCheckOptions& options) {
  if (params.size() != analytic.size()) {
    throw ShapeError("finite_diff_check: gradient length differs from parameter length");
  }
  std::vector<double> probe(params.begin(), params.end());
  GradCheckReport report;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + options.eps;
    const double up = f(probe);
    probe[i] = saved - options.eps;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw EvaluationError("finite_diff_check: non-finite function value at coordinate " +
                            std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * options.eps);
    const double abs_err = std::abs(numeric - analytic[i]);
    const double denom =
        std::max({std::abs(numeric), std::abs(analytic[i]), options.denom_floor});
    const double rel_err = abs_err / denom;
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    if (rel_err > report.max_rel_err || !std::isfinite(rel_err)) {
      report.max_rel_err = rel_err;
      report.worst_index = i;
    }
  }
  report.checked = probe.size();
  report.passed = report.max_rel_err < options.tolerance;
  return report;
}

}  // namespace lthead
