#include "docbreg/kernels.hpp"

#include <cmath>
#include <limits>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace docbreg {

namespace {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void affine_row(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y, std::size_t r) {
  double* out = y.data.data() + r * y.cols;
  if (b.empty()) {
    for (std::size_t j = 0; j < y.cols; ++j) out[j] = 0.0;
  } else {
    for (std::size_t j = 0; j < y.cols; ++j) out[j] = b[j];
  }
  const double* in = x.data.data() + r * x.cols;
  for (std::size_t k = 0; k < x.cols; ++k) {
    const double a = in[k];
    const double* wk = w.data.data() + k * w.cols;
    for (std::size_t j = 0; j < y.cols; ++j) out[j] += a * wk[j];
  }
}

inline void dx_row(const Matrix& w, const Matrix& dy, Matrix& dx, std::size_t r) {
  const double* g = dy.data.data() + r * dy.cols;
  double* out = dx.data.data() + r * dx.cols;
  for (std::size_t i = 0; i < w.rows; ++i) out[i] += dot(g, w.data.data() + i * w.cols, w.cols);
}

// dw(i, :) += sum_r x(r, i) * dy(r, :), r ascending.
inline void dw_row(const Matrix& x, const Matrix& dy, Matrix& dw, std::size_t i) {
  double* out = dw.data.data() + i * dw.cols;
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double a = x(r, i);
    if (a == 0.0) continue;
    const double* g = dy.data.data() + r * dy.cols;
    for (std::size_t j = 0; j < dw.cols; ++j) out[j] += a * g[j];
  }
}

inline void db_col(const Matrix& dy, std::span<double> db, std::size_t j) {
  double s = db[j];
  for (std::size_t r = 0; r < dy.rows; ++r) s += dy(r, j);
  db[j] = s;
}

void check_affine(const Matrix& x, const Matrix& w, std::span<const double> b) {
  if (x.cols != w.rows) throw std::invalid_argument("affine: inner dimension mismatch");
  if (!b.empty() && b.size() != w.cols) throw std::invalid_argument("affine: bias size mismatch");
}

std::vector<double> row_norms(const Matrix& a) {
  std::vector<double> norms(a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double n = std::sqrt(dot(a.row(i).data(), a.row(i).data(), a.cols));
    if (!(n > 0.0)) throw DegenerateError("zero-norm embedding row " + std::to_string(i));
    norms[i] = n;
  }
  return norms;
}

void attention_row(const AttentionInputs& in, AttentionMap& map, Matrix& context, std::size_t i, double scale) {
  const std::size_t d = in.q.cols;
  const std::size_t begin = map.offsets[i];
  const std::size_t end = map.offsets[i + 1];
  const bool global = i == 0;
  const double* query = global ? in.global_q.data() : in.q.row(i).data();
  const Matrix& keys = global ? in.global_k : in.k;
  const Matrix& values = global ? in.global_v : in.v;

  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t e = begin; e < end; ++e) {
    const double s = dot(query, keys.row(map.cols[e]).data(), d) * scale;
    map.probs[e] = s;
    if (s > mx) mx = s;
  }
  double z = 0.0;
  for (std::size_t e = begin; e < end; ++e) {
    map.probs[e] = std::exp(map.probs[e] - mx);
    z += map.probs[e];
  }
  double* out = context.row(i).data();
  for (std::size_t c = 0; c < d; ++c) out[c] = 0.0;
  for (std::size_t e = begin; e < end; ++e) {
    map.probs[e] /= z;
    const double p = map.probs[e];
    const double* vr = values.row(map.cols[e]).data();
    for (std::size_t c = 0; c < d; ++c) out[c] += p * vr[c];
  }
}

void prepare_attention(const AttentionInputs& in, AttentionMap& map, Matrix& context) {
  const std::size_t n = in.q.rows;
  if (map.offsets.size() != n + 1) map = attention_pattern(n, in.valid, in.window);
  map.probs.assign(map.cols.size(), 0.0);
  context.resize(n, in.q.cols);
}

}  // namespace

AttentionMap attention_pattern(std::size_t n, std::span<const std::uint8_t> valid, std::size_t window) {
  const std::size_t half = window / 2;
  AttentionMap map;
  map.offsets.reserve(n + 1);
  map.offsets.push_back(0);
  auto ok = [&](std::size_t j) { return valid.empty() || valid[j] != 0; };
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0) {
      for (std::size_t j = 0; j < n; ++j)
        if (ok(j)) map.cols.push_back(j);
    } else {
      const std::size_t lo = i > half ? i - half : 0;
      const std::size_t hi = std::min(n - 1, i + half);
      if (lo > 0 && ok(0)) map.cols.push_back(0);
      for (std::size_t j = lo; j <= hi; ++j)
        if (ok(j)) map.cols.push_back(j);
    }
    map.offsets.push_back(map.cols.size());
  }
  return map;
}

namespace serial {

void affine_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y) {
  check_affine(x, w, b);
  y.resize(x.rows, w.cols);
  for (std::size_t r = 0; r < x.rows; ++r) affine_row(x, w, b, y, r);
}

void affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw,
                     std::span<double> db) {
  if (dx != nullptr)
    for (std::size_t r = 0; r < dy.rows; ++r) dx_row(w, dy, *dx, r);
  // Loop order r, i, j gives each dw element the same r-ascending sum as dw_row.
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* g = dy.data.data() + r * dy.cols;
    for (std::size_t i = 0; i < x.cols; ++i) {
      const double a = x(r, i);
      if (a == 0.0) continue;
      double* out = dw.data.data() + i * dw.cols;
      for (std::size_t j = 0; j < dw.cols; ++j) out[j] += a * g[j];
    }
  }
  if (!db.empty())
    for (std::size_t j = 0; j < dy.cols; ++j) db_col(dy, db, j);
}

void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.cols) throw std::invalid_argument("cosine_similarity: width mismatch");
  const auto na = row_norms(a);
  const auto nb = row_norms(b);
  out.resize(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j)
      out(i, j) = dot(a.row(i).data(), b.row(j).data(), a.cols) / (na[i] * nb[j]);
}

void attention_forward(const AttentionInputs& in, AttentionMap& map, Matrix& context) {
  prepare_attention(in, map, context);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in.q.cols));
  for (std::size_t i = 0; i < in.q.rows; ++i) attention_row(in, map, context, i, scale);
}

void for_each(std::size_t n, const std::function<void(std::size_t)>& fn) {
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

}  // namespace serial

namespace parallel {

void affine_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y) {
  check_affine(x, w, b);
  y.resize(x.rows, w.cols);
  const auto rows = static_cast<std::ptrdiff_t>(x.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) affine_row(x, w, b, y, static_cast<std::size_t>(r));
}

void affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw,
                     std::span<double> db) {
  if (dx != nullptr) {
    const auto rows = static_cast<std::ptrdiff_t>(dy.rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) dx_row(w, dy, *dx, static_cast<std::size_t>(r));
  }
  const auto in_dim = static_cast<std::ptrdiff_t>(x.cols);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < in_dim; ++i) dw_row(x, dy, dw, static_cast<std::size_t>(i));
  if (!db.empty()) {
    const auto cols = static_cast<std::ptrdiff_t>(dy.cols);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t j = 0; j < cols; ++j) db_col(dy, db, static_cast<std::size_t>(j));
  }
}

void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.cols) throw std::invalid_argument("cosine_similarity: width mismatch");
  const auto na = row_norms(a);
  const auto nb = row_norms(b);
  out.resize(a.rows, b.rows);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < b.rows; ++j)
      out(i, j) = dot(a.row(i).data(), b.row(j).data(), a.cols) / (na[i] * nb[j]);
  }
}

void attention_forward(const AttentionInputs& in, AttentionMap& map, Matrix& context) {
  prepare_attention(in, map, context);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in.q.cols));
  const auto rows = static_cast<std::ptrdiff_t>(in.q.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) attention_row(in, map, context, static_cast<std::size_t>(i), scale);
}

void for_each(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
}

}  // namespace parallel

void affine_forward(ExecPolicy p, const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y) {
  p == ExecPolicy::parallel ? parallel::affine_forward(x, w, b, y) : serial::affine_forward(x, w, b, y);
}

void affine_backward(ExecPolicy p, const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw,
                     std::span<double> db) {
  p == ExecPolicy::parallel ? parallel::affine_backward(x, w, dy, dx, dw, db)
                            : serial::affine_backward(x, w, dy, dx, dw, db);
}

void cosine_similarity(ExecPolicy p, const Matrix& a, const Matrix& b, Matrix& out) {
  p == ExecPolicy::parallel ? parallel::cosine_similarity(a, b, out) : serial::cosine_similarity(a, b, out);
}

void attention_forward(ExecPolicy p, const AttentionInputs& in, AttentionMap& map, Matrix& context) {
  p == ExecPolicy::parallel ? parallel::attention_forward(in, map, context)
                            : serial::attention_forward(in, map, context);
}

void for_each(ExecPolicy p, std::size_t n, const std::function<void(std::size_t)>& fn) {
  p == ExecPolicy::parallel ? parallel::for_each(n, fn) : serial::for_each(n, fn);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace docbreg
