#pragma once

// Data-parallel kernels. Every kernel has a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::parallel`. The
// parallel versions split work over independent output rows and keep the
// per-element summation order of the serial loops, so both produce
// bit-identical results regardless of thread count.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "docbreg/common.hpp"

namespace docbreg {

enum class ExecPolicy { serial, parallel };

/// Sparse row-major attention pattern with the softmax weights per row.
struct AttentionMap {
  std::vector<std::size_t> offsets;  // n + 1 entries
  std::vector<std::size_t> cols;
  std::vector<double> probs;

  std::size_t pair_visits() const { return cols.size(); }
};

/// Inputs to one single-head windowed attention layer. Row 0 is the global
/// token: it uses the global query/key/value projections and attends to every
/// valid position, while every other row attends to its window plus row 0.
struct AttentionInputs {
  const Matrix& q;
  const Matrix& k;
  const Matrix& v;
  std::span<const double> global_q;  // query of row 0 under the global projection
  const Matrix& global_k;
  const Matrix& global_v;
  std::span<const std::uint8_t> valid;  // 1 for non-PAD positions
  std::size_t window;                   // even; radius is window / 2
};

/// Builds the allowed (i, j) pairs without computing any scores.
AttentionMap attention_pattern(std::size_t n, std::span<const std::uint8_t> valid, std::size_t window);

namespace serial {

/// y = x * w + b. `b` may be empty.
void affine_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y);
/// dx += dy * w^T (skipped when dx is null), dw += x^T * dy, db += colsum(dy).
void affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw,
                     std::span<double> db);
/// out(i, j) = cos(a_i, b_j). Throws DegenerateError on a zero-norm row.
void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out);
/// Fills `map.probs` and writes the attention context rows.
void attention_forward(const AttentionInputs& in, AttentionMap& map, Matrix& context);
void for_each(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace serial

namespace parallel {

void affine_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y);
void affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw,
                     std::span<double> db);
void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out);
void attention_forward(const AttentionInputs& in, AttentionMap& map, Matrix& context);
/// Runs fn(i) for every i with dynamic scheduling. fn must only write state
/// owned by index i.
void for_each(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace parallel

// Policy dispatch.
void affine_forward(ExecPolicy p, const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y);
void affine_backward(ExecPolicy p, const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw,
                     std::span<double> db);
void cosine_similarity(ExecPolicy p, const Matrix& a, const Matrix& b, Matrix& out);
void attention_forward(ExecPolicy p, const AttentionInputs& in, AttentionMap& map, Matrix& context);
void for_each(ExecPolicy p, std::size_t n, const std::function<void(std::size_t)>& fn);

int max_threads();
/// Thread count for later parallel regions; n <= 0 keeps the runtime default.
void set_threads(int n);

}  // namespace docbreg
