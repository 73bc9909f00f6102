#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "layoutfuse/common.hpp"

namespace lf {

// Dense row-major f64 matrix. The compute dtype everywhere in the engine.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), values(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return values[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }

    double* row_ptr(int r) { return values.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return values.data() + static_cast<size_t>(r) * cols; }

    Matrix row(int r) const;
    bool all_finite() const;

    static Matrix identity(int n);
    static Matrix random_gaussian(int r, int c, Rng& rng, double scale = 1.0);
};

// Multiply-and-add tally for the attention kernels. A matmul of shape
// (r x k) * (k x c) contributes 2*r*k*c ops (one multiply + one add per
// inner-loop step); softmax exponentials are tallied separately.
struct FlopCounter {
    uint64_t ops = 0;
    uint64_t softmax_exps = 0;
};

// Running softmax row-sum deviation, fed by scaled_dot_attention when a
// sampling trace is active.
struct SoftmaxStats {
    double max_rowsum_dev = 0.0;
    uint64_t rows_checked = 0;
};

// Standard product with a fixed k-inner summation order; run-to-run identical.
Matrix matmul(const Matrix& a, const Matrix& b, FlopCounter* fc = nullptr);

// a * b' without materializing the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b, FlopCounter* fc = nullptr);

// Per row: subtract max, exponentiate, normalize. Rejects NaN input.
Matrix softmax_rows(const Matrix& m, FlopCounter* fc = nullptr);

// softmax(q k' / sqrt(d)) v. Row i of the output depends only on row i of q.
// v may have any column count; scaling uses q's column count d.
Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                            FlopCounter* fc = nullptr, SoftmaxStats* stats = nullptr);

// Same, also exposing the softmax matrix (needed for backprop and traces).
Matrix scaled_dot_attention_full(const Matrix& q, const Matrix& k, const Matrix& v,
                                 Matrix* attn_out,
                                 FlopCounter* fc = nullptr, SoftmaxStats* stats = nullptr);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& theta, double h = 1e-5);

}  // namespace lf
