#include "layoutfuse/matrix.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lf {

Matrix Matrix::row(int r) const {
    Matrix out(1, cols);
    for (int c = 0; c < cols; ++c) out.at(0, c) = at(r, c);
    return out;
}

bool Matrix::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::random_gaussian(int r, int c, Rng& rng, double scale) {
    Matrix m(r, c);
    for (double& v : m.values) v = rng.next_gaussian() * scale;
    return m;
}

static void check_mul_dims(int a_cols, int b_rows, const char* what) {
    if (a_cols != b_rows) {
        throw SpecError(std::string(what) + ": inner dimension mismatch (" +
                        std::to_string(a_cols) + " vs " + std::to_string(b_rows) + ")");
    }
}

Matrix matmul(const Matrix& a, const Matrix& b, FlopCounter* fc) {
    check_mul_dims(a.cols, b.rows, "matmul");
    Matrix out(a.rows, b.cols);
    // i-k-j order: fixed summation order per output element, cache friendly.
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    if (fc) fc->ops += 2ull * a.rows * a.cols * b.cols;
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b, FlopCounter* fc) {
    check_mul_dims(a.cols, b.cols, "matmul_bt");
    Matrix out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = b.row_ptr(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            out.at(i, j) = acc;
        }
    }
    if (fc) fc->ops += 2ull * a.rows * a.cols * b.rows;
    return out;
}

Matrix softmax_rows(const Matrix& m, FlopCounter* fc) {
    Matrix out(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i) {
        const double* src = m.row_ptr(i);
        double* dst = out.row_ptr(i);
        double mx = src[0];
        for (int j = 0; j < m.cols; ++j) {
            if (std::isnan(src[j])) throw NumericError("softmax_rows: NaN input");
            if (src[j] > mx) mx = src[j];
        }
        double sum = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        for (int j = 0; j < m.cols; ++j) dst[j] /= sum;
    }
    if (fc) fc->softmax_exps += static_cast<uint64_t>(m.rows) * m.cols;
    return out;
}

Matrix scaled_dot_attention_full(const Matrix& q, const Matrix& k, const Matrix& v,
                                 Matrix* attn_out, FlopCounter* fc, SoftmaxStats* stats) {
    if (k.rows < 1) throw SpecError("scaled_dot_attention: empty key set");
    if (q.cols < 1) throw SpecError("scaled_dot_attention: inner dim must be >= 1");
    check_mul_dims(q.cols, k.cols, "scaled_dot_attention (q vs k)");
    if (v.rows != k.rows) {
        throw SpecError("scaled_dot_attention: key/value row mismatch");
    }
    Matrix scores = matmul_bt(q, k, fc);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols));
    for (double& s : scores.values) s *= inv_sqrt_d;
    Matrix attn = softmax_rows(scores, fc);
    if (stats) {
        for (int i = 0; i < attn.rows; ++i) {
            double sum = 0.0;
            const double* row = attn.row_ptr(i);
            for (int j = 0; j < attn.cols; ++j) sum += row[j];
            const double dev = std::fabs(sum - 1.0);
            if (dev > stats->max_rowsum_dev) stats->max_rowsum_dev = dev;
        }
        stats->rows_checked += static_cast<uint64_t>(attn.rows);
    }
    Matrix out = matmul(attn, v, fc);
    if (attn_out) *attn_out = std::move(attn);
    return out;
}

Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                            FlopCounter* fc, SoftmaxStats* stats) {
    return scaled_dot_attention_full(q, k, v, nullptr, fc, stats);
}

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& theta, double h) {
    std::vector<double> grad(theta.size(), 0.0);
    std::vector<double> probe = theta;
    for (size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + h;
        const double fp = f(probe);
        probe[i] = theta[i] - h;
        const double fm = f(probe);
        probe[i] = theta[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                               std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace lf
