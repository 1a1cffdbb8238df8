#include "kmdx/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace kmdx::kernels {

namespace {

// Below this many output elements the OpenMP fork costs more than it saves.
constexpr long long kParallelCutoff = 4096;

inline void matmul_row(const double* a, const double* b, double* c, int i,
                       int q, int r, bool trans_a, bool trans_b, int p) {
    double* crow = c + static_cast<long long>(i) * r;
    std::fill(crow, crow + r, 0.0);
    for (int k = 0; k < q; ++k) {
        const double aik = trans_a ? a[static_cast<long long>(k) * p + i]
                                   : a[static_cast<long long>(i) * q + k];
        if (trans_b) {
            // b is r x q; walk column k of b^T = row elements b[j*q+k].
            for (int j = 0; j < r; ++j)
                crow[j] += aik * b[static_cast<long long>(j) * q + k];
        } else {
            const double* brow = b + static_cast<long long>(k) * r;
            for (int j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
}

inline void softmax_row(const double* xr, double* yr, int cols) {
    double mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < cols; ++j) yr[j] *= inv;
}

inline void layer_norm_row(const double* xr, const double* gain,
                           const double* bias, double* yr, double* mean_out,
                           double* inv_std_out, int cols, double eps) {
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += xr[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
        const double d = xr[j] - mean;
        var += d * d;
    }
    var /= cols;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j)
        yr[j] = (xr[j] - mean) * inv_std * gain[j] + bias[j];
    *mean_out = mean;
    *inv_std_out = inv_std;
}

}  // namespace

void matmul(const double* a, const double* b, double* c, int p, int q, int r,
            bool trans_a, bool trans_b) {
    const long long work = static_cast<long long>(p) * q * r;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
    for (int i = 0; i < p; ++i) matmul_row(a, b, c, i, q, r, trans_a, trans_b, p);
}

void matmul_serial(const double* a, const double* b, double* c, int p, int q,
                   int r, bool trans_a, bool trans_b) {
    for (int i = 0; i < p; ++i) matmul_row(a, b, c, i, q, r, trans_a, trans_b, p);
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
    const long long work = static_cast<long long>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
    for (int i = 0; i < rows; ++i)
        softmax_row(x + static_cast<long long>(i) * cols,
                    y + static_cast<long long>(i) * cols, cols);
}

void softmax_rows_serial(const double* x, double* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        softmax_row(x + static_cast<long long>(i) * cols,
                    y + static_cast<long long>(i) * cols, cols);
}

void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double* y, double* mean, double* inv_std, int rows,
                     int cols, double eps) {
    const long long work = static_cast<long long>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
    for (int i = 0; i < rows; ++i)
        layer_norm_row(x + static_cast<long long>(i) * cols, gain, bias,
                       y + static_cast<long long>(i) * cols, mean + i,
                       inv_std + i, cols, eps);
}

void layer_norm_rows_serial(const double* x, const double* gain,
                            const double* bias, double* y, double* mean,
                            double* inv_std, int rows, int cols, double eps) {
    for (int i = 0; i < rows; ++i)
        layer_norm_row(x + static_cast<long long>(i) * cols, gain, bias,
                       y + static_cast<long long>(i) * cols, mean + i,
                       inv_std + i, cols, eps);
}

}  // namespace kmdx::kernels
