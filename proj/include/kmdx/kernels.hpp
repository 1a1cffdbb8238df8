#pragma once

namespace kmdx::kernels {

// Dense kernels behind the tensor ops. Each has an OpenMP variant (default)
// and a serial reference used by tests and the benchmark target. Parallel
// loops only split independent output elements and keep each element's
// accumulation order fixed, so both variants produce bit-identical results.

// c = op_a(a) * op_b(b); a is p x q after transposition, b is q x r.
// Row-major, no aliasing.
void matmul(const double* a, const double* b, double* c, int p, int q, int r,
            bool trans_a, bool trans_b);
void matmul_serial(const double* a, const double* b, double* c, int p, int q,
                   int r, bool trans_a, bool trans_b);

// Row-wise stabilized softmax over `cols` contiguous entries.
void softmax_rows(const double* x, double* y, int rows, int cols);
void softmax_rows_serial(const double* x, double* y, int rows, int cols);

// Row-wise layer norm; writes per-row mean and inverse stddev for backward.
void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double* y, double* mean, double* inv_std, int rows,
                     int cols, double eps);
void layer_norm_rows_serial(const double* x, const double* gain,
                            const double* bias, double* y, double* mean,
                            double* inv_std, int rows, int cols, double eps);

}  // namespace kmdx::kernels
