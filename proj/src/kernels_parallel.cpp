#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include <cblas.h>

#include "loraseg/kernels.hpp"

namespace loraseg::kernels::parallel {

namespace {

void blas_gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float *a, int lda, const float *b,
               int ldb, float beta, float *c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha,
                a, lda, b, ldb, beta, c, ldc);
}

void blas_gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double *a, int lda, const double *b,
               int ldb, double beta, double *c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha,
                a, lda, b, ldb, beta, c, ldc);
}

bool is_pointwise(const Conv2dGeometry &g) {
    return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

// cols[(ci*kh + ky)*kw + kx][oy*ow + ox]
template <typename T>
void im2col(const Conv2dGeometry &g, const T *x, T *cols) {
    const int oh = g.out_h(), ow = g.out_w();
    const int rows = g.in_channels * g.kernel_h * g.kernel_w;
#pragma omp parallel for schedule(static) if (use_parallel(std::size_t(rows) * oh * ow))
    for (int r = 0; r < rows; ++r) {
        const int kx = r % g.kernel_w;
        const int ky = (r / g.kernel_w) % g.kernel_h;
        const int ci = r / (g.kernel_w * g.kernel_h);
        T *dst = cols + static_cast<std::size_t>(r) * oh * ow;
        const T *src = x + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
        for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.padding + ky;
            T *drow = dst + oy * ow;
            if (iy < 0 || iy >= g.in_h) {
                std::fill(drow, drow + ow, T(0));
                continue;
            }
            for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * g.stride - g.padding + kx;
                drow[ox] = (ix < 0 || ix >= g.in_w) ? T(0) : src[iy * g.in_w + ix];
            }
        }
    }
}

template <typename T>
void col2im(const Conv2dGeometry &g, const T *cols, T *x) {
    const int oh = g.out_h(), ow = g.out_w();
#pragma omp parallel for schedule(static) if (use_parallel(std::size_t(g.in_channels) * g.in_h * g.in_w))
    for (int ci = 0; ci < g.in_channels; ++ci) {
        T *dst = x + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
        for (int ky = 0; ky < g.kernel_h; ++ky)
            for (int kx = 0; kx < g.kernel_w; ++kx) {
                const T *src = cols + static_cast<std::size_t>((ci * g.kernel_h + ky) * g.kernel_w + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.padding + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride - g.padding + kx;
                        if (ix < 0 || ix >= g.in_w) continue;
                        dst[iy * g.in_w + ix] += src[oy * ow + ox];
                    }
                }
            }
    }
}

// The transposed convolution scatters exactly like col2im of the forward
// convolution that maps its output back onto its input.
Conv2dGeometry adjoint(const ConvTranspose2dGeometry &g) {
    Conv2dGeometry c;
    c.in_channels = g.out_channels;
    c.out_channels = g.in_channels;
    c.in_h = g.out_h();
    c.in_w = g.out_w();
    c.kernel_h = g.kernel_h;
    c.kernel_w = g.kernel_w;
    c.stride = g.stride;
    c.padding = g.padding;
    return c;
}

template <typename T>
void add_row_sums(const T *m, int rows, int cols, T *out) {
    for (int r = 0; r < rows; ++r) {
        T acc = 0;
        const T *row = m + static_cast<std::size_t>(r) * cols;
#pragma omp simd reduction(+ : acc)
        for (int c = 0; c < cols; ++c) acc += row[c];
        out[r] += acc;
    }
}

} // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T *a, int lda, const T *b, int ldb,
          T beta, T *c, int ldc) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) c[i * ldc + j] = beta == T(0) ? T(0) : beta * c[i * ldc + j];
        return;
    }
    blas_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void conv2d_forward(const Conv2dGeometry &g, const T *x, const T *w, const T *bias, T *y) {
    const int n = g.out_h() * g.out_w();
    const int k = g.in_channels * g.kernel_h * g.kernel_w;
    if (bias) {
        for (int co = 0; co < g.out_channels; ++co) std::fill(y + std::size_t(co) * n, y + std::size_t(co + 1) * n, bias[co]);
    }
    const T beta = bias ? T(1) : T(0);
    if (is_pointwise(g)) {
        gemm<T>(false, false, g.out_channels, n, k, T(1), w, k, x, n, beta, y, n);
        return;
    }
    std::vector<T> cols(static_cast<std::size_t>(k) * n);
    im2col(g, x, cols.data());
    gemm<T>(false, false, g.out_channels, n, k, T(1), w, k, cols.data(), n, beta, y, n);
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry &g, const T *dy, const T *w, T *dx) {
    const int n = g.out_h() * g.out_w();
    const int k = g.in_channels * g.kernel_h * g.kernel_w;
    if (is_pointwise(g)) {
        gemm<T>(true, false, k, n, g.out_channels, T(1), w, k, dy, n, T(1), dx, n);
        return;
    }
    std::vector<T> cols(static_cast<std::size_t>(k) * n);
    gemm<T>(true, false, k, n, g.out_channels, T(1), w, k, dy, n, T(0), cols.data(), n);
    col2im(g, cols.data(), dx);
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry &g, const T *x, const T *dy, T *dw, T *dbias) {
    const int n = g.out_h() * g.out_w();
    const int k = g.in_channels * g.kernel_h * g.kernel_w;
    if (dbias) add_row_sums(dy, g.out_channels, n, dbias);
    if (!dw) return;
    if (is_pointwise(g)) {
        gemm<T>(false, true, g.out_channels, k, n, T(1), dy, n, x, n, T(1), dw, k);
        return;
    }
    std::vector<T> cols(static_cast<std::size_t>(k) * n);
    im2col(g, x, cols.data());
    gemm<T>(false, true, g.out_channels, k, n, T(1), dy, n, cols.data(), n, T(1), dw, k);
}

template <typename T>
void conv_transpose2d_forward(const ConvTranspose2dGeometry &g, const T *x, const T *w, const T *bias, T *y) {
    const Conv2dGeometry adj = adjoint(g);
    const int hw = g.in_h * g.in_w;
    const int rows = g.out_channels * g.kernel_h * g.kernel_w;
    const std::size_t out_n = static_cast<std::size_t>(g.out_h()) * g.out_w();
    for (int co = 0; co < g.out_channels; ++co)
        std::fill(y + co * out_n, y + (co + 1) * out_n, bias ? bias[co] : T(0));
    std::vector<T> cols(static_cast<std::size_t>(rows) * hw);
    gemm<T>(true, false, rows, hw, g.in_channels, T(1), w, rows, x, hw, T(0), cols.data(), hw);
    col2im(adj, cols.data(), y);
}

template <typename T>
void conv_transpose2d_backward_input(const ConvTranspose2dGeometry &g, const T *dy, const T *w, T *dx) {
    const Conv2dGeometry adj = adjoint(g);
    const int hw = g.in_h * g.in_w;
    const int rows = g.out_channels * g.kernel_h * g.kernel_w;
    std::vector<T> cols(static_cast<std::size_t>(rows) * hw);
    im2col(adj, dy, cols.data());
    gemm<T>(false, false, g.in_channels, hw, rows, T(1), w, rows, cols.data(), hw, T(1), dx, hw);
}

template <typename T>
void conv_transpose2d_backward_weight(const ConvTranspose2dGeometry &g, const T *x, const T *dy, T *dw,
                                      T *dbias) {
    const int out_n = g.out_h() * g.out_w();
    if (dbias) add_row_sums(dy, g.out_channels, out_n, dbias);
    if (!dw) return;
    const Conv2dGeometry adj = adjoint(g);
    const int hw = g.in_h * g.in_w;
    const int rows = g.out_channels * g.kernel_h * g.kernel_w;
    std::vector<T> cols(static_cast<std::size_t>(rows) * hw);
    im2col(adj, dy, cols.data());
    gemm<T>(false, true, g.in_channels, rows, hw, T(1), x, hw, cols.data(), hw, T(1), dw, rows);
}

template <typename T>
void softmax_rows(const T *x, T *y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (use_parallel(rows * cols))
    for (std::size_t r = 0; r < rows; ++r) {
        const T *xr = x + r * cols;
        T *yr = y + r * cols;
        T mx = xr[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        T sum = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const T inv = T(1) / sum;
#pragma omp simd
        for (std::size_t c = 0; c < cols; ++c) yr[c] *= inv;
    }
}

template <typename T>
void softmax_rows_backward(const T *y, const T *dy, T *dx, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (use_parallel(rows * cols))
    for (std::size_t r = 0; r < rows; ++r) {
        const T *yr = y + r * cols;
        const T *gr = dy + r * cols;
        T *dr = dx + r * cols;
        T dot = 0;
#pragma omp simd reduction(+ : dot)
        for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
#pragma omp simd
        for (std::size_t c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
    }
}

template <typename T>
void layer_norm_rows(const T *x, const T *gamma, const T *beta, T *y, T *mean, T *rstd, std::size_t rows,
                     std::size_t cols, T eps) {
#pragma omp parallel for schedule(static) if (use_parallel(rows * cols))
    for (std::size_t r = 0; r < rows; ++r) {
        const T *xr = x + r * cols;
        T mu = 0;
#pragma omp simd reduction(+ : mu)
        for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
        mu /= T(cols);
        T var = 0;
#pragma omp simd reduction(+ : var)
        for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= T(cols);
        const T rs = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        T *yr = y + r * cols;
#pragma omp simd
        for (std::size_t c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rs * gamma[c] + beta[c];
    }
}

template <typename T>
void layer_norm_rows_backward(const T *x, const T *gamma, const T *mean, const T *rstd, const T *dy, T *dx,
                              T *dgamma, T *dbeta, std::size_t rows, std::size_t cols) {
    if (dx) {
#pragma omp parallel for schedule(static) if (use_parallel(rows * cols))
        for (std::size_t r = 0; r < rows; ++r) {
            const T *xr = x + r * cols;
            const T *gr = dy + r * cols;
            const T mu = mean[r], rs = rstd[r];
            T sum_g = 0, sum_gx = 0;
#pragma omp simd reduction(+ : sum_g, sum_gx)
            for (std::size_t c = 0; c < cols; ++c) {
                const T gh = gr[c] * gamma[c];
                sum_g += gh;
                sum_gx += gh * (xr[c] - mu) * rs;
            }
            const T inv_n = T(1) / T(cols);
            T *dr = dx + r * cols;
#pragma omp simd
            for (std::size_t c = 0; c < cols; ++c) {
                const T xhat = (xr[c] - mu) * rs;
                dr[c] += rs * (gr[c] * gamma[c] - sum_g * inv_n - xhat * sum_gx * inv_n);
            }
        }
    }
    // Parameter gradients reduce over rows in a fixed order.
    if (dgamma || dbeta) {
        for (std::size_t r = 0; r < rows; ++r) {
            const T *xr = x + r * cols;
            const T *gr = dy + r * cols;
            const T mu = mean[r], rs = rstd[r];
            if (dgamma) {
#pragma omp simd
                for (std::size_t c = 0; c < cols; ++c) dgamma[c] += gr[c] * (xr[c] - mu) * rs;
            }
            if (dbeta) {
#pragma omp simd
                for (std::size_t c = 0; c < cols; ++c) dbeta[c] += gr[c];
            }
        }
    }
}

namespace {

template <typename T>
struct Taps {
    std::vector<int> i0, i1;
    std::vector<T> frac;
};

template <typename T>
Taps<T> make_taps(int in_size, int out_size) {
    Taps<T> t;
    t.i0.resize(out_size);
    t.i1.resize(out_size);
    t.frac.resize(out_size);
    const T scale = T(in_size) / T(out_size);
    for (int d = 0; d < out_size; ++d) {
        T src = (T(d) + T(0.5)) * scale - T(0.5);
        if (src < 0) src = 0;
        const int i0 = std::min(static_cast<int>(src), in_size - 1);
        t.i0[d] = i0;
        t.i1[d] = std::min(i0 + 1, in_size - 1);
        t.frac[d] = src - T(i0);
    }
    return t;
}

} // namespace

template <typename T>
void resize_bilinear(const T *x, T *y, int channels, int in_h, int in_w, int out_h, int out_w) {
    const Taps<T> ty = make_taps<T>(in_h, out_h);
    const Taps<T> tx = make_taps<T>(in_w, out_w);
    const int total_rows = channels * out_h;
#pragma omp parallel for schedule(static) if (use_parallel(std::size_t(total_rows) * out_w))
    for (int row = 0; row < total_rows; ++row) {
        const int c = row / out_h, oy = row % out_h;
        const T *xc = x + static_cast<std::size_t>(c) * in_h * in_w;
        const T *r0 = xc + ty.i0[oy] * in_w;
        const T *r1 = xc + ty.i1[oy] * in_w;
        const T fy = ty.frac[oy];
        T *yr = y + static_cast<std::size_t>(row) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
            const T fx = tx.frac[ox];
            const T top = r0[tx.i0[ox]] * (1 - fx) + r0[tx.i1[ox]] * fx;
            const T bot = r1[tx.i0[ox]] * (1 - fx) + r1[tx.i1[ox]] * fx;
            yr[ox] = top * (1 - fy) + bot * fy;
        }
    }
}

template <typename T>
void resize_bilinear_backward(const T *dy, T *dx, int channels, int in_h, int in_w, int out_h, int out_w) {
    const Taps<T> ty = make_taps<T>(in_h, out_h);
    const Taps<T> tx = make_taps<T>(in_w, out_w);
#pragma omp parallel for schedule(static) if (use_parallel(std::size_t(channels) * out_h * out_w))
    for (int c = 0; c < channels; ++c) {
        T *dc = dx + static_cast<std::size_t>(c) * in_h * in_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const T fy = ty.frac[oy];
            T *r0 = dc + ty.i0[oy] * in_w;
            T *r1 = dc + ty.i1[oy] * in_w;
            const T *gr = dy + (static_cast<std::size_t>(c) * out_h + oy) * out_w;
            for (int ox = 0; ox < out_w; ++ox) {
                const T fx = tx.frac[ox];
                const T g = gr[ox];
                r0[tx.i0[ox]] += g * (1 - fy) * (1 - fx);
                r0[tx.i1[ox]] += g * (1 - fy) * fx;
                r1[tx.i0[ox]] += g * fy * (1 - fx);
                r1[tx.i1[ox]] += g * fy * fx;
            }
        }
    }
}

#define LORASEG_INSTANTIATE(T)                                                                               \
    template void gemm<T>(bool, bool, int, int, int, T, const T *, int, const T *, int, T, T *, int);        \
    template void conv2d_forward<T>(const Conv2dGeometry &, const T *, const T *, const T *, T *);           \
    template void conv2d_backward_input<T>(const Conv2dGeometry &, const T *, const T *, T *);               \
    template void conv2d_backward_weight<T>(const Conv2dGeometry &, const T *, const T *, T *, T *);         \
    template void conv_transpose2d_forward<T>(const ConvTranspose2dGeometry &, const T *, const T *,         \
                                              const T *, T *);                                               \
    template void conv_transpose2d_backward_input<T>(const ConvTranspose2dGeometry &, const T *, const T *,  \
                                                     T *);                                                   \
    template void conv_transpose2d_backward_weight<T>(const ConvTranspose2dGeometry &, const T *, const T *, \
                                                      T *, T *);                                             \
    template void softmax_rows<T>(const T *, T *, std::size_t, std::size_t);                                 \
    template void softmax_rows_backward<T>(const T *, const T *, T *, std::size_t, std::size_t);             \
    template void layer_norm_rows<T>(const T *, const T *, const T *, T *, T *, T *, std::size_t,            \
                                     std::size_t, T);                                                        \
    template void layer_norm_rows_backward<T>(const T *, const T *, const T *, const T *, const T *, T *,    \
                                              T *, T *, std::size_t, std::size_t);                           \
    template void resize_bilinear<T>(const T *, T *, int, int, int, int, int);                               \
    template void resize_bilinear_backward<T>(const T *, T *, int, int, int, int, int);

LORASEG_INSTANTIATE(float)
LORASEG_INSTANTIATE(double)

} // namespace loraseg::kernels::parallel
