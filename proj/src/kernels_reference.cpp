#include <algorithm>
#include <cmath>
#include <vector>

#include "loraseg/kernels.hpp"

namespace loraseg::kernels::reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T *a, int lda, const T *b, int ldb,
          T beta, T *c, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
                const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            T &out = c[i * ldc + j];
            out = (beta == T(0) ? T(0) : beta * out) + alpha * acc;
        }
    }
}

template <typename T>
void conv2d_forward(const Conv2dGeometry &g, const T *x, const T *w, const T *bias, T *y) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int co = 0; co < g.out_channels; ++co) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                T acc = bias ? bias[co] : T(0);
                for (int ci = 0; ci < g.in_channels; ++ci) {
                    for (int ky = 0; ky < g.kernel_h; ++ky) {
                        const int iy = oy * g.stride - g.padding + ky;
                        if (iy < 0 || iy >= g.in_h) continue;
                        for (int kx = 0; kx < g.kernel_w; ++kx) {
                            const int ix = ox * g.stride - g.padding + kx;
                            if (ix < 0 || ix >= g.in_w) continue;
                            acc += x[(ci * g.in_h + iy) * g.in_w + ix] *
                                   w[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
                        }
                    }
                }
                y[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry &g, const T *dy, const T *w, T *dx) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int co = 0; co < g.out_channels; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const T grad = dy[(co * oh + oy) * ow + ox];
                for (int ci = 0; ci < g.in_channels; ++ci)
                    for (int ky = 0; ky < g.kernel_h; ++ky) {
                        const int iy = oy * g.stride - g.padding + ky;
                        if (iy < 0 || iy >= g.in_h) continue;
                        for (int kx = 0; kx < g.kernel_w; ++kx) {
                            const int ix = ox * g.stride - g.padding + kx;
                            if (ix < 0 || ix >= g.in_w) continue;
                            dx[(ci * g.in_h + iy) * g.in_w + ix] +=
                                grad * w[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
                        }
                    }
            }
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry &g, const T *x, const T *dy, T *dw, T *dbias) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int co = 0; co < g.out_channels; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const T grad = dy[(co * oh + oy) * ow + ox];
                if (dbias) dbias[co] += grad;
                if (!dw) continue;
                for (int ci = 0; ci < g.in_channels; ++ci)
                    for (int ky = 0; ky < g.kernel_h; ++ky) {
                        const int iy = oy * g.stride - g.padding + ky;
                        if (iy < 0 || iy >= g.in_h) continue;
                        for (int kx = 0; kx < g.kernel_w; ++kx) {
                            const int ix = ox * g.stride - g.padding + kx;
                            if (ix < 0 || ix >= g.in_w) continue;
                            dw[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx] +=
                                grad * x[(ci * g.in_h + iy) * g.in_w + ix];
                        }
                    }
            }
}

// Scatter form: every input pixel stamps kernel * value into the output.
template <typename T>
void conv_transpose2d_forward(const ConvTranspose2dGeometry &g, const T *x, const T *w, const T *bias, T *y) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int co = 0; co < g.out_channels; ++co)
        for (int i = 0; i < oh * ow; ++i) y[co * oh * ow + i] = bias ? bias[co] : T(0);
    for (int ci = 0; ci < g.in_channels; ++ci)
        for (int iy = 0; iy < g.in_h; ++iy)
            for (int ix = 0; ix < g.in_w; ++ix) {
                const T v = x[(ci * g.in_h + iy) * g.in_w + ix];
                for (int co = 0; co < g.out_channels; ++co)
                    for (int ky = 0; ky < g.kernel_h; ++ky) {
                        const int oy = iy * g.stride - g.padding + ky;
                        if (oy < 0 || oy >= oh) continue;
                        for (int kx = 0; kx < g.kernel_w; ++kx) {
                            const int ox = ix * g.stride - g.padding + kx;
                            if (ox < 0 || ox >= ow) continue;
                            y[(co * oh + oy) * ow + ox] +=
                                v * w[((ci * g.out_channels + co) * g.kernel_h + ky) * g.kernel_w + kx];
                        }
                    }
            }
}

template <typename T>
void conv_transpose2d_backward_input(const ConvTranspose2dGeometry &g, const T *dy, const T *w, T *dx) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int ci = 0; ci < g.in_channels; ++ci)
        for (int iy = 0; iy < g.in_h; ++iy)
            for (int ix = 0; ix < g.in_w; ++ix) {
                T acc = 0;
                for (int co = 0; co < g.out_channels; ++co)
                    for (int ky = 0; ky < g.kernel_h; ++ky) {
                        const int oy = iy * g.stride - g.padding + ky;
                        if (oy < 0 || oy >= oh) continue;
                        for (int kx = 0; kx < g.kernel_w; ++kx) {
                            const int ox = ix * g.stride - g.padding + kx;
                            if (ox < 0 || ox >= ow) continue;
                            acc += dy[(co * oh + oy) * ow + ox] *
                                   w[((ci * g.out_channels + co) * g.kernel_h + ky) * g.kernel_w + kx];
                        }
                    }
                dx[(ci * g.in_h + iy) * g.in_w + ix] += acc;
            }
}

template <typename T>
void conv_transpose2d_backward_weight(const ConvTranspose2dGeometry &g, const T *x, const T *dy, T *dw,
                                      T *dbias) {
    const int oh = g.out_h(), ow = g.out_w();
    if (dbias)
        for (int co = 0; co < g.out_channels; ++co)
            for (int i = 0; i < oh * ow; ++i) dbias[co] += dy[co * oh * ow + i];
    if (!dw) return;
    for (int ci = 0; ci < g.in_channels; ++ci)
        for (int iy = 0; iy < g.in_h; ++iy)
            for (int ix = 0; ix < g.in_w; ++ix) {
                const T v = x[(ci * g.in_h + iy) * g.in_w + ix];
                for (int co = 0; co < g.out_channels; ++co)
                    for (int ky = 0; ky < g.kernel_h; ++ky) {
                        const int oy = iy * g.stride - g.padding + ky;
                        if (oy < 0 || oy >= oh) continue;
                        for (int kx = 0; kx < g.kernel_w; ++kx) {
                            const int ox = ix * g.stride - g.padding + kx;
                            if (ox < 0 || ox >= ow) continue;
                            dw[((ci * g.out_channels + co) * g.kernel_h + ky) * g.kernel_w + kx] +=
                                v * dy[(co * oh + oy) * ow + ox];
                        }
                    }
            }
}

template <typename T>
void softmax_rows(const T *x, T *y, std::size_t rows, std::size_t cols) {
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
        for (std::size_t c = 0; c < cols; ++c) yr[c] /= sum;
    }
}

template <typename T>
void softmax_rows_backward(const T *y, const T *dy, T *dx, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T *yr = y + r * cols;
        const T *gr = dy + r * cols;
        T dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
        for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += yr[c] * (gr[c] - dot);
    }
}

template <typename T>
void layer_norm_rows(const T *x, const T *gamma, const T *beta, T *y, T *mean, T *rstd, std::size_t rows,
                     std::size_t cols, T eps) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T *xr = x + r * cols;
        T mu = 0;
        for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
        mu /= T(cols);
        T var = 0;
        for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= T(cols);
        const T rs = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = (xr[c] - mu) * rs * gamma[c] + beta[c];
    }
}

template <typename T>
void layer_norm_rows_backward(const T *x, const T *gamma, const T *mean, const T *rstd, const T *dy, T *dx,
                              T *dgamma, T *dbeta, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T *xr = x + r * cols;
        const T *gr = dy + r * cols;
        T sum_g = 0, sum_gx = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const T xhat = (xr[c] - mean[r]) * rstd[r];
            const T gh = gr[c] * gamma[c];
            sum_g += gh;
            sum_gx += gh * xhat;
            if (dgamma) dgamma[c] += gr[c] * xhat;
            if (dbeta) dbeta[c] += gr[c];
        }
        if (!dx) continue;
        for (std::size_t c = 0; c < cols; ++c) {
            const T xhat = (xr[c] - mean[r]) * rstd[r];
            const T gh = gr[c] * gamma[c];
            dx[r * cols + c] += rstd[r] * (gh - sum_g / T(cols) - xhat * sum_gx / T(cols));
        }
    }
}

namespace {

// Half-pixel-centre source coordinate, clamped at the low edge.
template <typename T>
void source_index(int dst, int in_size, int out_size, int &i0, int &i1, T &frac) {
    const T scale = T(in_size) / T(out_size);
    T src = (T(dst) + T(0.5)) * scale - T(0.5);
    if (src < 0) src = 0;
    i0 = std::min(static_cast<int>(src), in_size - 1);
    i1 = std::min(i0 + 1, in_size - 1);
    frac = src - T(i0);
}

} // namespace

template <typename T>
void resize_bilinear(const T *x, T *y, int channels, int in_h, int in_w, int out_h, int out_w) {
    for (int c = 0; c < channels; ++c)
        for (int oy = 0; oy < out_h; ++oy) {
            int y0, y1;
            T fy;
            source_index(oy, in_h, out_h, y0, y1, fy);
            for (int ox = 0; ox < out_w; ++ox) {
                int x0, x1;
                T fx;
                source_index(ox, in_w, out_w, x0, x1, fx);
                const T *xc = x + static_cast<std::size_t>(c) * in_h * in_w;
                const T top = xc[y0 * in_w + x0] * (1 - fx) + xc[y0 * in_w + x1] * fx;
                const T bot = xc[y1 * in_w + x0] * (1 - fx) + xc[y1 * in_w + x1] * fx;
                y[(static_cast<std::size_t>(c) * out_h + oy) * out_w + ox] = top * (1 - fy) + bot * fy;
            }
        }
}

template <typename T>
void resize_bilinear_backward(const T *dy, T *dx, int channels, int in_h, int in_w, int out_h, int out_w) {
    for (int c = 0; c < channels; ++c)
        for (int oy = 0; oy < out_h; ++oy) {
            int y0, y1;
            T fy;
            source_index(oy, in_h, out_h, y0, y1, fy);
            for (int ox = 0; ox < out_w; ++ox) {
                int x0, x1;
                T fx;
                source_index(ox, in_w, out_w, x0, x1, fx);
                const T g = dy[(static_cast<std::size_t>(c) * out_h + oy) * out_w + ox];
                T *dc = dx + static_cast<std::size_t>(c) * in_h * in_w;
                dc[y0 * in_w + x0] += g * (1 - fy) * (1 - fx);
                dc[y0 * in_w + x1] += g * (1 - fy) * fx;
                dc[y1 * in_w + x0] += g * fy * (1 - fx);
                dc[y1 * in_w + x1] += g * fy * fx;
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

} // namespace loraseg::kernels::reference
