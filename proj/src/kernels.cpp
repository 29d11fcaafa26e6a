#include "loraseg/kernels.hpp"

#include <atomic>

#include <omp.h>

namespace loraseg::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::parallel};
} // namespace

void set_backend(Backend backend) { g_backend.store(backend, std::memory_order_relaxed); }

Backend backend() { return g_backend.load(std::memory_order_relaxed); }

bool use_parallel(std::size_t work) {
    return backend() == Backend::parallel && work >= kParallelGrain && omp_get_max_threads() > 1;
}

#define LORASEG_DISPATCH(name, ...)                  \
    if (backend() == Backend::reference) {           \
        reference::name(__VA_ARGS__);                \
    } else {                                         \
        parallel::name(__VA_ARGS__);                 \
    }

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T *a, int lda, const T *b, int ldb,
          T beta, T *c, int ldc) {
    LORASEG_DISPATCH(gemm, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc)
}

template <typename T>
void conv2d_forward(const Conv2dGeometry &g, const T *x, const T *w, const T *bias, T *y) {
    LORASEG_DISPATCH(conv2d_forward, g, x, w, bias, y)
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry &g, const T *dy, const T *w, T *dx) {
    LORASEG_DISPATCH(conv2d_backward_input, g, dy, w, dx)
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry &g, const T *x, const T *dy, T *dw, T *dbias) {
    LORASEG_DISPATCH(conv2d_backward_weight, g, x, dy, dw, dbias)
}

template <typename T>
void conv_transpose2d_forward(const ConvTranspose2dGeometry &g, const T *x, const T *w, const T *bias, T *y) {
    LORASEG_DISPATCH(conv_transpose2d_forward, g, x, w, bias, y)
}

template <typename T>
void conv_transpose2d_backward_input(const ConvTranspose2dGeometry &g, const T *dy, const T *w, T *dx) {
    LORASEG_DISPATCH(conv_transpose2d_backward_input, g, dy, w, dx)
}

template <typename T>
void conv_transpose2d_backward_weight(const ConvTranspose2dGeometry &g, const T *x, const T *dy, T *dw,
                                      T *dbias) {
    LORASEG_DISPATCH(conv_transpose2d_backward_weight, g, x, dy, dw, dbias)
}

template <typename T>
void softmax_rows(const T *x, T *y, std::size_t rows, std::size_t cols) {
    LORASEG_DISPATCH(softmax_rows, x, y, rows, cols)
}

template <typename T>
void softmax_rows_backward(const T *y, const T *dy, T *dx, std::size_t rows, std::size_t cols) {
    LORASEG_DISPATCH(softmax_rows_backward, y, dy, dx, rows, cols)
}

template <typename T>
void layer_norm_rows(const T *x, const T *gamma, const T *beta, T *y, T *mean, T *rstd, std::size_t rows,
                     std::size_t cols, T eps) {
    LORASEG_DISPATCH(layer_norm_rows, x, gamma, beta, y, mean, rstd, rows, cols, eps)
}

template <typename T>
void layer_norm_rows_backward(const T *x, const T *gamma, const T *mean, const T *rstd, const T *dy, T *dx,
                              T *dgamma, T *dbeta, std::size_t rows, std::size_t cols) {
    LORASEG_DISPATCH(layer_norm_rows_backward, x, gamma, mean, rstd, dy, dx, dgamma, dbeta, rows, cols)
}

template <typename T>
void resize_bilinear(const T *x, T *y, int channels, int in_h, int in_w, int out_h, int out_w) {
    LORASEG_DISPATCH(resize_bilinear, x, y, channels, in_h, in_w, out_h, out_w)
}

template <typename T>
void resize_bilinear_backward(const T *dy, T *dx, int channels, int in_h, int in_w, int out_h, int out_w) {
    LORASEG_DISPATCH(resize_bilinear_backward, dy, dx, channels, in_h, in_w, out_h, out_w)
}

#undef LORASEG_DISPATCH

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

} // namespace loraseg::kernels
