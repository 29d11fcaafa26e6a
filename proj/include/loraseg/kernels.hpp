#pragma once

#include <cstddef>

// Compute kernels behind the differentiable ops.
//
// Two implementations share one signature set:
//   kernels::reference  plain serial loops, kept as the testing oracle
//   kernels::parallel   OpenMP over independent rows/channels, GEMM through BLAS
// The unqualified kernels:: functions dispatch on the process-wide backend.
// Every backward kernel ACCUMULATES into its output buffers.

namespace loraseg::kernels {

enum class Backend { reference, parallel };

void set_backend(Backend backend);
Backend backend();

// Swaps the backend for the lifetime of the scope.
class BackendScope {
public:
    explicit BackendScope(Backend backend) : saved_(kernels::backend()) { set_backend(backend); }
    ~BackendScope() { set_backend(saved_); }
    BackendScope(const BackendScope &) = delete;
    BackendScope &operator=(const BackendScope &) = delete;

private:
    Backend saved_;
};

// Elementwise loops above this size run under OpenMP in the parallel backend.
inline constexpr std::size_t kParallelGrain = 1 << 14;
bool use_parallel(std::size_t work);

struct Conv2dGeometry {
    int in_channels = 0;
    int out_channels = 0;
    int in_h = 0;
    int in_w = 0;
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int padding = 0;

    int out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
    int out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
};

// Transposed convolution; weight layout is [in_channels, out_channels, kh, kw].
struct ConvTranspose2dGeometry {
    int in_channels = 0;
    int out_channels = 0;
    int in_h = 0;
    int in_w = 0;
    int kernel_h = 2;
    int kernel_w = 2;
    int stride = 2;
    int padding = 0;

    int out_h() const { return (in_h - 1) * stride - 2 * padding + kernel_h; }
    int out_w() const { return (in_w - 1) * stride - 2 * padding + kernel_w; }
};

#define LORASEG_KERNEL_DECLS                                                                              \
    template <typename T>                                                                                 \
    void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T *a, int lda, const T *b, \
              int ldb, T beta, T *c, int ldc);                                                            \
    template <typename T>                                                                                 \
    void conv2d_forward(const Conv2dGeometry &g, const T *x, const T *w, const T *bias, T *y);            \
    template <typename T>                                                                                 \
    void conv2d_backward_input(const Conv2dGeometry &g, const T *dy, const T *w, T *dx);                  \
    template <typename T>                                                                                 \
    void conv2d_backward_weight(const Conv2dGeometry &g, const T *x, const T *dy, T *dw, T *dbias);       \
    template <typename T>                                                                                 \
    void conv_transpose2d_forward(const ConvTranspose2dGeometry &g, const T *x, const T *w,               \
                                  const T *bias, T *y);                                                   \
    template <typename T>                                                                                 \
    void conv_transpose2d_backward_input(const ConvTranspose2dGeometry &g, const T *dy, const T *w,       \
                                         T *dx);                                                          \
    template <typename T>                                                                                 \
    void conv_transpose2d_backward_weight(const ConvTranspose2dGeometry &g, const T *x, const T *dy,      \
                                          T *dw, T *dbias);                                               \
    template <typename T>                                                                                 \
    void softmax_rows(const T *x, T *y, std::size_t rows, std::size_t cols);                              \
    template <typename T>                                                                                 \
    void softmax_rows_backward(const T *y, const T *dy, T *dx, std::size_t rows, std::size_t cols);       \
    template <typename T>                                                                                 \
    void layer_norm_rows(const T *x, const T *gamma, const T *beta, T *y, T *mean, T *rstd,              \
                         std::size_t rows, std::size_t cols, T eps);                                      \
    template <typename T>                                                                                 \
    void layer_norm_rows_backward(const T *x, const T *gamma, const T *mean, const T *rstd, const T *dy, \
                                  T *dx, T *dgamma, T *dbeta, std::size_t rows, std::size_t cols);        \
    template <typename T>                                                                                 \
    void resize_bilinear(const T *x, T *y, int channels, int in_h, int in_w, int out_h, int out_w);       \
    template <typename T>                                                                                 \
    void resize_bilinear_backward(const T *dy, T *dx, int channels, int in_h, int in_w, int out_h,        \
                                  int out_w);

namespace reference {
LORASEG_KERNEL_DECLS
} // namespace reference

namespace parallel {
LORASEG_KERNEL_DECLS
} // namespace parallel

LORASEG_KERNEL_DECLS

#undef LORASEG_KERNEL_DECLS

} // namespace loraseg::kernels
