#include "loraseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <memory>
#include <numbers>
#include <string>

#include "loraseg/kernels.hpp"

namespace loraseg {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
Tape<T> *recording(std::initializer_list<const Tensor<T> *> inputs) {
    Tape<T> *tape = Tape<T>::active();
    if (!tape) return nullptr;
    for (const Tensor<T> *t : inputs)
        if (t->defined() && t->requires_grad()) return tape;
    return nullptr;
}

template <typename T>
void mark_recorded(const Tensor<T> &out) {
    out.node()->requires_grad = true;
    out.node()->is_leaf = false;
}

template <typename T>
bool wants(const NodePtr<T> &n) {
    return n && n->requires_grad;
}

template <typename T>
void require_defined(const Tensor<T> &t, const char *op) {
    if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor argument");
}

std::string two_shapes(const char *op, const Shape &a, const Shape &b) {
    return std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
}

enum class BinaryKind { add, sub, mul, div };

template <typename T>
Tensor<T> binary(const Tensor<T> &a, const Tensor<T> &b, BinaryKind kind, const char *name) {
    require_defined(a, name);
    require_defined(b, name);
    const bool same = a.shape() == b.shape();
    const bool a_scalar = !same && a.rank() == 0;
    const bool b_scalar = !same && b.rank() == 0;
    if (!same && !a_scalar && !b_scalar) throw ShapeError(two_shapes(name, a.shape(), b.shape()));
    Tensor<T> out(a_scalar ? b.shape() : a.shape());
    const std::size_t n = out.numel();
    const T *pa = a.data().data();
    const T *pb = b.data().data();
    T *po = out.mutable_data().data();
    const std::size_t sa = a_scalar ? 0 : 1, sb = b_scalar ? 0 : 1;
#pragma omp parallel for simd if (kernels::use_parallel(n))
    for (std::size_t i = 0; i < n; ++i) {
        const T x = pa[i * sa], y = pb[i * sb];
        switch (kind) {
        case BinaryKind::add: po[i] = x + y; break;
        case BinaryKind::sub: po[i] = x - y; break;
        case BinaryKind::mul: po[i] = x * y; break;
        case BinaryKind::div: po[i] = x / y; break;
        }
    }
    if (auto *tape = recording({&a, &b})) {
        mark_recorded(out);
        tape->record(name, {a.node(), b.node()}, out.node(),
                     [an = a.node(), bn = b.node(), on = out.node(), kind, sa, sb, n] {
                         const T *g = on->grad.data();
                         const T *x = an->data.data();
                         const T *y = bn->data.data();
                         if (wants<T>(an)) {
                             T *dx = an->grad.data();
                             T acc = 0;
                             for (std::size_t i = 0; i < n; ++i) {
                                 T d;
                                 switch (kind) {
                                 case BinaryKind::add:
                                 case BinaryKind::sub: d = g[i]; break;
                                 case BinaryKind::mul: d = g[i] * y[i * sb]; break;
                                 default: d = g[i] / y[i * sb]; break;
                                 }
                                 if (sa) dx[i] += d;
                                 else acc += d;
                             }
                             if (!sa) dx[0] += acc;
                         }
                         if (wants<T>(bn)) {
                             T *dy = bn->grad.data();
                             T acc = 0;
                             for (std::size_t i = 0; i < n; ++i) {
                                 T d;
                                 switch (kind) {
                                 case BinaryKind::add: d = g[i]; break;
                                 case BinaryKind::sub: d = -g[i]; break;
                                 case BinaryKind::mul: d = g[i] * x[i * sa]; break;
                                 default: {
                                     const T yv = y[i * sb];
                                     d = -g[i] * x[i * sa] / (yv * yv);
                                     break;
                                 }
                                 }
                                 if (sb) dy[i] += d;
                                 else acc += d;
                             }
                             if (!sb) dy[0] += acc;
                         }
                     });
    }
    return out;
}

// Pointwise map with derivative d(x, y) expressed through input and output.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T> &x, const char *name, Fwd fwd, Deriv deriv) {
    require_defined(x, name);
    Tensor<T> out(x.shape());
    const std::size_t n = out.numel();
    const T *px = x.data().data();
    T *po = out.mutable_data().data();
#pragma omp parallel for if (kernels::use_parallel(n))
    for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    if (auto *tape = recording({&x})) {
        mark_recorded(out);
        tape->record(name, {x.node()}, out.node(), [xn = x.node(), on = out.node(), deriv, n] {
            const T *g = on->grad.data();
            const T *xv = xn->data.data();
            const T *yv = on->data.data();
            T *dx = xn->grad.data();
#pragma omp parallel for if (kernels::use_parallel(n))
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * deriv(xv[i], yv[i]);
        });
    }
    return out;
}

std::size_t rows_of(const Shape &s) {
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= static_cast<std::size_t>(s[i]);
    return r;
}

std::vector<std::size_t> permute_offsets(const Shape &in_shape, const std::vector<int> &order) {
    const std::size_t rank = in_shape.size();
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * static_cast<std::size_t>(in_shape[i]);
    Shape out_shape(rank);
    std::vector<std::size_t> stride(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[static_cast<std::size_t>(order[i])];
        stride[i] = in_stride[static_cast<std::size_t>(order[i])];
    }
    const std::size_t n = static_cast<std::size_t>(shape_numel(in_shape));
    std::vector<std::size_t> offsets(n);
    std::vector<std::int64_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        offsets[i] = off;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out_shape[d]) {
                off += stride[d];
                break;
            }
            off -= stride[d] * static_cast<std::size_t>(idx[d] - 1);
            idx[d] = 0;
        }
    }
    return offsets;
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
    return binary(a, b, BinaryKind::add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b) {
    return binary(a, b, BinaryKind::sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
    return binary(a, b, BinaryKind::mul, "mul");
}
template <typename T>
Tensor<T> div(const Tensor<T> &a, const Tensor<T> &b) {
    return binary(a, b, BinaryKind::div, "div");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T> &x, T value) {
    return unary(
        x, "add_scalar", [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T> &x, T value) {
    return unary(
        x, "mul_scalar", [value](T v) { return v * value; }, [value](T, T) { return value; });
}

template <typename T>
Tensor<T> neg(const Tensor<T> &x) {
    return mul_scalar(x, T(-1));
}

template <typename T>
Tensor<T> add_bias(const Tensor<T> &x, const Tensor<T> &bias) {
    require_defined(x, "add_bias");
    require_defined(bias, "add_bias");
    if (x.rank() < 1 || bias.rank() != 1 || bias.dim(0) != x.dim(-1))
        throw ShapeError(two_shapes("add_bias", x.shape(), bias.shape()));
    const std::size_t cols = static_cast<std::size_t>(bias.dim(0));
    const std::size_t rows = x.numel() / std::max<std::size_t>(cols, 1);
    Tensor<T> out(x.shape());
    const T *px = x.data().data();
    const T *pb = bias.data().data();
    T *po = out.mutable_data().data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] + pb[c];
    if (auto *tape = recording({&x, &bias})) {
        mark_recorded(out);
        tape->record("add_bias", {x.node(), bias.node()}, out.node(),
                     [xn = x.node(), bn = bias.node(), on = out.node(), rows, cols] {
                         const T *g = on->grad.data();
                         if (wants<T>(xn))
                             for (std::size_t i = 0; i < rows * cols; ++i) xn->grad[i] += g[i];
                         if (wants<T>(bn))
                             for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < cols; ++c) bn->grad[c] += g[r * cols + c];
                     });
    }
    return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T> &x) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    return unary(
        x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T> &x) {
    return unary(
        x, "sigmoid",
        [](T v) {
            if (v >= 0) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log(const Tensor<T> &x) {
    return unary(
        x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T> &x, T exponent) {
    return unary(
        x, "pow_scalar", [exponent](T v) { return std::pow(v, exponent); },
        [exponent](T v, T) { return exponent * std::pow(v, exponent - T(1)); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T> &x, T lo, T hi) {
    return unary(
        x, "clamp", [lo, hi](T v) { return std::clamp(v, lo, hi); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T> &x) {
    require_defined(x, "sum");
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (auto *tape = recording({&x})) {
        mark_recorded(out);
        tape->record("sum", {x.node()}, out.node(), [xn = x.node(), on = out.node()] {
            const T g = on->grad[0];
            for (T &d : xn->grad) d += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T> &x) {
    require_defined(x, "mean");
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    return mul_scalar(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.rank() < 2 || b.rank() != 2 || a.dim(-1) != b.dim(0))
        throw ShapeError(two_shapes("matmul", a.shape(), b.shape()));
    const int m = static_cast<int>(rows_of(a.shape()));
    const int k = static_cast<int>(b.dim(0));
    const int n = static_cast<int>(b.dim(1));
    Shape os = a.shape();
    os.back() = n;
    Tensor<T> out(os);
    kernels::gemm<T>(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
                     out.mutable_data().data(), n);
    if (auto *tape = recording({&a, &b})) {
        mark_recorded(out);
        tape->record("matmul", {a.node(), b.node()}, out.node(), [an = a.node(), bn = b.node(), on = out.node(), m, n, k] {
            if (wants<T>(an))
                kernels::gemm<T>(false, true, m, k, n, T(1), on->grad.data(), n, bn->data.data(), n, T(1),
                                 an->grad.data(), k);
            if (wants<T>(bn))
                kernels::gemm<T>(true, false, k, n, m, T(1), an->data.data(), k, on->grad.data(), n, T(1),
                                 bn->grad.data(), n);
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T> &a, const Tensor<T> &b) {
    require_defined(a, "matmul_nt");
    require_defined(b, "matmul_nt");
    if (a.rank() < 1 || b.rank() != 2 || a.dim(-1) != b.dim(1))
        throw ShapeError(two_shapes("matmul_nt", a.shape(), b.shape()));
    const int m = static_cast<int>(rows_of(a.shape()));
    const int k = static_cast<int>(b.dim(1));
    const int n = static_cast<int>(b.dim(0));
    Shape os = a.shape();
    os.back() = n;
    Tensor<T> out(os);
    kernels::gemm<T>(false, true, m, n, k, T(1), a.data().data(), k, b.data().data(), k, T(0),
                     out.mutable_data().data(), n);
    if (auto *tape = recording({&a, &b})) {
        mark_recorded(out);
        tape->record("matmul_nt", {a.node(), b.node()}, out.node(),
                     [an = a.node(), bn = b.node(), on = out.node(), m, n, k] {
                         if (wants<T>(an))
                             kernels::gemm<T>(false, false, m, k, n, T(1), on->grad.data(), n, bn->data.data(), k,
                                              T(1), an->grad.data(), k);
                         if (wants<T>(bn))
                             kernels::gemm<T>(true, false, n, k, m, T(1), on->grad.data(), n, an->data.data(), k,
                                              T(1), bn->grad.data(), k);
                     });
    }
    return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T> &a, const Tensor<T> &b, bool trans_b) {
    require_defined(a, "bmm");
    require_defined(b, "bmm");
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != (trans_b ? b.dim(2) : b.dim(1)))
        throw ShapeError(two_shapes("bmm", a.shape(), b.shape()));
    const int batch = static_cast<int>(a.dim(0));
    const int m = static_cast<int>(a.dim(1));
    const int k = static_cast<int>(a.dim(2));
    const int n = static_cast<int>(trans_b ? b.dim(1) : b.dim(2));
    Tensor<T> out({batch, m, n});
    const std::size_t sa = std::size_t(m) * k, sb = std::size_t(k) * n, so = std::size_t(m) * n;
    const int ldb = trans_b ? k : n;
    for (int i = 0; i < batch; ++i)
        kernels::gemm<T>(false, trans_b, m, n, k, T(1), a.data().data() + i * sa, k, b.data().data() + i * sb, ldb,
                         T(0), out.mutable_data().data() + i * so, n);
    if (auto *tape = recording({&a, &b})) {
        mark_recorded(out);
        tape->record("bmm", {a.node(), b.node()}, out.node(),
                     [an = a.node(), bn = b.node(), on = out.node(), batch, m, n, k, trans_b, sa, sb, so, ldb] {
                         for (int i = 0; i < batch; ++i) {
                             const T *g = on->grad.data() + i * so;
                             if (wants<T>(an))
                                 kernels::gemm<T>(false, !trans_b, m, k, n, T(1), g, n, bn->data.data() + i * sb,
                                                  ldb, T(1), an->grad.data() + i * sa, k);
                             if (wants<T>(bn)) {
                                 if (trans_b)
                                     kernels::gemm<T>(true, false, n, k, m, T(1), g, n, an->data.data() + i * sa, k,
                                                      T(1), bn->grad.data() + i * sb, k);
                                 else
                                     kernels::gemm<T>(true, false, k, n, m, T(1), an->data.data() + i * sa, k, g, n,
                                                      T(1), bn->grad.data() + i * sb, n);
                             }
                         }
                     });
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T> &x, const Tensor<T> &weight, const Tensor<T> &bias, int stride, int padding) {
    require_defined(x, "conv2d");
    require_defined(weight, "conv2d");
    if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0))
        throw ShapeError(two_shapes("conv2d", x.shape(), weight.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
        throw ShapeError(two_shapes("conv2d bias", weight.shape(), bias.shape()));
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
    kernels::Conv2dGeometry g;
    g.in_channels = static_cast<int>(x.dim(0));
    g.in_h = static_cast<int>(x.dim(1));
    g.in_w = static_cast<int>(x.dim(2));
    g.out_channels = static_cast<int>(weight.dim(0));
    g.kernel_h = static_cast<int>(weight.dim(2));
    g.kernel_w = static_cast<int>(weight.dim(3));
    g.stride = stride;
    g.padding = padding;
    if (g.in_h + 2 * padding < g.kernel_h || g.in_w + 2 * padding < g.kernel_w)
        throw ShapeError(two_shapes("conv2d kernel larger than input", x.shape(), weight.shape()));
    Tensor<T> out({g.out_channels, g.out_h(), g.out_w()});
    kernels::conv2d_forward<T>(g, x.data().data(), weight.data().data(),
                               bias.defined() ? bias.data().data() : nullptr, out.mutable_data().data());
    if (auto *tape = recording({&x, &weight, &bias})) {
        mark_recorded(out);
        tape->record("conv2d", {x.node(), weight.node(), bias.defined() ? bias.node() : nullptr}, out.node(),
                     [xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr, on = out.node(), g] {
                         if (wants<T>(xn))
                             kernels::conv2d_backward_input<T>(g, on->grad.data(), wn->data.data(), xn->grad.data());
                         const bool dw = wants<T>(wn), db = wants<T>(bn);
                         if (dw || db)
                             kernels::conv2d_backward_weight<T>(g, xn->data.data(), on->grad.data(),
                                                                dw ? wn->grad.data() : nullptr,
                                                                db ? bn->grad.data() : nullptr);
                     });
    }
    return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T> &x, const Tensor<T> &weight, const Tensor<T> &bias, int stride,
                           int padding) {
    require_defined(x, "conv_transpose2d");
    require_defined(weight, "conv_transpose2d");
    if (x.rank() != 3 || weight.rank() != 4 || weight.dim(0) != x.dim(0))
        throw ShapeError(two_shapes("conv_transpose2d", x.shape(), weight.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(1)))
        throw ShapeError(two_shapes("conv_transpose2d bias", weight.shape(), bias.shape()));
    if (stride < 1 || padding < 0) throw ShapeError("conv_transpose2d: invalid stride/padding");
    kernels::ConvTranspose2dGeometry g;
    g.in_channels = static_cast<int>(x.dim(0));
    g.in_h = static_cast<int>(x.dim(1));
    g.in_w = static_cast<int>(x.dim(2));
    g.out_channels = static_cast<int>(weight.dim(1));
    g.kernel_h = static_cast<int>(weight.dim(2));
    g.kernel_w = static_cast<int>(weight.dim(3));
    g.stride = stride;
    g.padding = padding;
    if (g.out_h() <= 0 || g.out_w() <= 0) throw ShapeError("conv_transpose2d: empty output");
    Tensor<T> out({g.out_channels, g.out_h(), g.out_w()});
    kernels::conv_transpose2d_forward<T>(g, x.data().data(), weight.data().data(),
                                         bias.defined() ? bias.data().data() : nullptr, out.mutable_data().data());
    if (auto *tape = recording({&x, &weight, &bias})) {
        mark_recorded(out);
        tape->record("conv_transpose2d", {x.node(), weight.node(), bias.defined() ? bias.node() : nullptr},
                     out.node(),
                     [xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr, on = out.node(), g] {
                         if (wants<T>(xn))
                             kernels::conv_transpose2d_backward_input<T>(g, on->grad.data(), wn->data.data(),
                                                                         xn->grad.data());
                         const bool dw = wants<T>(wn), db = wants<T>(bn);
                         if (dw || db)
                             kernels::conv_transpose2d_backward_weight<T>(g, xn->data.data(), on->grad.data(),
                                                                          dw ? wn->grad.data() : nullptr,
                                                                          db ? bn->grad.data() : nullptr);
                     });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta, T eps) {
    require_defined(x, "layer_norm");
    require_defined(gamma, "layer_norm");
    require_defined(beta, "layer_norm");
    if (x.rank() < 1 || gamma.shape() != Shape{x.dim(-1)} || beta.shape() != gamma.shape())
        throw ShapeError(two_shapes("layer_norm", x.shape(), gamma.shape()));
    const std::size_t cols = static_cast<std::size_t>(x.dim(-1));
    const std::size_t rows = rows_of(x.shape());
    Tensor<T> out(x.shape());
    auto stats = std::make_shared<std::vector<T>>(2 * rows);
    kernels::layer_norm_rows<T>(x.data().data(), gamma.data().data(), beta.data().data(), out.mutable_data().data(),
                                stats->data(), stats->data() + rows, rows, cols, eps);
    if (auto *tape = recording({&x, &gamma, &beta})) {
        mark_recorded(out);
        tape->record("layer_norm", {x.node(), gamma.node(), beta.node()}, out.node(),
                     [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(), stats, rows, cols] {
                         kernels::layer_norm_rows_backward<T>(
                             xn->data.data(), gn->data.data(), stats->data(), stats->data() + rows, on->grad.data(),
                             wants<T>(xn) ? xn->grad.data() : nullptr, wants<T>(gn) ? gn->grad.data() : nullptr,
                             wants<T>(bn) ? bn->grad.data() : nullptr, rows, cols);
                     });
    }
    return out;
}

template <typename T>
Tensor<T> softmax_lastaxis(const Tensor<T> &x) {
    require_defined(x, "softmax_lastaxis");
    if (x.rank() < 1 || x.dim(-1) == 0) throw ShapeError("softmax_lastaxis: empty last axis in " + shape_str(x.shape()));
    const std::size_t cols = static_cast<std::size_t>(x.dim(-1));
    const std::size_t rows = rows_of(x.shape());
    Tensor<T> out(x.shape());
    kernels::softmax_rows<T>(x.data().data(), out.mutable_data().data(), rows, cols);
    if (auto *tape = recording({&x})) {
        mark_recorded(out);
        tape->record("softmax_lastaxis", {x.node()}, out.node(), [xn = x.node(), on = out.node(), rows, cols] {
            kernels::softmax_rows_backward<T>(on->data.data(), on->grad.data(), xn->grad.data(), rows, cols);
        });
    }
    return out;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T> &x, int out_h, int out_w) {
    require_defined(x, "resize_bilinear");
    if (x.rank() != 3 || out_h <= 0 || out_w <= 0 || x.dim(1) == 0 || x.dim(2) == 0)
        throw ShapeError("resize_bilinear: expected [C,H,W] input and positive output size, got " +
                         shape_str(x.shape()));
    const int c = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1)), w = static_cast<int>(x.dim(2));
    Tensor<T> out({c, out_h, out_w});
    kernels::resize_bilinear<T>(x.data().data(), out.mutable_data().data(), c, h, w, out_h, out_w);
    if (auto *tape = recording({&x})) {
        mark_recorded(out);
        tape->record("resize_bilinear", {x.node()}, out.node(), [xn = x.node(), on = out.node(), c, h, w, out_h, out_w] {
            kernels::resize_bilinear_backward<T>(on->grad.data(), xn->grad.data(), c, h, w, out_h, out_w);
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T> &x, int axis, std::int64_t start, std::int64_t end) {
    require_defined(x, "slice");
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank() || start < 0 || end > x.dim(axis) || start > end)
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for shape " + shape_str(x.shape()));
    const Shape &s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
    for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<std::size_t>(s[i]);
    const std::size_t len = static_cast<std::size_t>(end - start);
    const std::size_t full = static_cast<std::size_t>(s[axis]);
    Shape os = s;
    os[axis] = static_cast<std::int64_t>(len);
    Tensor<T> out(os);
    const T *px = x.data().data();
    T *po = out.mutable_data().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(px + (o * full + static_cast<std::size_t>(start)) * inner, len * inner, po + o * len * inner);
    if (auto *tape = recording({&x})) {
        mark_recorded(out);
        tape->record("slice", {x.node()}, out.node(), [xn = x.node(), on = out.node(), outer, inner, len, full, start] {
            for (std::size_t o = 0; o < outer; ++o) {
                T *dst = xn->grad.data() + (o * full + static_cast<std::size_t>(start)) * inner;
                const T *src = on->grad.data() + o * len * inner;
                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>> &parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    for (const auto &p : parts) require_defined(p, "concat");
    const int rank = parts[0].rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range for " + shape_str(parts[0].shape()));
    Shape os = parts[0].shape();
    os[axis] = 0;
    for (const auto &p : parts) {
        bool ok = p.rank() == rank;
        for (int i = 0; ok && i < rank; ++i)
            if (i != axis && p.dim(i) != parts[0].dim(i)) ok = false;
        if (!ok) throw ShapeError(two_shapes("concat", parts[0].shape(), p.shape()));
        os[axis] += p.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(os[i]);
    for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(os[i]);
    const std::size_t total = static_cast<std::size_t>(os[axis]);
    Tensor<T> out(os);
    T *po = out.mutable_data().data();
    std::size_t offset = 0;
    std::vector<std::size_t> lens;
    for (const auto &p : parts) {
        const std::size_t len = static_cast<std::size_t>(p.dim(axis));
        lens.push_back(len);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.data().data() + o * len * inner, len * inner, po + (o * total + offset) * inner);
        offset += len;
    }
    Tape<T> *tape = Tape<T>::active();
    bool any = false;
    for (const auto &p : parts) any = any || p.requires_grad();
    if (tape && any) {
        mark_recorded(out);
        std::vector<NodePtr<T>> nodes;
        for (const auto &p : parts) nodes.push_back(p.node());
        tape->record("concat", nodes, out.node(), [nodes, on = out.node(), lens, outer, inner, total] {
            std::size_t off = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                const std::size_t len = lens[k];
                if (wants<T>(nodes[k]))
                    for (std::size_t o = 0; o < outer; ++o) {
                        const T *src = on->grad.data() + (o * total + off) * inner;
                        T *dst = nodes[k]->grad.data() + o * len * inner;
                        for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                    }
                off += len;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T> &x, Shape shape) {
    require_defined(x, "reshape");
    if (shape_numel(shape) != static_cast<std::int64_t>(x.numel()))
        throw ShapeError(two_shapes("reshape", x.shape(), shape));
    Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    if (auto *tape = recording({&x})) {
        mark_recorded(out);
        tape->record("reshape", {x.node()}, out.node(), [xn = x.node(), on = out.node()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T> &x, const std::vector<int> &order) {
    require_defined(x, "permute");
    const int rank = x.rank();
    std::vector<int> seen(static_cast<std::size_t>(rank), 0);
    bool ok = static_cast<int>(order.size()) == rank;
    for (int i = 0; ok && i < rank; ++i) ok = order[i] >= 0 && order[i] < rank && !seen[order[i]]++;
    if (!ok) throw ShapeError("permute: invalid axis order for shape " + shape_str(x.shape()));
    Shape os(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) os[i] = x.dim(order[i]);
    auto offsets = std::make_shared<std::vector<std::size_t>>(permute_offsets(x.shape(), order));
    Tensor<T> out(os);
    const T *px = x.data().data();
    T *po = out.mutable_data().data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = px[(*offsets)[i]];
    if (auto *tape = recording({&x})) {
        mark_recorded(out);
        tape->record("permute", {x.node()}, out.node(), [xn = x.node(), on = out.node(), offsets] {
            const std::size_t n = on->grad.size();
            for (std::size_t i = 0; i < n; ++i) xn->grad[(*offsets)[i]] += on->grad[i];
        });
    }
    return out;
}

namespace {

// Source offset in [H, W, C] for each window row, or npos for padding.
std::vector<std::size_t> window_rows(int h, int w, int window, int &num_windows) {
    const int nh = (h + window - 1) / window, nw = (w + window - 1) / window;
    num_windows = nh * nw;
    std::vector<std::size_t> rows(static_cast<std::size_t>(num_windows) * window * window);
    std::size_t r = 0;
    for (int wy = 0; wy < nh; ++wy)
        for (int wx = 0; wx < nw; ++wx)
            for (int y = 0; y < window; ++y)
                for (int x = 0; x < window; ++x) {
                    const int sy = wy * window + y, sx = wx * window + x;
                    rows[r++] = (sy < h && sx < w) ? static_cast<std::size_t>(sy) * w + sx : std::size_t(-1);
                }
    return rows;
}

} // namespace

template <typename T>
Tensor<T> window_partition(const Tensor<T> &x, int window) {
    require_defined(x, "window_partition");
    if (x.rank() != 3 || window < 1) throw ShapeError("window_partition: expected [H,W,C], got " + shape_str(x.shape()));
    const int h = static_cast<int>(x.dim(0)), w = static_cast<int>(x.dim(1));
    const std::size_t c = static_cast<std::size_t>(x.dim(2));
    int nwin = 0;
    auto rows = std::make_shared<std::vector<std::size_t>>(window_rows(h, w, window, nwin));
    Tensor<T> out({nwin, static_cast<std::int64_t>(window) * window, static_cast<std::int64_t>(c)});
    const T *px = x.data().data();
    T *po = out.mutable_data().data();
    for (std::size_t r = 0; r < rows->size(); ++r)
        if ((*rows)[r] != std::size_t(-1)) std::copy_n(px + (*rows)[r] * c, c, po + r * c);
    if (auto *tape = recording({&x})) {
        mark_recorded(out);
        tape->record("window_partition", {x.node()}, out.node(), [xn = x.node(), on = out.node(), rows, c] {
            for (std::size_t r = 0; r < rows->size(); ++r) {
                if ((*rows)[r] == std::size_t(-1)) continue;
                T *dst = xn->grad.data() + (*rows)[r] * c;
                const T *src = on->grad.data() + r * c;
                for (std::size_t i = 0; i < c; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> window_unpartition(const Tensor<T> &windows, int window, int height, int width) {
    require_defined(windows, "window_unpartition");
    int nwin = 0;
    if (window < 1 || height < 1 || width < 1) throw ShapeError("window_unpartition: invalid geometry");
    auto rows = std::make_shared<std::vector<std::size_t>>(window_rows(height, width, window, nwin));
    if (windows.rank() != 3 || windows.dim(0) != nwin || windows.dim(1) != std::int64_t(window) * window)
        throw ShapeError("window_unpartition: shape " + shape_str(windows.shape()) + " does not match " +
                         std::to_string(height) + "x" + std::to_string(width) + " with window " +
                         std::to_string(window));
    const std::size_t c = static_cast<std::size_t>(windows.dim(2));
    Tensor<T> out({height, width, static_cast<std::int64_t>(c)});
    const T *pw = windows.data().data();
    T *po = out.mutable_data().data();
    for (std::size_t r = 0; r < rows->size(); ++r)
        if ((*rows)[r] != std::size_t(-1)) std::copy_n(pw + r * c, c, po + (*rows)[r] * c);
    if (auto *tape = recording({&windows})) {
        mark_recorded(out);
        tape->record("window_unpartition", {windows.node()}, out.node(), [wn = windows.node(), on = out.node(), rows, c] {
            for (std::size_t r = 0; r < rows->size(); ++r) {
                if ((*rows)[r] == std::size_t(-1)) continue;
                T *dst = wn->grad.data() + r * c;
                const T *src = on->grad.data() + (*rows)[r] * c;
                for (std::size_t i = 0; i < c; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

#define LORASEG_INSTANTIATE_OPS(T)                                                                 \
    template Tensor<T> add(const Tensor<T> &, const Tensor<T> &);                                  \
    template Tensor<T> sub(const Tensor<T> &, const Tensor<T> &);                                  \
    template Tensor<T> mul(const Tensor<T> &, const Tensor<T> &);                                  \
    template Tensor<T> div(const Tensor<T> &, const Tensor<T> &);                                  \
    template Tensor<T> add_scalar(const Tensor<T> &, T);                                           \
    template Tensor<T> mul_scalar(const Tensor<T> &, T);                                           \
    template Tensor<T> neg(const Tensor<T> &);                                                     \
    template Tensor<T> add_bias(const Tensor<T> &, const Tensor<T> &);                             \
    template Tensor<T> gelu(const Tensor<T> &);                                                    \
    template Tensor<T> sigmoid(const Tensor<T> &);                                                 \
    template Tensor<T> log(const Tensor<T> &);                                                     \
    template Tensor<T> pow_scalar(const Tensor<T> &, T);                                           \
    template Tensor<T> clamp(const Tensor<T> &, T, T);                                             \
    template Tensor<T> sum(const Tensor<T> &);                                                     \
    template Tensor<T> mean(const Tensor<T> &);                                                    \
    template Tensor<T> matmul(const Tensor<T> &, const Tensor<T> &);                               \
    template Tensor<T> matmul_nt(const Tensor<T> &, const Tensor<T> &);                            \
    template Tensor<T> bmm(const Tensor<T> &, const Tensor<T> &, bool);                            \
    template Tensor<T> conv2d(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, int, int);  \
    template Tensor<T> conv_transpose2d(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, int, int); \
    template Tensor<T> layer_norm(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, T);     \
    template Tensor<T> softmax_lastaxis(const Tensor<T> &);                                        \
    template Tensor<T> resize_bilinear(const Tensor<T> &, int, int);                               \
    template Tensor<T> slice(const Tensor<T> &, int, std::int64_t, std::int64_t);                  \
    template Tensor<T> concat(const std::vector<Tensor<T>> &, int);                                \
    template Tensor<T> reshape(const Tensor<T> &, Shape);                                          \
    template Tensor<T> permute(const Tensor<T> &, const std::vector<int> &);                       \
    template Tensor<T> window_partition(const Tensor<T> &, int);                                   \
    template Tensor<T> window_unpartition(const Tensor<T> &, int, int, int);

LORASEG_INSTANTIATE_OPS(float)
LORASEG_INSTANTIATE_OPS(double)

} // namespace loraseg
