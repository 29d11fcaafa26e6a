#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "loraseg/kernels.hpp"
#include "test_util.hpp"

namespace loraseg::kernels {
namespace {

using testing::random_tensor;

std::vector<double> rand_vec(std::size_t n, std::uint64_t seed) {
    auto t = random_tensor<double>({static_cast<std::int64_t>(n)}, seed);
    return {t.data().begin(), t.data().end()};
}

void expect_close(const std::vector<double> &a, const std::vector<double> &b, double tol) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

TEST(Kernels, GemmAllTransposes) {
    const int m = 5, n = 7, k = 6;
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            auto a = rand_vec(m * k, 1), b = rand_vec(k * n, 2);
            auto c_ref = rand_vec(m * n, 3), c_par = c_ref;
            const int lda = ta ? m : k, ldb = tb ? k : n;
            reference::gemm<double>(ta, tb, m, n, k, 0.5, a.data(), lda, b.data(), ldb, 2.0, c_ref.data(), n);
            parallel::gemm<double>(ta, tb, m, n, k, 0.5, a.data(), lda, b.data(), ldb, 2.0, c_par.data(), n);
            expect_close(c_ref, c_par, 1e-12);
        }
}

void check_conv(const Conv2dGeometry &g) {
    auto x = rand_vec(std::size_t(g.in_channels) * g.in_h * g.in_w, 4);
    auto w = rand_vec(std::size_t(g.out_channels) * g.in_channels * g.kernel_h * g.kernel_w, 5);
    auto b = rand_vec(g.out_channels, 6);
    const std::size_t ny = std::size_t(g.out_channels) * g.out_h() * g.out_w();
    std::vector<double> y_ref(ny), y_par(ny);
    reference::conv2d_forward<double>(g, x.data(), w.data(), b.data(), y_ref.data());
    parallel::conv2d_forward<double>(g, x.data(), w.data(), b.data(), y_par.data());
    expect_close(y_ref, y_par, 1e-12);

    auto dy = rand_vec(ny, 7);
    std::vector<double> dx_ref(x.size(), 0.25), dx_par(x.size(), 0.25);
    reference::conv2d_backward_input<double>(g, dy.data(), w.data(), dx_ref.data());
    parallel::conv2d_backward_input<double>(g, dy.data(), w.data(), dx_par.data());
    expect_close(dx_ref, dx_par, 1e-12);

    std::vector<double> dw_ref(w.size(), 0.0), dw_par(w.size(), 0.0), db_ref(b.size(), 0.0), db_par(b.size(), 0.0);
    reference::conv2d_backward_weight<double>(g, x.data(), dy.data(), dw_ref.data(), db_ref.data());
    parallel::conv2d_backward_weight<double>(g, x.data(), dy.data(), dw_par.data(), db_par.data());
    expect_close(dw_ref, dw_par, 1e-12);
    expect_close(db_ref, db_par, 1e-12);
}

TEST(Kernels, Conv2dMatchesReference) {
    check_conv({3, 4, 9, 8, 3, 3, 1, 1});
    check_conv({3, 5, 16, 12, 7, 7, 4, 3});
    check_conv({4, 8, 8, 8, 2, 2, 2, 0});
    check_conv({6, 3, 5, 7, 1, 1, 1, 0});
}

void check_conv_t(const ConvTranspose2dGeometry &g) {
    auto x = rand_vec(std::size_t(g.in_channels) * g.in_h * g.in_w, 8);
    auto w = rand_vec(std::size_t(g.in_channels) * g.out_channels * g.kernel_h * g.kernel_w, 9);
    auto b = rand_vec(g.out_channels, 10);
    const std::size_t ny = std::size_t(g.out_channels) * g.out_h() * g.out_w();
    std::vector<double> y_ref(ny), y_par(ny);
    reference::conv_transpose2d_forward<double>(g, x.data(), w.data(), b.data(), y_ref.data());
    parallel::conv_transpose2d_forward<double>(g, x.data(), w.data(), b.data(), y_par.data());
    expect_close(y_ref, y_par, 1e-12);

    auto dy = rand_vec(ny, 11);
    std::vector<double> dx_ref(x.size(), 0.0), dx_par(x.size(), 0.0);
    reference::conv_transpose2d_backward_input<double>(g, dy.data(), w.data(), dx_ref.data());
    parallel::conv_transpose2d_backward_input<double>(g, dy.data(), w.data(), dx_par.data());
    expect_close(dx_ref, dx_par, 1e-12);

    std::vector<double> dw_ref(w.size(), 0.0), dw_par(w.size(), 0.0), db_ref(b.size(), 0.0), db_par(b.size(), 0.0);
    reference::conv_transpose2d_backward_weight<double>(g, x.data(), dy.data(), dw_ref.data(), db_ref.data());
    parallel::conv_transpose2d_backward_weight<double>(g, x.data(), dy.data(), dw_par.data(), db_par.data());
    expect_close(dw_ref, dw_par, 1e-12);
    expect_close(db_ref, db_par, 1e-12);
}

TEST(Kernels, ConvTranspose2dMatchesReference) {
    check_conv_t({8, 4, 5, 6, 2, 2, 2, 0});
    check_conv_t({3, 2, 4, 4, 3, 3, 2, 1});
}

TEST(Kernels, RowKernelsMatchReference) {
    const std::size_t rows = 37, cols = 29;
    auto x = rand_vec(rows * cols, 12), dy = rand_vec(rows * cols, 13);
    auto gamma = rand_vec(cols, 14), beta = rand_vec(cols, 15);

    std::vector<double> y_ref(rows * cols), y_par(rows * cols);
    reference::softmax_rows<double>(x.data(), y_ref.data(), rows, cols);
    parallel::softmax_rows<double>(x.data(), y_par.data(), rows, cols);
    expect_close(y_ref, y_par, 1e-14);
    std::vector<double> dx_ref(rows * cols, 0.0), dx_par(rows * cols, 0.0);
    reference::softmax_rows_backward<double>(y_ref.data(), dy.data(), dx_ref.data(), rows, cols);
    parallel::softmax_rows_backward<double>(y_ref.data(), dy.data(), dx_par.data(), rows, cols);
    expect_close(dx_ref, dx_par, 1e-14);

    std::vector<double> m_ref(rows), r_ref(rows), m_par(rows), r_par(rows);
    reference::layer_norm_rows<double>(x.data(), gamma.data(), beta.data(), y_ref.data(), m_ref.data(), r_ref.data(),
                                       rows, cols, 1e-6);
    parallel::layer_norm_rows<double>(x.data(), gamma.data(), beta.data(), y_par.data(), m_par.data(), r_par.data(),
                                      rows, cols, 1e-6);
    expect_close(y_ref, y_par, 1e-12);
    std::vector<double> dg_ref(cols, 0.0), dg_par(cols, 0.0), db_ref(cols, 0.0), db_par(cols, 0.0);
    std::fill(dx_ref.begin(), dx_ref.end(), 0.0);
    std::fill(dx_par.begin(), dx_par.end(), 0.0);
    reference::layer_norm_rows_backward<double>(x.data(), gamma.data(), m_ref.data(), r_ref.data(), dy.data(),
                                                dx_ref.data(), dg_ref.data(), db_ref.data(), rows, cols);
    parallel::layer_norm_rows_backward<double>(x.data(), gamma.data(), m_ref.data(), r_ref.data(), dy.data(),
                                               dx_par.data(), dg_par.data(), db_par.data(), rows, cols);
    expect_close(dx_ref, dx_par, 1e-12);
    expect_close(dg_ref, dg_par, 1e-12);
    expect_close(db_ref, db_par, 1e-12);
}

TEST(Kernels, ResizeMatchesReference) {
    for (auto [ih, iw, oh, ow] : {std::array{4, 5, 16, 20}, std::array{9, 7, 3, 11}, std::array{8, 8, 8, 8}}) {
        const int c = 3;
        auto x = rand_vec(std::size_t(c) * ih * iw, 16);
        std::vector<double> y_ref(std::size_t(c) * oh * ow), y_par(y_ref.size());
        reference::resize_bilinear<double>(x.data(), y_ref.data(), c, ih, iw, oh, ow);
        parallel::resize_bilinear<double>(x.data(), y_par.data(), c, ih, iw, oh, ow);
        expect_close(y_ref, y_par, 1e-14);
        auto dy = rand_vec(y_ref.size(), 17);
        std::vector<double> dx_ref(x.size(), 0.0), dx_par(x.size(), 0.0);
        reference::resize_bilinear_backward<double>(dy.data(), dx_ref.data(), c, ih, iw, oh, ow);
        parallel::resize_bilinear_backward<double>(dy.data(), dx_par.data(), c, ih, iw, oh, ow);
        expect_close(dx_ref, dx_par, 1e-13);
    }
}

TEST(Kernels, SameSizeResizeIsIdentity) {
    auto x = rand_vec(2 * 6 * 5, 18);
    std::vector<double> y(x.size());
    reference::resize_bilinear<double>(x.data(), y.data(), 2, 6, 5, 6, 5);
    expect_close(x, y, 0.0);
}

} // namespace
} // namespace loraseg::kernels
