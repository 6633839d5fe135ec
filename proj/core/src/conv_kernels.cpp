#include "conv_kernels.hpp"

#include <algorithm>

#include <Eigen/Core>

#include "lrod/error.hpp"

namespace lrod::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Output columns [lo, hi) whose input column ow*stride + kj - pad is in range.
struct ValidRange {
    std::size_t lo, hi;
};

ValidRange valid_range(std::size_t k, std::size_t stride, std::size_t pad, std::size_t in, std::size_t out) {
    // ow*stride + k >= pad  and  ow*stride + k < pad + in
    std::size_t lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
    std::size_t hi = pad + in > k ? (pad + in - k + stride - 1) / stride : 0;
    hi = std::min(hi, out);
    lo = std::min(lo, hi);
    return {lo, hi};
}

// One sample: x is (C, H, W), cols is (C*K*K, Ho*Wo).
void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const std::size_t plane = g.out_height * g.out_width;
    const std::size_t s = g.stride;
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            const ValidRange rows = valid_range(ki, s, g.pad, g.height, g.out_height);
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const ValidRange cr = valid_range(kj, s, g.pad, g.width, g.out_width);
                double* dst = cols + ((c * g.kernel + ki) * g.kernel + kj) * plane;
                const double* xc = x + c * g.height * g.width;
                {
                    for (std::size_t oh = 0; oh < g.out_height; ++oh) {
                        double* d = dst + oh * g.out_width;
                        if (oh < rows.lo || oh >= rows.hi) {
                            std::fill(d, d + g.out_width, 0.0);
                            continue;
                        }
                        const double* src = xc + (oh * s + ki - g.pad) * g.width + (cr.lo * s + kj - g.pad);
                        const std::size_t len = cr.hi - cr.lo;
                        std::fill(d, d + cr.lo, 0.0);
                        if (s == 1)
                            std::copy(src, src + len, d + cr.lo);
                        else
                            for (std::size_t i = 0; i < len; ++i) d[cr.lo + i] = src[i * s];
                        std::fill(d + cr.hi, d + g.out_width, 0.0);
                    }
                }
            }
        }
}

void col2im(const double* cols, const ConvGeometry& g, double* x) {
    const std::size_t plane = g.out_height * g.out_width;
    const std::size_t s = g.stride;
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            const ValidRange rows = valid_range(ki, s, g.pad, g.height, g.out_height);
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const ValidRange cr = valid_range(kj, s, g.pad, g.width, g.out_width);
                const double* srcp = cols + ((c * g.kernel + ki) * g.kernel + kj) * plane;
                double* xc = x + c * g.height * g.width;
                {
                    for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
                        double* dst = xc + (oh * s + ki - g.pad) * g.width + (cr.lo * s + kj - g.pad);
                        const double* src = srcp + oh * g.out_width + cr.lo;
                        const std::size_t len = cr.hi - cr.lo;
                        if (s == 1)
                            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                        else
                            for (std::size_t i = 0; i < len; ++i) dst[i * s] += src[i];
                    }
                }
            }
        }
}

}  // namespace

ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad) {
    if (x.size() != 4 || w.size() != 4)
        throw ShapeError("conv2d expects NCHW input and OCKK weights, got " + to_string(x) + " and " + to_string(w));
    if (w[1] != x[1])
        throw ShapeError("conv2d channel mismatch: input " + to_string(x) + " vs weight " + to_string(w));
    if (w[2] != w[3]) throw ParameterError("conv2d supports square kernels only, got " + to_string(w));
    if (w[2] > 7) throw ParameterError("conv2d kernel larger than 7: " + to_string(w));
    if (stride != 1 && stride != 2) throw ParameterError("conv2d stride must be 1 or 2");
    if (x[2] + 2 * pad < w[2] || x[3] + 2 * pad < w[2])
        throw ShapeError("conv2d kernel " + to_string(w) + " exceeds padded input " + to_string(x));
    ConvGeometry g{};
    g.batch = x[0];
    g.in_channels = x[1];
    g.height = x[2];
    g.width = x[3];
    g.out_channels = w[0];
    g.kernel = w[2];
    g.stride = stride;
    g.pad = pad;
    g.out_height = (x[2] + 2 * pad - w[2]) / stride + 1;
    g.out_width = (x[3] + 2 * pad - w[2]) / stride + 1;
    return g;
}

// Samples are processed one at a time so the column buffer stays cache-sized.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const ConvGeometry& g) {
    const std::size_t ckk = g.in_channels * g.kernel * g.kernel;
    const std::size_t plane = g.out_height * g.out_width;
    const std::size_t in_size = g.in_channels * g.height * g.width;
    RowMat cols(ckk, plane);
    CMapMat wm(w.data().data(), g.out_channels, ckk);
    Tensor out({g.batch, g.out_channels, g.out_height, g.out_width});
    for (std::size_t n = 0; n < g.batch; ++n) {
        im2col(x.data().data() + n * in_size, g, cols.data());
        MapMat y(out.data().data() + n * g.out_channels * plane, g.out_channels, plane);
        y.noalias() = wm * cols;
    }
    return out;
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& w, const ConvGeometry& g) {
    const std::size_t ckk = g.in_channels * g.kernel * g.kernel;
    const std::size_t plane = g.out_height * g.out_width;
    const std::size_t in_size = g.in_channels * g.height * g.width;
    CMapMat wm(w.data().data(), g.out_channels, ckk);
    RowMat dcols(ckk, plane);
    Tensor dx({g.batch, g.in_channels, g.height, g.width});
    for (std::size_t n = 0; n < g.batch; ++n) {
        CMapMat gm(grad_out.data().data() + n * g.out_channels * plane, g.out_channels, plane);
        dcols.noalias() = wm.transpose() * gm;
        col2im(dcols.data(), g, dx.data().data() + n * in_size);
    }
    return dx;
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, const ConvGeometry& g) {
    const std::size_t ckk = g.in_channels * g.kernel * g.kernel;
    const std::size_t plane = g.out_height * g.out_width;
    const std::size_t in_size = g.in_channels * g.height * g.width;
    RowMat cols(ckk, plane);
    Tensor dw({g.out_channels, g.in_channels, g.kernel, g.kernel});
    MapMat dwm(dw.data().data(), g.out_channels, ckk);
    for (std::size_t n = 0; n < g.batch; ++n) {
        im2col(x.data().data() + n * in_size, g, cols.data());
        CMapMat gm(grad_out.data().data() + n * g.out_channels * plane, g.out_channels, plane);
        dwm.noalias() += gm * cols.transpose();
    }
    return dw;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    Tensor out({a.dim(0), b.dim(1)});
    CMapMat am(a.data().data(), a.dim(0), a.dim(1));
    CMapMat bm(b.data().data(), b.dim(0), b.dim(1));
    MapMat om(out.data().data(), a.dim(0), b.dim(1));
    om.noalias() = am * bm;
    return out;
}

}  // namespace lrod::kernels
