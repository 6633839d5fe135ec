#pragma once

#include "lrod/tensor.hpp"

namespace lrod::kernels {

struct ConvGeometry {
    std::size_t batch, in_channels, height, width;
    std::size_t out_channels, kernel, stride, pad;
    std::size_t out_height, out_width;
};

/// Validates the operand shapes and derives output extents.
ConvGeometry conv_geometry(const Shape& x_shape, const Shape& w_shape, std::size_t stride, std::size_t pad);

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const ConvGeometry& g);
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& w, const ConvGeometry& g);
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, const ConvGeometry& g);

Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace lrod::kernels
