#include "taco/nn.hpp"

#include <Eigen/Core>
#include <cmath>

namespace taco::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

}  // namespace

Conv2d::Conv2d(int in, int out, int k, int s, int p)
    : in_channels(in), out_channels(out), kernel(k), stride(s), pad(p),
      weight(static_cast<std::size_t>(out) * in * k * k, 0.0), bias(static_cast<std::size_t>(out), 0.0) {}

void Conv2d::init_he(Rng& rng, double slope) {
    const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
    const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& w : weight) w = normal(rng);
    for (auto& b : bias) b = 0.0;
}

void Conv2d::zero() {
    std::fill(weight.begin(), weight.end(), 0.0);
    std::fill(bias.begin(), bias.end(), 0.0);
}

Image conv_forward(const Conv2d& conv, const Image& input, ConvCache& cache) {
    if (input.channels != conv.in_channels) throw ShapeError("conv_forward: channel mismatch");
    const int k = conv.kernel;
    const int oh = conv.out_size(input.height);
    const int ow = conv.out_size(input.width);
    if (oh <= 0 || ow <= 0) throw ShapeError("conv_forward: input smaller than kernel");
    cache.in_height = input.height;
    cache.in_width = input.width;
    cache.out_height = oh;
    cache.out_width = ow;
    const std::size_t rows = static_cast<std::size_t>(conv.in_channels) * k * k;
    const std::size_t ncols = static_cast<std::size_t>(oh) * ow;
    cache.cols.assign(rows * ncols, 0.0);
    for (int c = 0; c < conv.in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cache.cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ncols;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * conv.stride + ky - conv.pad;
                    if (iy < 0 || iy >= input.height) continue;
                    const double* src = input.data.data() + input.index(c, iy, 0);
                    double* dst = row + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * conv.stride + kx - conv.pad;
                        if (ix >= 0 && ix < input.width) dst[ox] = src[ix];
                    }
                }
            }
        }
    }
    Image out(conv.out_channels, oh, ow);
    ConstMapMat w(conv.weight.data(), conv.out_channels, static_cast<Eigen::Index>(rows));
    ConstMapMat cols(cache.cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ncols));
    MapMat o(out.data.data(), conv.out_channels, static_cast<Eigen::Index>(ncols));
    o.noalias() = w * cols;
    for (int c = 0; c < conv.out_channels; ++c) o.row(c).array() += conv.bias[static_cast<std::size_t>(c)];
    return out;
}

Image conv_backward(const Conv2d& conv, const ConvCache& cache, const Image& d_out, Conv2d* grad,
                    bool want_input_grad) {
    const int k = conv.kernel;
    const int oh = cache.out_height;
    const int ow = cache.out_width;
    if (d_out.channels != conv.out_channels || d_out.height != oh || d_out.width != ow)
        throw ShapeError("conv_backward: gradient shape mismatch");
    if (cache.cols.empty()) throw MissingCacheError("conv_backward: no forward cache");
    const std::size_t rows = static_cast<std::size_t>(conv.in_channels) * k * k;
    const std::size_t ncols = static_cast<std::size_t>(oh) * ow;
    ConstMapMat dout(d_out.data.data(), conv.out_channels, static_cast<Eigen::Index>(ncols));
    ConstMapMat cols(cache.cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ncols));

    if (grad != nullptr) {
        MapMat gw(grad->weight.data(), conv.out_channels, static_cast<Eigen::Index>(rows));
        gw.noalias() += dout * cols.transpose();
        for (int c = 0; c < conv.out_channels; ++c) grad->bias[static_cast<std::size_t>(c)] += dout.row(c).sum();
    }
    if (!want_input_grad) return {};

    RowMat dcols(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ncols));
    ConstMapMat w(conv.weight.data(), conv.out_channels, static_cast<Eigen::Index>(rows));
    dcols.noalias() = w.transpose() * dout;

    Image d_in(conv.in_channels, cache.in_height, cache.in_width);
    for (int c = 0; c < conv.in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = dcols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ncols;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * conv.stride + ky - conv.pad;
                    if (iy < 0 || iy >= cache.in_height) continue;
                    double* dst = d_in.data.data() + d_in.index(c, iy, 0);
                    const double* src = row + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * conv.stride + kx - conv.pad;
                        if (ix >= 0 && ix < cache.in_width) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
    return d_in;
}

void leaky_relu_inplace(Image& x, double slope) {
    for (auto& v : x.data)
        if (v < 0) v *= slope;
}

void leaky_relu_backward_inplace(Image& d_out, const Image& pre, double slope) {
    require_same_shape(d_out, pre, "leaky_relu_backward");
    for (std::size_t i = 0; i < d_out.data.size(); ++i)
        if (pre.data[i] < 0) d_out.data[i] *= slope;
}

}  // namespace taco::nn
