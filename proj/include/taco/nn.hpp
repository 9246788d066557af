#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "taco/image.hpp"
#include "taco/rng.hpp"

// Minimal convolution layer with hand-written backward pass. Forward and
// backward lower to dense matrix products over an im2col buffer.
namespace taco::nn {

struct Conv2d {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    std::vector<double> weight;  // [out][in][ky][kx]
    std::vector<double> bias;    // [out]

    Conv2d() = default;
    Conv2d(int in, int out, int k, int s, int p);

    [[nodiscard]] int out_size(int in_size) const { return (in_size + 2 * pad - kernel) / stride + 1; }
    [[nodiscard]] std::size_t param_count() const { return weight.size() + bias.size(); }

    /// He-style init for a leaky-ReLU network.
    void init_he(Rng& rng, double slope);
    void zero();
};

struct ConvCache {
    int in_height = 0;
    int in_width = 0;
    int out_height = 0;
    int out_width = 0;
    std::vector<double> cols;  // [in*k*k][out_h*out_w]
};

Image conv_forward(const Conv2d& conv, const Image& input, ConvCache& cache);

/// Back-propagates d_out. Accumulates parameter gradients into `grad` when it
/// is non-null; returns the input gradient when `want_input_grad` is set
/// (otherwise an empty image).
Image conv_backward(const Conv2d& conv, const ConvCache& cache, const Image& d_out, Conv2d* grad,
                    bool want_input_grad);

void leaky_relu_inplace(Image& x, double slope);
/// d_out *= f'(pre), with f the leaky ReLU.
void leaky_relu_backward_inplace(Image& d_out, const Image& pre, double slope);

inline double sigmoid(double z) {
    if (z >= 0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double softplus(double z) { return z > 30 ? z : std::log1p(std::exp(z)); }

}  // namespace taco::nn
