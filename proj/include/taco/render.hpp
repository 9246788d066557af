#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "taco/nn.hpp"
#include "taco/render_map.hpp"
#include "taco/scene.hpp"
#include "taco/train_state.hpp"

namespace taco::render {

/// Photorealism enhancer. Two 3x3 convolutions over the stacked
/// [X_raw (3), X_gray (3), normalized depth (1)] input; the second layer
/// emits one gain channel (through softplus) and three offset channels:
///   X_enh = softplus(z_g) * X_raw + z_b
struct EnhancerModel {
    static constexpr int kInputChannels = 7;
    static constexpr int kOutputChannels = 4;

    int hidden = 8;
    double slope = 0.1;
    nn::Conv2d conv1;
    nn::Conv2d conv2;

    EnhancerModel() = default;
    EnhancerModel(int hidden_width, double leaky_slope, std::uint64_t seed);

    [[nodiscard]] std::size_t param_count() const;
    [[nodiscard]] EnhancerModel zeros_like() const;
    std::vector<std::span<double>> parameters();

    /// Makes the model output exactly g = 1, b = 0.
    void set_identity();
};

struct EnhancerCache {
    PixelRect roi;
    Image input;  // cropped stacked input
    nn::ConvCache c1, c2;
    Image pre1;   // conv1 pre-activation
    Image out2;   // conv2 output (gain logit + offsets)
    bool valid = false;
};

/// Bounding window of the non-zero pixels of `mask`, grown by `margin` and
/// clipped to the image. Empty mask gives an empty rect.
PixelRect mask_window(const Image& mask, int margin);

/// Depth scaled to [0,1] by its per-image maximum (0 stays 0).
Image normalize_depth(const Image& depth);

/// X_enh = N(X_raw, X_gray, X_d). Only pixels inside `roi` are computed
/// (others are zero); the result inside roi shrunk by 2 pixels is exact.
/// An empty roi means the whole image.
Image enhance(const Image& raw, const Image& gray, const Image& depth, const EnhancerModel& model,
              EnhancerCache* cache = nullptr, PixelRect roi = {});

/// Gradient with respect to X_raw (full image size). Parameter gradients are
/// accumulated into `param_grad` when given.
Image enhance_backward(const EnhancerCache& cache, const EnhancerModel& model, const Image& d_enh,
                       EnhancerModel* param_grad = nullptr);

/// X_adv = X_enh * M + X_ref * (1 - M). M must be binary.
Image composite(const Image& enh, const Image& ref, const Image& mask);

struct L1Loss {
    double value = 0.0;
    Image grad;  // d value / d X_adv
};

/// Mean absolute difference and its (sub)gradient sign/count.
L1Loss render_loss(const Image& adv, const Image& ref);

/// Everything the backward pass needs from one forward pass.
struct RenderForward {
    Image raw;
    Image enh;
    Image adv;
    EnhancerCache enhancer;
    bool valid = false;
};

/// render_raw -> enhance -> composite with the sample's body mask.
RenderForward render_forward(const scene::SceneSample& sample, const TextureMap& texture, const EnhancerModel& model);

/// Chain rule from dL/dX_adv back to dL/dT.
Image render_backward(const Image& d_adv, const scene::SceneSample& sample, const RenderForward& forward,
                      const EnhancerModel& model);

struct EnhancerTrainConfig {
    int epochs = 4;
    int batch = 4;
    double lr = 0.01;
    std::uint64_t seed = 1;
    int hidden = 8;
    double slope = 0.1;
    int threads = 1;
    EpochHook on_epoch;                  // called after every epoch
    const TrainCheckpoint* resume = nullptr;
};

struct EnhancerTrainResult {
    EnhancerModel model;
    std::vector<double> history;  // mean training L1 per epoch
    double heldout_l1 = 0.0;      // mean render loss on held-out samples
};

/// Trains the enhancer on (sample, texture) pairs: the sample's X_ref was
/// rendered with textures[sample.texture_id].
EnhancerTrainResult train_enhancer(std::span<const scene::SceneSample* const> train,
                                   std::span<const scene::SceneSample* const> heldout,
                                   std::span<const TextureMap> textures, const EnhancerTrainConfig& cfg);

/// Mean render L1 over samples.
double mean_render_loss(std::span<const scene::SceneSample* const> samples, std::span<const TextureMap> textures,
                        const EnhancerModel& model);

void save_enhancer(const std::filesystem::path& path, const EnhancerModel& model, const nlohmann::json& meta = {});
EnhancerModel load_enhancer(const std::filesystem::path& path);

}  // namespace taco::render
