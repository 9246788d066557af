#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "taco/nn.hpp"
#include "taco/render_map.hpp"
#include "taco/scene.hpp"
#include "taco/train_state.hpp"

namespace taco::detector {

constexpr int kTruck = 0;
constexpr int kCarLike = 1;
constexpr int kBoxLike = 2;

struct DetectorConfig {
    int image_size = 128;
    int classes = 3;
    std::array<int, 4> channels{12, 24, 32, 48};
    int head_hidden = 48;
    double slope = 0.1;
    /// Width (in cells) of the window a cell's decoded center can reach.
    double center_span_cells = 4.0;

    [[nodiscard]] int grid() const { return image_size / 16; }
    [[nodiscard]] double stride() const { return 16.0; }
    [[nodiscard]] int outputs() const { return classes + 4; }
};

/// Four stride-2 3x3 stages down to a grid x grid map, then a per-cell head
/// (3x3 context conv + leaky ReLU + 1x1 projection) producing `classes`
/// logits and four box parameters (tx, ty, tw, th) per cell.
struct DetectorModel {
    DetectorConfig cfg;
    std::array<nn::Conv2d, 4> stages;
    nn::Conv2d head_hidden;
    nn::Conv2d head_out;

    DetectorModel() = default;
    DetectorModel(const DetectorConfig& config, std::uint64_t seed);

    [[nodiscard]] std::size_t param_count() const;
    [[nodiscard]] DetectorModel zeros_like() const;
    std::vector<std::span<double>> parameters();
};

/// Forward activations kept for backward passes and saliency.
struct DetectorCache {
    std::array<nn::ConvCache, 6> convs;
    std::array<Image, 5> pre;        // pre-activations of the 4 stages and the head hidden layer
    std::array<Image, 5> activated;  // their leaky-ReLU outputs
    Image raw;                       // head output, outputs() x grid x grid
    bool valid = false;
};

struct Detection {
    Box box;                  // center format, pixels
    std::vector<double> conf; // per-class logistic confidences in (0,1)
    int cell = 0;             // gy * grid + gx

    [[nodiscard]] int best_class() const;
    [[nodiscard]] double max_conf() const;
};

/// Upstream gradient on one decoded detection.
struct DetectionGrad {
    int cell = 0;
    std::vector<double> d_conf;        // per class
    std::array<double, 4> d_box{};     // d/d(cx, cy, w, h)
};

Image forward(const DetectorModel& model, const Image& image, DetectorCache* cache = nullptr);

/// Decodes every grid cell; keeps those whose best confidence >= conf_floor.
/// center = cell center + (sigmoid(t) - 1/2) * span, size = stride * exp(t).
std::vector<Detection> decode(const Image& raw, const DetectorConfig& cfg, double conf_floor);

/// Inverse of the box decoding for one cell: returns (tx, ty, tw, th).
std::array<double, 4> encode_box(const Box& box, int cell, const DetectorConfig& cfg);

std::vector<Detection> detect(const Image& image, const DetectorModel& model, double conf_floor,
                              DetectorCache* cache = nullptr);

/// Greedy per-class suppression by descending confidence; ties go to the
/// lower cell index.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

/// d(raw head output) from upstream gradients on decoded detections.
Image raw_gradient(const Image& raw, const DetectorConfig& cfg, std::span<const DetectionGrad> upstream);

/// Back-propagates a head-output gradient; accumulates parameter gradients
/// into `param_grad` when given and returns the input-image gradient when
/// `want_input_grad` is set.
Image backward(const DetectorModel& model, const DetectorCache& cache, const Image& d_raw, DetectorModel* param_grad,
               bool want_input_grad = true);

/// Exact gradient of the upstream objective with respect to the input image.
Image input_gradient(const DetectorModel& model, const DetectorCache& cache, std::span<const DetectionGrad> upstream);

/// Re-runs stage 4 and the head from a (possibly edited) stage-3 activation.
Image forward_from_stage3(const DetectorModel& model, const Image& stage3_activation);

struct Target {
    Box box;
    int cls = kTruck;
};

/// Detection targets of a scene sample: the truck box plus distractor boxes.
std::vector<Target> sample_targets(const scene::SceneSample& sample);

struct TrainLoss {
    double value = 0.0;
    double cls = 0.0;
    double box = 0.0;
    Image d_raw;
};

/// Per-cell BCE on class targets (a cell is positive for a class when its
/// center lies inside a box of that class) plus squared error on the box
/// parameters of positive cells.
TrainLoss training_loss(const Image& raw, const DetectorConfig& cfg, std::span<const Target> targets,
                        double box_weight = 1.0);

struct DetectorTrainConfig {
    int epochs = 40;
    int batch = 8;
    double lr = 0.003;
    double box_weight = 1.0;
    std::uint64_t seed = 3;
    int threads = 1;
    int max_shift = 16;    // random translation in pixels
    double jitter = 0.15;  // brightness gain/offset range
    DetectorConfig model;
    EpochHook on_epoch;                  // called after every epoch
    const TrainCheckpoint* resume = nullptr;
};

struct DetectorTrainResult {
    DetectorModel model;
    std::vector<double> history;  // mean training loss per epoch
};

/// Trains on the given samples, cycling each through the supplied textures.
DetectorTrainResult train_detector(std::span<const scene::SceneSample* const> train,
                                   std::span<const render::TextureMap> textures, const DetectorTrainConfig& cfg);

/// Overfits a single image; returns the loss history.
std::vector<double> overfit_single(const Image& image, std::span<const Target> targets, const DetectorTrainConfig& cfg,
                                   int steps);

void save_detector(const std::filesystem::path& path, const DetectorModel& model, const nlohmann::json& meta = {});
DetectorModel load_detector(const std::filesystem::path& path);

}  // namespace taco::detector
