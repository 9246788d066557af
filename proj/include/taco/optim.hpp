#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "taco/adam.hpp"
#include "taco/detector.hpp"
#include "taco/losses.hpp"
#include "taco/render.hpp"
#include "taco/scene.hpp"

namespace taco::optim {

enum class InitStrategy { zeros, ones, random, base };
enum class ClampMode { feasible, verbatim };
enum class LossScheme { cls_iou, cls, iou };
enum class UpdateRule { adam, sgd };
enum class DatasetChoice { train, test };

std::string to_string(InitStrategy s);
std::string to_string(ClampMode m);
std::string to_string(LossScheme s);
std::string to_string(UpdateRule u);
std::string to_string(DatasetChoice d);
InitStrategy init_strategy_from_string(const std::string& s);
ClampMode clamp_mode_from_string(const std::string& s);
LossScheme loss_scheme_from_string(const std::string& s);
UpdateRule update_rule_from_string(const std::string& s);
DatasetChoice dataset_choice_from_string(const std::string& s);

/// zeros / ones / uniform(0,1) / copy of `base`.
render::TextureMap init_texture(InitStrategy strategy, int size, std::uint64_t seed,
                                const render::TextureMap* base = nullptr);

/// feasible: clamp to [(T-1)/eta, T/eta] so that T - eta * g stays in [0,1].
/// verbatim: clamp to [-T, 1-T].
Image grad_clamp(const Image& grad, const Image& T, double eta, ClampMode mode);

struct OptimizerState {
    AdamConfig adam;
    UpdateRule rule = UpdateRule::adam;
    Image m;
    Image v;
    long t = 0;
};

struct StepStats {
    long out_of_range = 0;  // texels outside [0,1] before the value clamp
};

/// Clamps the raw gradient, applies the update, then clamps T to [0,1].
/// Throws NumericError on a non-finite gradient.
StepStats step(Image& T, const Image& grad, OptimizerState& state, ClampMode mode);

struct RunConfig {
    InitStrategy init = InitStrategy::zeros;
    int epochs = 6;
    int batch = 6;
    std::uint64_t seed = 11;
    losses::LossConfig loss;
    LossScheme scheme = LossScheme::cls_iou;
    ClampMode clamp = ClampMode::feasible;
    UpdateRule rule = UpdateRule::adam;
    AdamConfig adam{0.02, 0.9, 0.999, 1e-8};
    DatasetChoice dataset = DatasetChoice::train;
    double conf_floor = 0.05;
    int snapshot_every = 50;  // steps; 0 disables intermediate snapshots
    bool deterministic = true;
    int threads = 1;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Attack loss of one view and its gradient with respect to the texture.
struct SampleAttack {
    double l_cls = 0.0;
    double l_iou = 0.0;
    double l_atk = 0.0;
    std::vector<int> omega_iop;
    std::vector<int> omega_iou;
    Image grad;
};

SampleAttack attack_sample(const scene::SceneSample& sample, const render::TextureMap& texture,
                           const detector::DetectorModel& det, const render::EnhancerModel& enh,
                           const losses::LossConfig& loss, LossScheme scheme, double conf_floor);

struct Snapshot {
    long step = 0;
    render::TextureMap texture;
};

struct OptimizeResult {
    render::TextureMap texture;
    std::vector<losses::LossReport> reports;  // per step, gradients dropped
    std::vector<std::string> csv;             // header + one row per step
    std::vector<Snapshot> snapshots;
    std::vector<double> epoch_loss;           // mean L_total per epoch
    long out_of_range = 0;                    // pre-clamp range violations, summed
    long range_violations = 0;                // violations in stored snapshots
};

/// Optional per-step hook, e.g. for progress output.
using StepHook = std::function<void(long step, const losses::LossReport&)>;

OptimizeResult optimize_texture(std::span<const scene::SceneSample* const> samples,
                                const detector::DetectorModel& det, const render::EnhancerModel& enh,
                                const RunConfig& cfg, const render::TextureMap* base = nullptr,
                                const StepHook& hook = {});

}  // namespace taco::optim
