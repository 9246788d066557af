#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "taco/detector.hpp"
#include "taco/eval.hpp"
#include "taco/optim.hpp"
#include "taco/render.hpp"
#include "taco/scene.hpp"

namespace taco::workflow {

std::string tool_version();

struct ExperimentConfig {
    std::vector<double> gammas{0.01, 0.1, 1.0, 10.0, 100.0};
    std::vector<optim::InitStrategy> inits{optim::InitStrategy::zeros, optim::InitStrategy::ones,
                                           optim::InitStrategy::random, optim::InitStrategy::base};
    std::vector<optim::LossScheme> schemes{optim::LossScheme::cls, optim::LossScheme::iou, optim::LossScheme::cls_iou};
    int saliency_images = 4;
    int saliency_granularity = 8;
};

/// Everything a run needs, one JSON document with sections
/// dataset / enhancer / detector / optimize / evaluate.
struct ToolConfig {
    scene::DatasetConfig dataset;
    render::EnhancerTrainConfig enhancer;
    detector::DetectorTrainConfig detector;
    optim::RunConfig optimize;
    eval::EvalSettings eval;
    ExperimentConfig experiments;
};

/// Parses config text. Syntax errors and bad keys raise ConfigError whose
/// message names the line.
ToolConfig parse_config(const std::string& text, const std::string& source = "config");
ToolConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ToolConfig& cfg);

/// Directory layout of a workspace.
struct Workspace {
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path dataset() const { return root / "dataset"; }
    [[nodiscard]] std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    [[nodiscard]] std::filesystem::path runs() const { return root / "runs"; }
    [[nodiscard]] std::filesystem::path reports() const { return root / "reports"; }
    [[nodiscard]] std::filesystem::path enhancer() const { return checkpoints() / "enhancer.tbdl"; }
    [[nodiscard]] std::filesystem::path detector() const { return checkpoints() / "detector.tbdl"; }
    [[nodiscard]] std::filesystem::path run(const std::string& name) const { return runs() / name; }
    [[nodiscard]] std::filesystem::path manifest() const { return root / "workspace.json"; }
};

/// Rebuilds workspace.json from the per-stage records that exist; every
/// referenced file is checked to exist.
nlohmann::json refresh_manifest(const Workspace& ws);

using Log = std::function<void(const std::string&)>;

void gen_dataset(const Workspace& ws, const ToolConfig& cfg, const Log& log = {});

render::EnhancerTrainResult train_enhancer(const Workspace& ws, const ToolConfig& cfg, bool resume,
                                           const Log& log = {});

struct DetectorReport {
    detector::DetectorTrainResult train;
    double heldout_ap = 0.0;  // base texture, test split
};
DetectorReport train_detector(const Workspace& ws, const ToolConfig& cfg, bool resume, const Log& log = {});

/// Runs one optimization on the loaded workspace and writes
/// runs/<name>/{texture.tnsr, texture.ppm, log.csv, run.json, snapshots/, snapshot_grid.ppm}.
optim::OptimizeResult optimize(const Workspace& ws, const ToolConfig& cfg, const std::string& name,
                               const Log& log = {});

struct EvaluateOptions {
    std::vector<std::pair<std::string, std::filesystem::path>> textures;  // extra name -> TNSR path
    bool gamma_sweep = false;
    bool init_study = false;
    bool loss_ablation = false;
    bool saliency = false;
    std::optional<std::filesystem::path> external_dump;
};

struct SweepRow {
    std::string label;
    double value = 0.0;      // gamma, when applicable
    double ap = 0.0;
    double adr = 0.0;
    double smooth = 0.0;     // smoothness of the final texture
    double max_range = 0.0;  // largest per-channel max - min
};

struct EvaluateReport {
    std::vector<eval::TextureRow> textures;
    std::vector<SweepRow> gamma;
    std::vector<SweepRow> init;
    std::vector<SweepRow> ablation;
    std::optional<eval::TextureRow> external;
};

EvaluateReport evaluate(const Workspace& ws, const ToolConfig& cfg, const EvaluateOptions& opts, const Log& log = {});

/// Smoothness value and per-channel ranges used in sweep reports.
double texture_smoothness(const render::TextureMap& t, int k = 3);
double max_channel_range(const render::TextureMap& t);

}  // namespace taco::workflow
