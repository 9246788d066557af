#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "taco/adam.hpp"

namespace taco {

/// Epoch-boundary training state: parameter blocks, optimizer moments and
/// loss history. Values are rounded to f32 when captured so that a resumed
/// run continues exactly like an uninterrupted one.
struct TrainCheckpoint {
    int next_epoch = 0;
    long step = 0;
    std::vector<std::vector<double>> params;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::vector<double> history;
};

using EpochHook = std::function<void(const TrainCheckpoint&)>;

/// Rounds the parameters and moments in place to f32 and captures them.
TrainCheckpoint capture_checkpoint(int next_epoch, std::span<const std::span<double>> params, optim::Adam& adam,
                                   const std::vector<double>& history);

/// Copies a checkpoint back into the parameter blocks and optimizer.
void restore_checkpoint(const TrainCheckpoint& ckpt, std::span<const std::span<double>> params, optim::Adam& adam);

void save_train_checkpoint(const std::filesystem::path& path, const std::string& kind, const TrainCheckpoint& ckpt,
                           const nlohmann::json& meta = {});
TrainCheckpoint load_train_checkpoint(const std::filesystem::path& path, const std::string& kind,
                                      nlohmann::json* meta = nullptr);

}  // namespace taco
