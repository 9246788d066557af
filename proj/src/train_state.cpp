#include "taco/train_state.hpp"

#include "taco/io.hpp"

namespace taco {

namespace {

void round_f32(std::span<double> v) {
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace

TrainCheckpoint capture_checkpoint(int next_epoch, std::span<const std::span<double>> params, optim::Adam& adam,
                                   const std::vector<double>& history) {
    TrainCheckpoint c;
    c.next_epoch = next_epoch;
    c.step = adam.step_count();
    for (const auto& p : params) {
        round_f32(p);
        c.params.emplace_back(p.begin(), p.end());
    }
    for (auto& m : adam.first_moments()) round_f32(m);
    for (auto& v : adam.second_moments()) round_f32(v);
    c.m = adam.first_moments();
    c.v = adam.second_moments();
    c.history = history;
    return c;
}

void restore_checkpoint(const TrainCheckpoint& ckpt, std::span<const std::span<double>> params, optim::Adam& adam) {
    if (ckpt.params.size() != params.size()) throw FormatError("checkpoint parameter layout mismatch");
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (ckpt.params[b].size() != params[b].size()) throw FormatError("checkpoint parameter block size mismatch");
        std::copy(ckpt.params[b].begin(), ckpt.params[b].end(), params[b].begin());
    }
    adam.first_moments() = ckpt.m;
    adam.second_moments() = ckpt.v;
    adam.set_step_count(ckpt.step);
}

void save_train_checkpoint(const std::filesystem::path& path, const std::string& kind, const TrainCheckpoint& ckpt,
                           const nlohmann::json& meta) {
    std::vector<io::NamedTensor> tensors;
    auto add = [&](const std::string& prefix, const std::vector<std::vector<double>>& blocks) {
        for (std::size_t b = 0; b < blocks.size(); ++b)
            tensors.push_back({prefix + std::to_string(b), {{static_cast<std::uint32_t>(blocks[b].size())}, blocks[b]}});
    };
    add("param.", ckpt.params);
    add("m.", ckpt.m);
    add("v.", ckpt.v);
    nlohmann::json m = meta.is_object() ? meta : nlohmann::json::object();
    m["next_epoch"] = ckpt.next_epoch;
    m["step"] = ckpt.step;
    m["blocks"] = ckpt.params.size();
    m["moment_blocks"] = ckpt.m.size();
    m["history"] = ckpt.history;  // JSON keeps full double precision
    io::write_bundle(path, kind, m, tensors);
}

TrainCheckpoint load_train_checkpoint(const std::filesystem::path& path, const std::string& kind, nlohmann::json* meta) {
    const io::Bundle b = io::read_bundle(path);
    if (b.kind != kind) throw FormatError("expected a '" + kind + "' checkpoint in " + path.string());
    TrainCheckpoint c;
    c.next_epoch = b.meta.at("next_epoch");
    c.step = b.meta.at("step");
    const std::size_t blocks = b.meta.at("blocks");
    const std::size_t moment_blocks = b.meta.at("moment_blocks");
    for (std::size_t i = 0; i < blocks; ++i) c.params.push_back(b.get("param." + std::to_string(i)).values);
    for (std::size_t i = 0; i < moment_blocks; ++i) {
        c.m.push_back(b.get("m." + std::to_string(i)).values);
        c.v.push_back(b.get("v." + std::to_string(i)).values);
    }
    c.history = b.meta.at("history").get<std::vector<double>>();
    if (meta) *meta = b.meta;
    return c;
}

}  // namespace taco
