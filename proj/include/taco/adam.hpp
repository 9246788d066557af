#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "taco/image.hpp"

namespace taco::optim {

struct AdamConfig {
    double lr = 0.006;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer over a list of parameter blocks.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    [[nodiscard]] const AdamConfig& config() const { return cfg_; }
    [[nodiscard]] long step_count() const { return t_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    /// One update: params[b][i] -= lr * mhat / (sqrt(vhat) + eps).
    /// Throws NumericError on a non-finite gradient.
    void step(std::span<const std::span<double>> params, std::span<const std::span<double>> grads) {
        if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient block count mismatch");
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw ShapeError("adam: parameter layout changed");
        for (const auto& g : grads)
            for (double x : g)
                if (!std::isfinite(x)) throw NumericError("adam: non-finite gradient");
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t b = 0; b < params.size(); ++b) {
            if (params[b].size() != grads[b].size() || params[b].size() != m_[b].size())
                throw ShapeError("adam: block size mismatch");
            auto& m = m_[b];
            auto& v = v_[b];
            for (std::size_t i = 0; i < params[b].size(); ++i) {
                const double g = grads[b][i];
                m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
                params[b][i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
            }
        }
    }

    /// Moment buffers, exposed for checkpointing.
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    void set_step_count(long t) { t_ = t; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace taco::optim
