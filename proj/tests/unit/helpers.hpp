#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "taco/image.hpp"
#include "taco/rng.hpp"
#include "taco/scene.hpp"

namespace testutil {

inline taco::Image random_image(int c, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    taco::Rng rng = taco::make_rng(seed, {0xfeed});
    taco::Image img(c, h, w);
    for (auto& v : img.data) v = taco::uniform(rng, lo, hi);
    return img;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f at x[i].
inline double central_diff(const std::function<double()>& f, double& x, double h) {
    const double keep = x;
    x = keep + h;
    const double up = f();
    x = keep - h;
    const double down = f();
    x = keep;
    return (up - down) / (2 * h);
}

/// Small dataset shared by tests that need rendered views.
inline const taco::scene::Dataset& tiny_dataset() {
    static const taco::scene::Dataset ds = [] {
        taco::scene::DatasetConfig cfg;
        cfg.positions = 3;
        cfg.views = 6;
        cfg.image_size = 64;
        cfg.texture_size = 16;
        cfg.procedural_textures = 6;
        cfg.seed = 21;
        return taco::scene::generate_dataset(cfg);
    }();
    return ds;
}

}  // namespace testutil
