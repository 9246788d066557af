#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "taco/eval.hpp"
#include "taco/losses.hpp"
#include "taco/rng.hpp"

namespace testutil {

/// Area of the intersection of two integer-corner boxes by counting unit cells.
inline double counted_overlap(int ax0, int ay0, int ax1, int ay1, int bx0, int by0, int bx1, int by1) {
    long n = 0;
    for (int y = std::min(ay0, by0); y < std::max(ay1, by1); ++y)
        for (int x = std::min(ax0, bx0); x < std::max(ax1, bx1); ++x)
            if (x >= ax0 && x < ax1 && y >= ay0 && y < ay1 && x >= bx0 && x < bx1 && y >= by0 && y < by1) ++n;
    return static_cast<double>(n);
}

/// Interpolated AP from threshold sweeps: at each confidence level count the
/// gts that have an eligible entry at or above it and the entries that are
/// not ignored, then average the best precision reachable for each recall step.
inline double oracle_ap(const std::vector<taco::eval::DumpEntry>& es, const std::vector<taco::eval::GroundTruth>& gts,
                        double thr, const std::vector<int>& classes) {
    using taco::eval::DumpEntry;
    using taco::eval::GroundTruth;
    auto gt_of = [&](int id) -> const GroundTruth* {
        for (const auto& g : gts)
            if (g.image_id == id) return &g;
        return nullptr;
    };
    auto on_gt = [&](const DumpEntry& e) {
        const auto* g = gt_of(e.image_id);
        return g != nullptr && taco::losses::iou(e.box, g->box) >= thr;
    };
    auto ignored = [&](const DumpEntry& e) {
        const auto* g = gt_of(e.image_id);
        if (g == nullptr || on_gt(e)) return false;
        for (const auto& b : g->ignore)
            if (taco::losses::iou(e.box, b) >= thr) return true;
        return false;
    };
    std::vector<std::pair<long, double>> points;  // (tp, precision) per level
    for (const auto& level : es) {
        const double t = level.confidence;
        long counted = 0;
        for (const auto& e : es)
            if (e.confidence >= t && !ignored(e)) ++counted;
        long tp = 0;
        for (const auto& g : gts)
            for (const auto& e : es)
                if (e.image_id == g.image_id && e.confidence >= t && on_gt(e) &&
                    std::find(classes.begin(), classes.end(), e.cls) != classes.end()) {
                    ++tp;
                    break;
                }
        if (counted > 0) points.emplace_back(tp, static_cast<double>(tp) / static_cast<double>(counted));
    }
    long max_tp = 0;
    for (const auto& p : points) max_tp = std::max(max_tp, p.first);
    double ap = 0;
    for (long k = 1; k <= max_tp; ++k) {
        double best = 0;
        for (const auto& p : points)
            if (p.first >= k) best = std::max(best, p.second);
        ap += best;
    }
    return ap / static_cast<double>(gts.size());
}

struct ApInstance {
    std::vector<taco::eval::GroundTruth> gts;
    std::vector<taco::eval::DumpEntry> entries;
};

/// 1-4 images, up to `max_entries` detections with distinct confidences placed
/// near the gt, near an ignore box or at random.
inline ApInstance random_ap_instance(taco::Rng& rng, int max_entries) {
    using namespace taco;
    ApInstance t;
    const int images = uniform_int(rng, 1, 4);
    for (int i = 0; i < images; ++i) {
        eval::GroundTruth g{i, Box{uniform(rng, 20, 40), uniform(rng, 20, 40), uniform(rng, 10, 20), uniform(rng, 10, 20)}, {}};
        if (uniform01(rng) < 0.6) g.ignore.push_back(Box{g.box.cx + 40, g.box.cy, 12, 12});
        t.gts.push_back(g);
    }
    const int n = uniform_int(rng, 0, max_entries);
    std::vector<double> confs;
    for (int i = 0; i < n; ++i) confs.push_back((i + 1) / static_cast<double>(n + 1));
    std::shuffle(confs.begin(), confs.end(), rng);
    for (int i = 0; i < n; ++i) {
        eval::DumpEntry e;
        e.image_id = uniform_int(rng, 0, images - 1);
        e.cls = uniform_int(rng, 0, 2);
        const auto& g = t.gts[static_cast<std::size_t>(e.image_id)];
        const int where = uniform_int(rng, 0, 2);
        const Box anchor = where == 1 && !g.ignore.empty() ? g.ignore[0] : g.box;
        const double jitter = where == 2 ? 15.0 : 2.0;
        e.box = Box{anchor.cx + uniform(rng, -jitter, jitter), anchor.cy + uniform(rng, -jitter, jitter),
                    anchor.w * uniform(rng, 0.8, 1.2), anchor.h * uniform(rng, 0.8, 1.2)};
        e.confidence = confs[static_cast<std::size_t>(i)];
        t.entries.push_back(e);
    }
    return t;
}

}  // namespace testutil
