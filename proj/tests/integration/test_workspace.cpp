// Properties that need fully trained models; runs against the workspace the
// acceptance binary builds.

#include <filesystem>

#include "doctest.h"
#include "taco/detector.hpp"
#include "taco/eval.hpp"
#include "taco/scene.hpp"
#include "taco/workflow.hpp"

using namespace taco;

namespace {

const workflow::Workspace& workspace() {
    static const workflow::Workspace ws{TACO_ACCEPTANCE_WS};
    return ws;
}

struct Trained {
    scene::Dataset ds;
    detector::DetectorModel det;
};

const Trained& trained() {
    static const Trained t{scene::read_dataset(workspace().dataset()), detector::load_detector(workspace().detector())};
    return t;
}

std::vector<const scene::SceneSample*> spread(const std::vector<const scene::SceneSample*>& all, int n) {
    std::vector<const scene::SceneSample*> out;
    for (int i = 0; i < n; ++i) out.push_back(all[all.size() * static_cast<std::size_t>(i) / static_cast<std::size_t>(n)]);
    return out;
}

}  // namespace

TEST_CASE("saliency of the trained detector concentrates on the truck") {
    REQUIRE_MESSAGE(std::filesystem::exists(workspace().detector()), "run the acceptance test first");
    const auto& t = trained();
    for (const auto* s : spread(t.ds.split(false), 8)) {
        const Image img = scene::retexture(*s, t.ds.base);
        const auto sal = eval::ablation_saliency(img, s->gt, t.det);
        INFO("sample " << s->id << " inside mass " << sal.inside_mass);
        CHECK(sal.inside_mass >= 0.5);

        // normalization does not move the strongest block
        const auto bmax = std::max_element(sal.blocks.data.begin(), sal.blocks.data.end()) - sal.blocks.data.begin();
        const int g = sal.blocks.width;
        const int by = static_cast<int>(bmax) / g, bx = static_cast<int>(bmax) % g;
        const int cy = (2 * by + 1) * img.height / (2 * g), cx = (2 * bx + 1) * img.width / (2 * g);
        CHECK(sal.heat.at(0, cy, cx) == 1.0);
    }
}

TEST_CASE("trained detector finds the truck on most base-texture test views") {
    REQUIRE(std::filesystem::exists(workspace().detector()));
    const auto& t = trained();
    const auto held = t.ds.split(false);
    const auto entries = eval::run_detector(held, t.ds.base, t.det);
    const auto gts = eval::ground_truth(held);
    CHECK(eval::adr(entries, gts, 0.25) >= 0.8);
}
