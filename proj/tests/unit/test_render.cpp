#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "taco/render.hpp"

using namespace taco;
using namespace taco::render;
using testutil::rel_err;

namespace {

double dot(const Image& a, const Image& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

// Mean |X_enh - X_raw * gray / (127/255)| over body pixels.
double shading_oracle_gap(std::span<const scene::SceneSample* const> samples, std::span<const TextureMap> textures,
                          const EnhancerModel& model) {
    double sum = 0;
    long n = 0;
    for (const auto* s : samples) {
        const auto f = render_forward(*s, textures[static_cast<std::size_t>(s->texture_id)], model);
        const std::size_t plane = s->ref.plane_size();
        for (std::size_t p = 0; p < plane; ++p) {
            if (s->body_mask.data[p] != 1.0) continue;
            for (int c = 0; c < 3; ++c) {
                const std::size_t i = c * plane + p;
                sum += std::abs(f.enh.data[i] - f.raw.data[i] * s->gray.data[i] / scene::kGrayLevel);
                ++n;
            }
        }
    }
    return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("render map identity and constant textures") {
    RenderMap m(2, 2, 2, 2);
    for (std::uint32_t p = 0; p < 4; ++p) m.push_pixel({{3 - p, 1.0}});
    CHECK_NOTHROW(m.validate());
    const TextureMap t(testutil::random_image(3, 2, 2, 1));
    const Image raw = render_raw(m, t);
    for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 4; ++p) CHECK(raw.data[c * 4 + p] == t.values.data[c * 4 + (3 - p)]);

    const auto& s = testutil::tiny_dataset().samples[2];
    const Image flat = render_raw(s.render_map, TextureMap(16, 16, 0.42));
    for (std::size_t p = 0; p < s.render_map.pixel_count(); ++p)
        if (s.render_map.covers(p))
            for (int c = 0; c < 3; ++c) REQUIRE(flat.data[c * s.render_map.pixel_count() + p] == doctest::Approx(0.42).epsilon(1e-12));

    RenderMap bad(1, 1, 2, 2);
    bad.push_pixel({{0, 0.5}, {1, 0.4}});
    CHECK_THROWS(bad.validate());
}

TEST_CASE("render transpose is the adjoint and matches finite differences") {
    const auto& s = testutil::tiny_dataset().samples[4];
    TextureMap t(testutil::random_image(3, 16, 16, 2));
    const Image w = testutil::random_image(3, 64, 64, 3, -1, 1);
    const Image back = render_raw_transpose(s.render_map, w);
    CHECK(dot(render_raw(s.render_map, t), w) == doctest::Approx(dot(t.values, back)).epsilon(1e-10));

    // d sum(X_raw) / dT = column sums of the operator
    const Image ones(3, 64, 64, 1.0);
    const Image colsum = render_raw_transpose(s.render_map, ones);
    Rng rng = make_rng(1, {4});
    for (int i = 0; i < 40; ++i) {
        const auto k = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(t.values.data.size()) - 1));
        auto f = [&] {
            const Image r = render_raw(s.render_map, t);
            double sum = 0;
            for (double v : r.data) sum += v;
            return sum;
        };
        const double fd = testutil::central_diff(f, t.values.data[k], 1e-5);
        CHECK(std::abs(colsum.data[k] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("composite selects per pixel") {
    const Image enh = testutil::random_image(3, 6, 6, 5), ref = testutil::random_image(3, 6, 6, 6);
    Image mask(1, 6, 6);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) mask.at(0, y, x) = (x + y) % 2;
    const Image out = composite(enh, ref, mask);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) CHECK(out.at(c, y, x) == ((x + y) % 2 ? enh.at(c, y, x) : ref.at(c, y, x)));
    CHECK(composite(enh, ref, Image(1, 6, 6, 1.0)).data == enh.data);
    CHECK(composite(enh, ref, Image(1, 6, 6, 0.0)).data == ref.data);
    Image half(1, 6, 6, 0.5);
    CHECK_THROWS(composite(enh, ref, half));
}

TEST_CASE("render loss values and gradient") {
    const Image a = testutil::random_image(3, 5, 5, 7);
    CHECK(render_loss(a, a).value == 0.0);
    Image b = a;
    for (auto& v : b.data) v += 0.1;
    CHECK(render_loss(b, a).value == doctest::Approx(0.1).epsilon(1e-12));
    Image c = testutil::random_image(3, 5, 5, 8);
    const auto l = render_loss(c, a);
    for (std::size_t i = 0; i < c.data.size(); i += 4) {
        const double fd = testutil::central_diff([&] { return render_loss(c, a).value; }, c.data[i], 1e-7);
        CHECK(std::abs(l.grad.data[i] - fd) <= 1e-4);
    }
}

TEST_CASE("identity enhancer reproduces the raw render") {
    const auto& s = testutil::tiny_dataset().samples[1];
    EnhancerModel m(8, 0.1, 3);
    m.set_identity();
    const Image raw = render_raw(s.render_map, TextureMap(testutil::random_image(3, 16, 16, 9)));
    const Image enh = enhance(raw, s.gray, s.depth, m);
    for (std::size_t i = 0; i < raw.data.size(); ++i) REQUIRE(enh.data[i] == doctest::Approx(raw.data[i]).epsilon(1e-12));
}

TEST_CASE("normalized depth") {
    Image d(1, 2, 2);
    d.data = {0, 4, 8, 2};
    const Image n = normalize_depth(d);
    CHECK(n.data == std::vector<double>{0, 0.5, 1, 0.25});
    CHECK(normalize_depth(Image(1, 2, 2)).data == std::vector<double>(4, 0.0));
}

TEST_CASE("enhancer input and parameter gradients match finite differences") {
    const auto& s = testutil::tiny_dataset().samples[3];
    const EnhancerModel m(6, 0.1, 4);
    Image raw = render_raw(s.render_map, TextureMap(testutil::random_image(3, 16, 16, 10)));
    const Image w = testutil::random_image(3, 64, 64, 11, -1, 1);
    const PixelRect roi = mask_window(s.body_mask, 2);
    EnhancerCache cache;
    const Image enh = enhance(raw, s.gray, s.depth, m, &cache, roi);
    // objective over the exact interior of the window
    auto objective = [&](const Image& e) {
        double sum = 0;
        for (int c = 0; c < 3; ++c)
            for (int y = roi.y0 + 2; y < roi.y1 - 2; ++y)
                for (int x = roi.x0 + 2; x < roi.x1 - 2; ++x) sum += w.at(c, y, x) * e.at(c, y, x);
        return sum;
    };
    Image d_enh(3, 64, 64);
    for (int c = 0; c < 3; ++c)
        for (int y = roi.y0 + 2; y < roi.y1 - 2; ++y)
            for (int x = roi.x0 + 2; x < roi.x1 - 2; ++x) d_enh.at(c, y, x) = w.at(c, y, x);
    EnhancerModel pgrad = m.zeros_like();
    const Image d_raw = enhance_backward(cache, m, d_enh, &pgrad);
    (void)enh;

    Rng rng = make_rng(2, {5});
    int checked = 0;
    for (int tries = 0; checked < 100 && tries < 10000; ++tries) {
        const int c = uniform_int(rng, 0, 2);
        const int y = uniform_int(rng, roi.y0 + 2, roi.y1 - 3), x = uniform_int(rng, roi.x0 + 2, roi.x1 - 3);
        double& v = raw.at(c, y, x);
        const double fd = testutil::central_diff([&] { return objective(enhance(raw, s.gray, s.depth, m, nullptr, roi)); }, v, 1e-6);
        CHECK(rel_err(d_raw.at(c, y, x), fd, 1e-4) <= 1e-3);
        ++checked;
    }
    CHECK(checked == 100);

    EnhancerModel mm = m;
    auto params = mm.parameters();
    auto grads = pgrad.parameters();
    for (std::size_t b = 0; b < params.size(); ++b)
        for (std::size_t i = 0; i < params[b].size(); i += 7) {
            const double fd = testutil::central_diff([&] { return objective(enhance(raw, s.gray, s.depth, mm, nullptr, roi)); },
                                                     params[b][i], 1e-6);
            CHECK(rel_err(grads[b][i], fd, 1e-4) <= 1e-3);
        }
}

TEST_CASE("texture gradient through the full render chain") {
    const auto& s = testutil::tiny_dataset().samples[5];
    const EnhancerModel m(6, 0.1, 5);
    TextureMap t(testutil::random_image(3, 16, 16, 12));
    const Image w = testutil::random_image(3, 64, 64, 13, -1, 1);
    auto objective = [&] { return dot(render_forward(s, t, m).adv, w); };
    const auto f = render_forward(s, t, m);
    const Image g = render_backward(w, s, f, m);

    CHECK(render_backward(Image(3, 64, 64), s, f, m).data == std::vector<double>(g.data.size(), 0.0));

    const Image referenced = render_raw_transpose(s.render_map, Image(3, 64, 64, 1.0));
    Rng rng = make_rng(3, {6});
    int checked = 0;
    for (int tries = 0; checked < 100 && tries < 100000; ++tries) {
        const auto k = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(t.values.data.size()) - 1));
        if (referenced.data[k] == 0.0) {
            REQUIRE(g.data[k] == 0.0);
            continue;
        }
        const double fd = testutil::central_diff(objective, t.values.data[k], 1e-6);
        CHECK(rel_err(g.data[k], fd, 1e-4) <= 1e-3);
        ++checked;
    }
    CHECK(checked == 100);

    RenderForward empty;
    CHECK_THROWS_AS(render_backward(w, s, empty, m), MissingCacheError);
}

TEST_CASE("enhancer learns unit shading as identity") {
    // flat lighting: ambient 1 makes every shading factor 1
    const auto mesh = scene::make_truck_mesh();
    scene::ShadingField flat;
    flat.ambient = 1.0;
    const auto textures = scene::make_procedural_textures(4, 16, 3);
    std::vector<scene::SceneSample> samples;
    Rng rng = make_rng(4, {7});
    for (int i = 0; i < 12; ++i) {
        scene::CameraPose cam;
        cam.image_size = 64;
        cam.target = scene::truck_center();
        cam.azimuth_deg = uniform(rng, 0, 360);
        cam.elevation_deg = uniform(rng, 10, 60);
        cam.distance = uniform(rng, 12, 18);
        auto s = scene::rasterize(mesh, cam, textures[static_cast<std::size_t>(i % 4)], flat, Image(3, 64, 64, 0.6));
        s.id = i;
        s.texture_id = i % 4;
        samples.push_back(std::move(s));
    }
    std::vector<const scene::SceneSample*> train, held;
    for (int i = 0; i < 12; ++i) (i < 9 ? train : held).push_back(&samples[static_cast<std::size_t>(i)]);
    EnhancerTrainConfig cfg;
    cfg.epochs = 6;
    const auto r = train_enhancer(train, held, textures, cfg);
    CHECK(r.heldout_l1 <= 0.01);
}

TEST_CASE("trained enhancer tracks the analytic shading oracle") {
    scene::DatasetConfig dc;
    dc.positions = 6;
    dc.views = 10;
    dc.image_size = 64;
    dc.texture_size = 16;
    dc.procedural_textures = 6;
    dc.seed = 21;
    const auto ds = scene::generate_dataset(dc);
    EnhancerTrainConfig cfg;
    cfg.epochs = 24;
    const auto r = train_enhancer(ds.split(true), ds.split(false), ds.textures, cfg);
    CHECK(r.heldout_l1 <= 0.05);
    CHECK(shading_oracle_gap(ds.split(false), ds.textures, r.model) <= 0.05);
}

TEST_CASE("enhancer training loss does not rise across epochs with default settings") {
    const auto& ds = testutil::tiny_dataset();
    const EnhancerTrainConfig cfg;
    const auto r = train_enhancer(ds.split(true), ds.split(false), ds.textures, cfg);
    REQUIRE(r.history.size() == static_cast<std::size_t>(cfg.epochs));
    for (std::size_t e = 1; e < r.history.size(); ++e) CHECK(r.history[e] <= 1.05 * r.history[e - 1]);
}

TEST_CASE("enhancer training resumes exactly and checkpoints round-trip") {
    const auto& ds = testutil::tiny_dataset();
    EnhancerTrainConfig cfg;
    cfg.epochs = 3;
    std::vector<TrainCheckpoint> ckpts;
    cfg.on_epoch = [&](const TrainCheckpoint& c) { ckpts.push_back(c); };
    const auto full = train_enhancer(ds.split(true), ds.split(false), ds.textures, cfg);
    REQUIRE(ckpts.size() == 3);

    const auto path = std::filesystem::temp_directory_path() / "taco_enh_state.tbdl";
    save_train_checkpoint(path, "enhancer-state", ckpts[1]);
    const TrainCheckpoint loaded = load_train_checkpoint(path, "enhancer-state");
    CHECK_THROWS_AS(load_train_checkpoint(path, "detector-state"), FormatError);
    EnhancerTrainConfig rc = cfg;
    rc.on_epoch = {};
    rc.resume = &loaded;
    const auto resumed = train_enhancer(ds.split(true), ds.split(false), ds.textures, rc);
    CHECK(resumed.history == full.history);
    CHECK(resumed.heldout_l1 == full.heldout_l1);

    const auto mpath = std::filesystem::temp_directory_path() / "taco_enh.tbdl";
    save_enhancer(mpath, full.model);
    EnhancerModel back = load_enhancer(mpath);
    const auto& s = *ds.split(false)[0];
    const auto a = render_forward(s, ds.base, full.model), b = render_forward(s, ds.base, back);
    for (std::size_t i = 0; i < a.adv.data.size(); ++i) REQUIRE(std::abs(a.adv.data[i] - b.adv.data[i]) < 1e-5);
    std::filesystem::remove(path);
    std::filesystem::remove(mpath);
}
