#include <cmath>

#include "doctest.h"
#include "taco/scene.hpp"

using namespace taco;
using namespace taco::scene;

namespace {

// A 20m x 20m body quad facing +x plus a small auxiliary triangle far behind it.
TruckMesh fronto_parallel_quad() {
    TruckMesh m;
    m.vertices = {{0, -10, -10}, {0, 10, -10}, {0, 10, 10}, {0, -10, 10}, {-5, 0, 0}, {-5, 0.1, 0}, {-5, 0, 0.1}};
    const Vec2 a{0, 1}, b{1, 1}, c{1, 0}, d{0, 0};
    m.faces.push_back({{0, 1, 2}, {a, b, c}, Part::body});
    m.faces.push_back({{0, 2, 3}, {a, c, d}, Part::body});
    m.faces.push_back({{4, 5, 6}, {d, d, d}, Part::auxiliary});
    return m;
}

CameraPose front_camera() {
    CameraPose cam;
    cam.azimuth_deg = 0;
    cam.elevation_deg = 0;
    cam.distance = 5;
    cam.target = {0, 0, 0};
    cam.image_size = 64;
    cam.fov_deg = 60;
    return cam;
}

DatasetConfig small_config() {
    DatasetConfig cfg;
    cfg.positions = 6;
    cfg.views = 8;
    cfg.procedural_textures = 6;
    return cfg;
}

}  // namespace

TEST_CASE("truck mesh honors its part split and UV range") {
    const TruckMesh mesh = make_truck_mesh();
    CHECK_NOTHROW(mesh.validate());
    CHECK(mesh.count(Part::body) == 24);
    CHECK(mesh.count(Part::auxiliary) >= 1);
    CHECK(mesh.faces.size() > 150);
}

TEST_CASE("fronto-parallel quad with identity shading copies a constant texture") {
    const TruckMesh mesh = fronto_parallel_quad();
    ShadingField shading;
    shading.ambient = 1.0;
    const render::TextureMap tex(16, 16, 0.3);
    const Image backdrop(3, 64, 64, 0.9);
    const SceneSample s = rasterize(mesh, front_camera(), tex, shading, backdrop);
    for (std::size_t p = 0; p < s.mask.plane_size(); ++p) {
        REQUIRE(s.body_mask.data[p] == 1.0);
        for (int c = 0; c < 3; ++c) CHECK(s.ref.data[c * s.mask.plane_size() + p] == doctest::Approx(0.3).epsilon(1e-12));
    }
}

TEST_CASE("rasterized samples satisfy mask, depth, box and render-path invariants") {
    const DatasetConfig cfg = small_config();
    const Dataset ds = generate_dataset(cfg);
    for (const auto& s : ds.samples) {
        int x0 = 1 << 20, y0 = 1 << 20, x1 = -1, y1 = -1;
        for (int y = 0; y < s.mask.height; ++y)
            for (int x = 0; x < s.mask.width; ++x) {
                const bool m = s.mask.at(0, y, x) == 1.0;
                REQUIRE(m == (s.depth.at(0, y, x) > 0));
                if (m) {
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                    y0 = std::min(y0, y);
                    y1 = std::max(y1, y);
                }
                if (s.body_mask.at(0, y, x) == 1.0) REQUIRE(m);
            }
        CHECK(s.gt.x1() == x0);
        CHECK(s.gt.x2() == x1 + 1);
        CHECK(s.gt.y1() == y0);
        CHECK(s.gt.y2() == y1 + 1);

        REQUIRE_NOTHROW(s.render_map.validate(1e-9));
        const Image raw = render::render_raw(s.render_map, ds.textures[static_cast<std::size_t>(s.texture_id)]);
        const std::size_t plane = s.ref.plane_size();
        for (std::size_t p = 0; p < plane; ++p) {
            if (s.body_mask.data[p] == 0.0) continue;
            for (int c = 0; c < 3; ++c) {
                REQUIRE(std::abs(s.ref.data[c * plane + p] - s.shading.data[p] * raw.data[c * plane + p]) <= 1e-6);
                // gray-image ratio recovers the shading field
                REQUIRE(std::abs(s.gray.data[c * plane + p] / kGrayLevel - s.shading.data[p]) <= 1e-6);
            }
            REQUIRE(s.shading.data[p] > 0.0);
            REQUIRE(s.shading.data[p] <= 1.0);
        }
    }
}

TEST_CASE("retexture reproduces rasterize for a different texture") {
    DatasetConfig cfg = small_config();
    cfg.positions = 2;
    cfg.views = 3;
    const Dataset ds = generate_dataset(cfg);
    const auto& s = ds.samples[1];
    const TruckMesh mesh = make_truck_mesh();
    const PositionSetup setup = position_setup(cfg, s.position);
    const Image direct = rasterize(mesh, s.camera, ds.naive, setup.shading, s.ref).ref;
    const Image via_map = retexture(s, ds.naive);
    for (std::size_t i = 0; i < direct.size(); ++i) REQUIRE(std::abs(direct.data[i] - via_map.data[i]) <= 1e-12);
}

TEST_CASE("empty view raises EmptyMaskError") {
    CameraPose cam = front_camera();
    cam.target = {500, 0, 0};
    cam.azimuth_deg = 0;
    cam.distance = 5;
    CHECK_THROWS_AS(rasterize(make_truck_mesh(), cam, render::TextureMap(8, 8, 0.5), ShadingField{}, Image(3, 64, 64)),
                    EmptyMaskError);
}

TEST_CASE("dataset generation is deterministic and splits by position") {
    DatasetConfig cfg;
    cfg.positions = 6;
    cfg.views = 50;
    cfg.seed = 7;
    cfg.procedural_textures = 8;
    const Dataset a = generate_dataset(cfg);
    const Dataset b = generate_dataset(cfg);
    CHECK(manifest(a, "t").dump() == manifest(b, "t").dump());
    for (std::size_t i = 0; i < a.samples.size(); i += 37) CHECK(a.samples[i].ref.data == b.samples[i].ref.data);

    CHECK(a.samples.size() == 300);
    CHECK(a.train_positions.size() == 4);
    CHECK(a.test_positions.size() == 2);
    for (const auto& s : a.samples) {
        CHECK(s.camera.distance >= cfg.distance_min);
        CHECK(s.camera.distance <= cfg.distance_max);
        CHECK(s.camera.elevation_deg >= 5.0);
        CHECK(s.camera.elevation_deg <= 90.0);
    }
}

TEST_CASE("parallel generation matches serial generation") {
    DatasetConfig cfg = small_config();
    cfg.views = 5;
    const Dataset serial = generate_dataset(cfg);
    cfg.threads = 3;
    const Dataset parallel = generate_dataset(cfg);
    REQUIRE(serial.samples.size() == parallel.samples.size());
    for (std::size_t i = 0; i < serial.samples.size(); ++i) {
        CHECK(serial.samples[i].ref.data == parallel.samples[i].ref.data);
        CHECK(serial.samples[i].render_map.taps.size() == parallel.samples[i].render_map.taps.size());
    }
}

TEST_CASE("dataset config rejects empty angle ranges") {
    DatasetConfig cfg;
    cfg.narrow_range_deg = {40, 40};
    CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
    cfg = DatasetConfig{};
    cfg.wide_range_deg = {10, 5};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("verbatim angle convention draws elevation from the wide range") {
    DatasetConfig cfg = small_config();
    cfg.positions = 1;
    cfg.views = 30;
    cfg.angles = AngleConvention::verbatim;
    const Dataset ds = generate_dataset(cfg);
    bool high = false;
    for (const auto& s : ds.samples) {
        CHECK(s.camera.azimuth_deg >= 5.0);
        CHECK(s.camera.azimuth_deg <= 90.0);
        high = high || s.camera.elevation_deg > 90.0;
    }
    CHECK(high);
}

TEST_CASE("procedural textures") {
    SUBCASE("noise mean is close to one half") {
        const auto t = make_procedural_texture(TextureCategory::noise, 256, 3, 0);
        double sum = 0;
        for (double v : t.values.data) sum += v;
        CHECK(std::abs(sum / static_cast<double>(t.values.size()) - 0.5) <= 0.05);
    }
    SUBCASE("all categories stay in range and are seed-deterministic") {
        const auto a = make_procedural_textures(8, 32, 11);
        const auto b = make_procedural_textures(8, 32, 11);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK_NOTHROW(a[i].validate());
            CHECK(a[i].values.data == b[i].values.data);
        }
    }
    SUBCASE("uniform category is constant") {
        const auto t = make_procedural_texture(TextureCategory::uniform, 16, 5, 1);
        for (int c = 0; c < 3; ++c)
            for (double v : t.values.plane(c)) CHECK(v == t.values.at(c, 0, 0));
    }
    SUBCASE("baseline textures") {
        CHECK_NOTHROW(make_base_texture(64).validate());
        CHECK_NOTHROW(make_naive_texture(64, 1).validate());
        CHECK_NOTHROW(make_random_texture(64, 1).validate());
    }
}
