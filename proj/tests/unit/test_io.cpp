#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "taco/io.hpp"
#include "taco/render_map.hpp"
#include "taco/scene.hpp"

using namespace taco;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

void overwrite_prefix(const std::filesystem::path& p, const std::string& bytes) {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("tensor stream round trip rounds to f32") {
    const std::vector<std::uint32_t> shape{2, 3};
    const std::vector<double> v{0.1, -2.5, 3e10, 0.0, 1.0 / 3.0, -0.0};
    std::stringstream ss;
    io::write_tensor(ss, shape, v);
    CHECK(ss.str().size() == 4 + 1 + 1 + 2 * 4 + 6 * 4);
    const auto t = io::read_tensor(ss);
    CHECK(t.shape == shape);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(t.values[i] == static_cast<double>(static_cast<float>(v[i])));
    CHECK_THROWS_AS(io::write_tensor(ss, shape, std::vector<double>(5)), ShapeError);

    std::stringstream bad("NOPE\x01\x01\x01\x00\x00\x00");
    CHECK_THROWS_AS(io::read_tensor(bad), FormatError);
    std::stringstream cut;
    io::write_tensor(cut, shape, v);
    std::stringstream trunc(cut.str().substr(0, 20));
    CHECK_THROWS_AS(io::read_tensor(trunc), FormatError);
}

TEST_CASE("image tensors, ppm and bundles round trip through files") {
    TempDir dir("taco_io_test");
    const Image img = testutil::random_image(3, 5, 7, 3);
    io::write_image_tensor(dir.path / "a.tnsr", img);
    const Image back = io::read_image_tensor(dir.path / "a.tnsr");
    CHECK(back.channels == 3);
    CHECK(back.height == 5);
    CHECK(back.width == 7);
    for (std::size_t i = 0; i < img.data.size(); ++i) REQUIRE(std::abs(back.data[i] - img.data[i]) < 1e-7);

    io::write_ppm(dir.path / "a.ppm", img);
    const Image p = io::read_ppm(dir.path / "a.ppm");
    for (std::size_t i = 0; i < img.data.size(); ++i) REQUIRE(std::abs(p.data[i] - img.data[i]) <= 0.5 / 255 + 1e-12);
    io::write_text_file(dir.path / "b.ppm", "P3\n1 1\n255\n0 0 0\n");
    CHECK_THROWS_AS(io::read_ppm(dir.path / "b.ppm"), FormatError);

    const std::vector<io::NamedTensor> ts{{"w", {{2, 2}, {1, 2, 3, 4}}}, {"b", {{3}, {0.5, 0.25, 0.125}}}};
    io::write_bundle(dir.path / "m.tbdl", "test-kind", {{"epochs", 3}}, ts);
    const auto b = io::read_bundle(dir.path / "m.tbdl");
    CHECK(b.kind == "test-kind");
    CHECK(b.meta.at("epochs") == 3);
    REQUIRE(b.tensors.size() == 2);
    CHECK(b.get("b").values == std::vector<double>{0.5, 0.25, 0.125});
    CHECK(b.get("w").shape == std::vector<std::uint32_t>{2, 2});
    CHECK_THROWS_AS(b.get("missing"), FormatError);
    overwrite_prefix(dir.path / "m.tbdl", "XXXX");
    CHECK_THROWS_AS(io::read_bundle(dir.path / "m.tbdl"), FormatError);
    CHECK_THROWS(io::read_bundle(dir.path / "absent.tbdl"));
}

TEST_CASE("render maps round trip and reject bad magic") {
    TempDir dir("taco_rmap_test");
    const auto& s = testutil::tiny_dataset().samples[1];
    const auto& m = s.render_map;
    render::write_render_map(dir.path / "v.rmap", m);
    const auto r = render::read_render_map(dir.path / "v.rmap", m.image_height, m.image_width, m.texture_height,
                                           m.texture_width);
    CHECK(r.offsets == m.offsets);
    REQUIRE(r.taps.size() == m.taps.size());
    for (std::size_t i = 0; i < m.taps.size(); ++i) {
        REQUIRE(r.taps[i].texel == m.taps[i].texel);
        REQUIRE(std::abs(r.taps[i].weight - m.taps[i].weight) < 1e-7);
    }
    overwrite_prefix(dir.path / "v.rmap", "BAD!");
    CHECK_THROWS_AS(render::read_render_map(dir.path / "v.rmap", m.image_height, m.image_width, m.texture_height,
                                            m.texture_width),
                    FormatError);
}

TEST_CASE("datasets round trip through a directory") {
    TempDir dir("taco_ds_test");
    const auto& ds = testutil::tiny_dataset();
    scene::write_dataset(ds, dir.path, "test");
    const auto back = scene::read_dataset(dir.path);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto &a = ds.samples[i], &b = back.samples[i];
        REQUIRE(a.id == b.id);
        REQUIRE(a.position == b.position);
        REQUIRE(a.gt.cx == doctest::Approx(b.gt.cx));
        REQUIRE(a.gt.w == doctest::Approx(b.gt.w));
        REQUIRE(a.distractors.size() == b.distractors.size());
        REQUIRE(a.render_map.taps.size() == b.render_map.taps.size());
        for (std::size_t k = 0; k < a.ref.data.size(); k += 97) REQUIRE(std::abs(a.ref.data[k] - b.ref.data[k]) < 1e-6);
        for (std::size_t k = 0; k < a.mask.data.size(); ++k) REQUIRE(a.mask.data[k] == b.mask.data[k]);
    }
    for (std::size_t k = 0; k < ds.base.values.data.size(); ++k)
        REQUIRE(std::abs(ds.base.values.data[k] - back.base.values.data[k]) < 1e-7);
    CHECK_THROWS(scene::read_dataset(dir.path / "nowhere"));
}
