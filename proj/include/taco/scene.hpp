#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "taco/image.hpp"
#include "taco/render_map.hpp"

namespace taco::scene {

using Vec3 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;

enum class Part { body, auxiliary };

struct Face {
    std::array<int, 3> vertices{};
    std::array<Vec2, 3> uv{};
    Part part = Part::body;
};

struct TruckMesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;

    [[nodiscard]] std::size_t count(Part part) const;
    /// Throws ShapeError on out-of-range UVs, degenerate faces or a missing part.
    void validate() const;
};

/// Low-poly truck proxy: cab and cargo boxes (body, texture atlas in 4x3
/// cells) plus four cylindrical wheels (auxiliary).
TruckMesh make_truck_mesh(int wheel_segments = 16);

/// Point the camera aims at (center of the truck proxy).
Vec3 truck_center();

struct CameraPose {
    double azimuth_deg = 0.0;
    double elevation_deg = 30.0;
    double distance = 15.0;
    Vec3 target{0.0, 0.0, 1.6};
    int image_size = 128;
    double fov_deg = 40.0;
};

/// Directional Lambertian light with an ambient floor:
/// s = ambient + (1 - ambient) * max(0, n . l).
struct ShadingField {
    Vec3 light_dir{0.3, 0.4, 0.866};  // unit vector towards the light
    double ambient = 0.25;

    [[nodiscard]] double factor(const Vec3& normal) const;
};

/// 2D backdrop: vertical gradient between two colors plus labeled rectangles.
struct Distractor {
    int cls = 2;  // 1 = car-like, 2 = box-like
    Box box;
    std::array<double, 3> color{0.5, 0.5, 0.5};
};

struct Backdrop {
    std::array<double, 3> top{0.55, 0.65, 0.8};
    std::array<double, 3> bottom{0.4, 0.38, 0.3};
    std::vector<Distractor> distractors;
};

Image paint_backdrop(const Backdrop& backdrop, int size);

struct SceneSample {
    int id = 0;
    int position = 0;
    int view = 0;
    int texture_id = -1;
    CameraPose camera;
    Image ref;        // X_ref, 3 channels
    Image gray;       // X_gray, 3 channels
    Image depth;      // X_d in meters, 0 on background
    Image mask;       // M, truck pixels (body and auxiliary)
    Image body_mask;  // pixels covered by body faces; the compositing mask
    Image shading;    // per-pixel shading factor on truck pixels, 0 elsewhere
    render::RenderMap render_map;
    Box gt;  // tight pixel rectangle of `mask`
    std::vector<Distractor> distractors;
};

constexpr double kGrayLevel = 127.0 / 255.0;
constexpr std::array<double, 3> kAuxiliaryAlbedo{0.11, 0.11, 0.12};

class EmptyMaskError : public Error {
public:
    using Error::Error;
};

/// Z-buffered rasterization of the mesh. Body pixels sample the texture
/// bilinearly (clamp-to-edge) through the recorded render map; auxiliary
/// pixels use kAuxiliaryAlbedo. Background pixels come from `backdrop`.
SceneSample rasterize(const TruckMesh& mesh, const CameraPose& camera, const render::TextureMap& texture,
                      const ShadingField& shading, const Image& backdrop);

/// Re-renders a sample with another body texture. Exact with respect to
/// rasterize(): body pixels become shading * render_raw(map, texture), every
/// other pixel keeps X_ref.
Image retexture(const SceneSample& sample, const render::TextureMap& texture);

enum class AngleConvention { swapped, verbatim };

struct DatasetConfig {
    int positions = 6;
    int views = 100;
    int image_size = 128;
    int texture_size = 64;
    double fov_deg = 40.0;
    double distance_min = 12.0;
    double distance_max = 22.0;
    // The two camera angle ranges. `swapped` (default) samples elevation
    // from the narrow range and azimuth from the wide one; `verbatim` does
    // the opposite.
    std::array<double, 2> narrow_range_deg{5.0, 90.0};
    std::array<double, 2> wide_range_deg{0.0, 360.0};
    AngleConvention angles = AngleConvention::swapped;
    int train_ratio = 17;
    int test_ratio = 8;
    int procedural_textures = 32;
    int max_distractors = 2;
    std::uint64_t seed = 7;
    int threads = 1;

    void validate() const;
};

nlohmann::json to_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

/// Number of positions assigned to training: round(P * train / (train + test)).
int train_position_count(const DatasetConfig& cfg);

enum class TextureCategory { noise, uniform, stripes, blobs };

struct ProceduralMix {
    std::vector<TextureCategory> categories{TextureCategory::noise, TextureCategory::uniform,
                                            TextureCategory::stripes, TextureCategory::blobs};
};

render::TextureMap make_procedural_texture(TextureCategory category, int size, std::uint64_t seed,
                                           std::uint64_t index);
/// n textures cycling through the mix categories.
std::vector<render::TextureMap> make_procedural_textures(int n, int size, std::uint64_t seed,
                                                         const ProceduralMix& mix = {});

/// Single olive-drab color, the truck's stock paint.
render::TextureMap make_base_texture(int size);
/// Woodland-style blob camouflage in four military tones.
render::TextureMap make_naive_texture(int size, std::uint64_t seed);
/// Uniform noise.
render::TextureMap make_random_texture(int size, std::uint64_t seed);

struct Dataset {
    DatasetConfig config;
    std::vector<SceneSample> samples;
    std::vector<int> train_positions;
    std::vector<int> test_positions;
    std::vector<render::TextureMap> textures;  // procedural, indexed by texture_id
    render::TextureMap base;
    render::TextureMap naive;
    render::TextureMap random;

    [[nodiscard]] bool is_train(const SceneSample& s) const;
    [[nodiscard]] std::vector<const SceneSample*> split(bool train) const;
};

/// Per-position scene setup derived from (seed, position).
struct PositionSetup {
    ShadingField shading;
    Backdrop palette;  // colors only
};
PositionSetup position_setup(const DatasetConfig& cfg, int position);

Dataset generate_dataset(const DatasetConfig& cfg);

/// Manifest JSON for a dataset whose sample files live under `root`.
nlohmann::json manifest(const Dataset& ds, const std::string& tool_version);
void write_dataset(const Dataset& ds, const std::filesystem::path& root, const std::string& tool_version);
Dataset read_dataset(const std::filesystem::path& root);

nlohmann::json to_json(const Box& b);
Box box_from_json(const nlohmann::json& j);

}  // namespace taco::scene
