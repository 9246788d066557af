#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "taco/image.hpp"

namespace taco::render {

enum class TextureRole { base, naive, random, adversarial, procedural };

std::string_view to_string(TextureRole role);
TextureRole texture_role_from_string(std::string_view name);

/// RGB texture atlas with entries in [0,1].
struct TextureMap {
    Image values;  // 3 x H_T x W_T
    TextureRole role = TextureRole::base;

    TextureMap() = default;
    TextureMap(int height, int width, double fill = 0.0, TextureRole r = TextureRole::base)
        : values(3, height, width, fill), role(r) {}
    explicit TextureMap(Image img, TextureRole r = TextureRole::base);

    [[nodiscard]] int height() const { return values.height; }
    [[nodiscard]] int width() const { return values.width; }
    [[nodiscard]] std::size_t texel_count() const { return values.plane_size(); }

    /// Throws ShapeError when any entry leaves [0,1] or is not finite.
    void validate() const;
};

struct Tap {
    std::uint32_t texel = 0;  // y * width + x in the texture
    double weight = 0.0;
};

/// Sparse texel->pixel operator for one view: per pixel a list of texture
/// taps whose weights sum to one. Pixels without taps are not body pixels.
struct RenderMap {
    int image_height = 0;
    int image_width = 0;
    int texture_height = 0;
    int texture_width = 0;
    std::vector<std::uint32_t> offsets;  // CSR row starts, size pixels + 1
    std::vector<Tap> taps;

    RenderMap() = default;
    RenderMap(int img_h, int img_w, int tex_h, int tex_w);

    [[nodiscard]] std::size_t pixel_count() const {
        return static_cast<std::size_t>(image_height) * image_width;
    }
    [[nodiscard]] std::size_t taps_begin(std::size_t pixel) const { return offsets[pixel]; }
    [[nodiscard]] std::size_t taps_end(std::size_t pixel) const { return offsets[pixel + 1]; }
    [[nodiscard]] bool covers(std::size_t pixel) const { return offsets[pixel + 1] > offsets[pixel]; }

    /// Appends the next pixel's taps; pixels must be appended in order.
    void push_pixel(const std::vector<Tap>& pixel_taps);

    /// Checks index ranges, non-negative weights and per-pixel sums of 1.
    void validate(double tolerance = 1e-6) const;
};

/// X_raw[c,p] = sum over taps of w * T[c,texel]; zero on uncovered pixels.
Image render_raw(const RenderMap& map, const TextureMap& texture);

/// Transpose of render_raw: scatters an image-space gradient into texel space.
Image render_raw_transpose(const RenderMap& map, const Image& d_raw);

// RMAP: magic, u32 pixel count, per pixel u32 tap count and (u32 texel,
// f32 weight) taps. The image/texture dimensions travel in the manifest.
void write_render_map(const std::filesystem::path& path, const RenderMap& map);
RenderMap read_render_map(const std::filesystem::path& path, int img_h, int img_w, int tex_h, int tex_w);

}  // namespace taco::render
