#include "taco/render_map.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include "taco/io.hpp"

namespace taco::render {

std::string_view to_string(TextureRole role) {
    switch (role) {
        case TextureRole::base: return "base";
        case TextureRole::naive: return "naive";
        case TextureRole::random: return "random";
        case TextureRole::adversarial: return "adversarial";
        case TextureRole::procedural: return "procedural";
    }
    return "unknown";
}

TextureRole texture_role_from_string(std::string_view name) {
    for (auto r : {TextureRole::base, TextureRole::naive, TextureRole::random, TextureRole::adversarial,
                   TextureRole::procedural})
        if (to_string(r) == name) return r;
    throw ConfigError("unknown texture role '" + std::string(name) + "'");
}

TextureMap::TextureMap(Image img, TextureRole r) : values(std::move(img)), role(r) {
    if (values.channels != 3) throw ShapeError("texture must have 3 channels");
}

void TextureMap::validate() const {
    if (values.channels != 3) throw ShapeError("texture must have 3 channels");
    for (double v : values.data)
        if (!(v >= 0.0 && v <= 1.0)) throw ShapeError("texture value outside [0,1]");
}

RenderMap::RenderMap(int img_h, int img_w, int tex_h, int tex_w)
    : image_height(img_h), image_width(img_w), texture_height(tex_h), texture_width(tex_w) {
    offsets.reserve(pixel_count() + 1);
    offsets.push_back(0);
}

void RenderMap::push_pixel(const std::vector<Tap>& pixel_taps) {
    if (offsets.size() > pixel_count()) throw ShapeError("render map already holds every pixel");
    taps.insert(taps.end(), pixel_taps.begin(), pixel_taps.end());
    offsets.push_back(static_cast<std::uint32_t>(taps.size()));
}

void RenderMap::validate(double tolerance) const {
    if (offsets.size() != pixel_count() + 1) throw ShapeError("render map pixel count mismatch");
    const auto texels = static_cast<std::uint32_t>(texture_height * texture_width);
    for (std::size_t p = 0; p < pixel_count(); ++p) {
        if (!covers(p)) continue;
        double sum = 0.0;
        for (std::size_t t = taps_begin(p); t < taps_end(p); ++t) {
            if (taps[t].texel >= texels) throw ShapeError("render map texel index out of range");
            if (!(taps[t].weight >= 0.0)) throw ShapeError("render map weight is negative");
            sum += taps[t].weight;
        }
        if (std::abs(sum - 1.0) > tolerance) throw ShapeError("render map weights do not sum to 1");
    }
}

Image render_raw(const RenderMap& map, const TextureMap& texture) {
    if (texture.height() != map.texture_height || texture.width() != map.texture_width)
        throw ShapeError("render_raw: texture size does not match render map");
    const auto texels = texture.texel_count();
    Image out(3, map.image_height, map.image_width);
    const std::size_t plane = out.plane_size();
    for (std::size_t p = 0; p < map.pixel_count(); ++p) {
        double acc[3] = {0.0, 0.0, 0.0};
        for (std::size_t t = map.taps_begin(p); t < map.taps_end(p); ++t) {
            const Tap& tap = map.taps[t];
            if (tap.texel >= texels) throw ShapeError("render_raw: texel index out of range");
            for (int c = 0; c < 3; ++c) acc[c] += tap.weight * texture.values.data[c * texels + tap.texel];
        }
        for (int c = 0; c < 3; ++c) out.data[c * plane + p] = acc[c];
    }
    return out;
}

Image render_raw_transpose(const RenderMap& map, const Image& d_raw) {
    if (d_raw.channels != 3 || d_raw.height != map.image_height || d_raw.width != map.image_width)
        throw ShapeError("render_raw_transpose: gradient shape mismatch");
    Image grad(3, map.texture_height, map.texture_width);
    const std::size_t texels = grad.plane_size();
    const std::size_t plane = d_raw.plane_size();
    for (std::size_t p = 0; p < map.pixel_count(); ++p) {
        for (std::size_t t = map.taps_begin(p); t < map.taps_end(p); ++t) {
            const Tap& tap = map.taps[t];
            for (int c = 0; c < 3; ++c) grad.data[c * texels + tap.texel] += tap.weight * d_raw.data[c * plane + p];
        }
    }
    return grad;
}

namespace {
constexpr std::array<char, 4> kMapMagic{'R', 'M', 'A', 'P'};
}

void write_render_map(const std::filesystem::path& path, const RenderMap& map) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    out.write(kMapMagic.data(), 4);
    io::write_u32(out, static_cast<std::uint32_t>(map.pixel_count()));
    for (std::size_t p = 0; p < map.pixel_count(); ++p) {
        io::write_u32(out, static_cast<std::uint32_t>(map.taps_end(p) - map.taps_begin(p)));
        for (std::size_t t = map.taps_begin(p); t < map.taps_end(p); ++t) {
            io::write_u32(out, map.taps[t].texel);
            io::write_f32(out, static_cast<float>(map.taps[t].weight));
        }
    }
    if (!out) throw FormatError("render map write failed");
}

RenderMap read_render_map(const std::filesystem::path& path, int img_h, int img_w, int tex_h, int tex_w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open for reading: " + path.string());
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (!in || magic != kMapMagic) throw FormatError("bad render map magic in " + path.string());
    RenderMap map(img_h, img_w, tex_h, tex_w);
    const std::uint32_t pixels = io::read_u32(in);
    if (pixels != map.pixel_count()) throw FormatError("render map pixel count disagrees with manifest");
    std::vector<Tap> taps;
    for (std::uint32_t p = 0; p < pixels; ++p) {
        const std::uint32_t n = io::read_u32(in);
        taps.resize(n);
        for (auto& t : taps) {
            t.texel = io::read_u32(in);
            t.weight = io::read_f32(in);
        }
        map.push_pixel(taps);
    }
    map.validate(1e-5);
    return map;
}

}  // namespace taco::render
