#include "taco/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "taco/io.hpp"
#include "taco/parallel.hpp"
#include "taco/rng.hpp"

namespace taco::scene {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalize(const Vec3& a) {
    const double n = std::sqrt(dot(a, a));
    return n > 0 ? scale(a, 1.0 / n) : a;
}

// Body atlas: 4 columns x 3 rows of cells; half a texel of margin at 64^2.
constexpr int kAtlasCols = 4;
constexpr int kAtlasRows = 3;
constexpr double kAtlasMargin = 0.5 / 64.0;

void add_box(TruckMesh& mesh, const Vec3& lo, const Vec3& hi, int& atlas_cell) {
    const int base = static_cast<int>(mesh.vertices.size());
    for (int i = 0; i < 8; ++i)
        mesh.vertices.push_back({(i & 1) ? hi[0] : lo[0], (i & 2) ? hi[1] : lo[1], (i & 4) ? hi[2] : lo[2]});
    // Each quad lists its corners in cyclic order.
    const int quads[6][4] = {
        {0, 1, 3, 2},  // bottom z-
        {4, 5, 7, 6},  // top z+
        {0, 1, 5, 4},  // y-
        {2, 3, 7, 6},  // y+
        {0, 2, 6, 4},  // x-
        {1, 3, 7, 5},  // x+
    };
    for (const auto& q : quads) {
        const int col = atlas_cell % kAtlasCols;
        const int row = atlas_cell / kAtlasCols;
        ++atlas_cell;
        const double u0 = static_cast<double>(col) / kAtlasCols + kAtlasMargin;
        const double u1 = static_cast<double>(col + 1) / kAtlasCols - kAtlasMargin;
        const double v0 = static_cast<double>(row) / kAtlasRows + kAtlasMargin;
        const double v1 = static_cast<double>(row + 1) / kAtlasRows - kAtlasMargin;
        const Vec2 uv[4] = {{u0, v0}, {u1, v0}, {u1, v1}, {u0, v1}};
        mesh.faces.push_back({{base + q[0], base + q[1], base + q[2]}, {uv[0], uv[1], uv[2]}, Part::body});
        mesh.faces.push_back({{base + q[0], base + q[2], base + q[3]}, {uv[0], uv[2], uv[3]}, Part::body});
    }
}

void add_wheel(TruckMesh& mesh, const Vec3& center, double radius, double width, int segments) {
    const int base = static_cast<int>(mesh.vertices.size());
    for (int side = 0; side < 2; ++side) {
        const double y = center[1] + (side == 0 ? -0.5 : 0.5) * width;
        for (int s = 0; s < segments; ++s) {
            const double a = 2.0 * std::numbers::pi * s / segments;
            mesh.vertices.push_back({center[0] + radius * std::cos(a), y, center[2] + radius * std::sin(a)});
        }
    }
    const int hub0 = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back({center[0], center[1] - 0.5 * width, center[2]});
    mesh.vertices.push_back({center[0], center[1] + 0.5 * width, center[2]});
    const Vec2 uv{0.5, 0.5};
    for (int s = 0; s < segments; ++s) {
        const int a0 = base + s;
        const int a1 = base + (s + 1) % segments;
        const int b0 = a0 + segments;
        const int b1 = a1 + segments;
        mesh.faces.push_back({{a0, a1, b1}, {uv, uv, uv}, Part::auxiliary});
        mesh.faces.push_back({{a0, b1, b0}, {uv, uv, uv}, Part::auxiliary});
        mesh.faces.push_back({{hub0, a0, a1}, {uv, uv, uv}, Part::auxiliary});
        mesh.faces.push_back({{hub0 + 1, b1, b0}, {uv, uv, uv}, Part::auxiliary});
    }
}

double face_area(const TruckMesh& mesh, const Face& f) {
    const Vec3 e1 = sub(mesh.vertices[f.vertices[1]], mesh.vertices[f.vertices[0]]);
    const Vec3 e2 = sub(mesh.vertices[f.vertices[2]], mesh.vertices[f.vertices[0]]);
    const Vec3 c = cross(e1, e2);
    return 0.5 * std::sqrt(dot(c, c));
}

struct CameraFrame {
    Vec3 eye, right, up, forward;
    double focal = 1.0;
    double half = 64.0;
};

CameraFrame camera_frame(const CameraPose& cam) {
    const double az = cam.azimuth_deg * kDeg;
    const double el = cam.elevation_deg * kDeg;
    const Vec3 dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
    CameraFrame f;
    f.eye = add(cam.target, scale(dir, cam.distance));
    f.forward = scale(dir, -1.0);
    // Orthogonal to dir for every elevation, including straight down.
    f.up = {-std::sin(el) * std::cos(az), -std::sin(el) * std::sin(az), std::cos(el)};
    f.right = cross(f.forward, f.up);
    f.half = 0.5 * cam.image_size;
    f.focal = f.half / std::tan(0.5 * cam.fov_deg * kDeg);
    return f;
}

std::vector<render::Tap> bilinear_taps(double u, double v, int tex_h, int tex_w) {
    const double x = u * tex_w - 0.5;
    const double y = v * tex_h - 0.5;
    const double fx0 = std::floor(x);
    const double fy0 = std::floor(y);
    const double ax = x - fx0;
    const double ay = y - fy0;
    const int x0 = static_cast<int>(fx0);
    const int y0 = static_cast<int>(fy0);
    std::vector<render::Tap> taps;
    taps.reserve(4);
    const auto push = [&](int tx, int ty, double w) {
        if (w <= 0.0) return;
        tx = std::clamp(tx, 0, tex_w - 1);
        ty = std::clamp(ty, 0, tex_h - 1);
        const auto texel = static_cast<std::uint32_t>(ty * tex_w + tx);
        for (auto& t : taps)
            if (t.texel == texel) {
                t.weight += w;
                return;
            }
        taps.push_back({texel, w});
    };
    push(x0, y0, (1 - ax) * (1 - ay));
    push(x0 + 1, y0, ax * (1 - ay));
    push(x0, y0 + 1, (1 - ax) * ay);
    push(x0 + 1, y0 + 1, ax * ay);
    return taps;
}

void fill_rect(Image& img, const Box& b, const std::array<double, 3>& color) {
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x1())));
    const int x1 = std::min(img.width, static_cast<int>(std::ceil(b.x2())));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y1())));
    const int y1 = std::min(img.height, static_cast<int>(std::ceil(b.y2())));
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[static_cast<std::size_t>(c)];
}

void fill_disc(Image& img, double cx, double cy, double r, const std::array<double, 3>& color) {
    for (int y = std::max(0, static_cast<int>(cy - r)); y < std::min(img.height, static_cast<int>(cy + r) + 1); ++y)
        for (int x = std::max(0, static_cast<int>(cx - r)); x < std::min(img.width, static_cast<int>(cx + r) + 1); ++x) {
            const double dx = x + 0.5 - cx;
            const double dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= r * r)
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[static_cast<std::size_t>(c)];
        }
}

std::array<double, 3> random_color(Rng& rng, double lo = 0.0, double hi = 1.0) {
    return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

bool overlaps(const Box& a, const Box& b, double pad) {
    return a.x1() - pad < b.x2() && b.x1() - pad < a.x2() && a.y1() - pad < b.y2() && b.y1() - pad < a.y2();
}

}  // namespace

// ---------------------------------------------------------------- mesh

std::size_t TruckMesh::count(Part part) const {
    return static_cast<std::size_t>(std::count_if(faces.begin(), faces.end(), [&](const Face& f) { return f.part == part; }));
}

void TruckMesh::validate() const {
    if (count(Part::body) == 0 || count(Part::auxiliary) == 0) throw ShapeError("mesh needs body and auxiliary faces");
    for (const auto& f : faces) {
        for (int v : f.vertices)
            if (v < 0 || static_cast<std::size_t>(v) >= vertices.size()) throw ShapeError("face vertex out of range");
        for (const auto& uv : f.uv)
            if (uv[0] < 0 || uv[0] > 1 || uv[1] < 0 || uv[1] > 1) throw ShapeError("UV outside [0,1]");
        if (!(face_area(*this, f) > 0)) throw ShapeError("degenerate face");
    }
}

Vec3 truck_center() { return {0.0, 0.0, 1.6}; }

TruckMesh make_truck_mesh(int wheel_segments) {
    TruckMesh mesh;
    int cell = 0;
    add_box(mesh, {-3.5, -1.2, 0.9}, {1.0, 1.2, 3.2}, cell);  // cargo
    add_box(mesh, {1.0, -1.1, 0.9}, {3.2, 1.1, 2.8}, cell);   // cab
    for (double x : {-2.3, 2.1})
        for (double y : {-1.05, 1.05}) add_wheel(mesh, {x, y, 0.55}, 0.55, 0.4, wheel_segments);
    mesh.validate();
    return mesh;
}

double ShadingField::factor(const Vec3& normal) const {
    return ambient + (1.0 - ambient) * std::max(0.0, dot(normalize(normal), normalize(light_dir)));
}

// ---------------------------------------------------------------- raster

Image paint_backdrop(const Backdrop& backdrop, int size) {
    Image img(3, size, size);
    for (int y = 0; y < size; ++y) {
        const double t = (y + 0.5) / size;
        for (int c = 0; c < 3; ++c) {
            const double v = (1 - t) * backdrop.top[static_cast<std::size_t>(c)] + t * backdrop.bottom[static_cast<std::size_t>(c)];
            for (int x = 0; x < size; ++x) img.at(c, y, x) = v;
        }
    }
    for (const auto& d : backdrop.distractors) {
        if (d.cls == 1) {
            // car-like: lower body, narrower cabin, two dark wheels
            const Box& b = d.box;
            const std::array<double, 3> cabin{std::min(1.0, d.color[0] * 0.6 + 0.35), std::min(1.0, d.color[1] * 0.6 + 0.35),
                                              std::min(1.0, d.color[2] * 0.6 + 0.4)};
            fill_rect(img, Box::from_corners(b.x1() + 0.25 * b.w, b.y1(), b.x2() - 0.2 * b.w, b.y1() + 0.45 * b.h), cabin);
            fill_rect(img, Box::from_corners(b.x1(), b.y1() + 0.4 * b.h, b.x2(), b.y2() - 0.15 * b.h), d.color);
            const double r = 0.18 * b.h + 0.5;
            fill_disc(img, b.x1() + 0.22 * b.w, b.y2() - r, r, {0.08, 0.08, 0.08});
            fill_disc(img, b.x2() - 0.22 * b.w, b.y2() - r, r, {0.08, 0.08, 0.08});
        } else {
            fill_rect(img, d.box, d.color);
        }
    }
    return img;
}

SceneSample rasterize(const TruckMesh& mesh, const CameraPose& camera, const render::TextureMap& texture,
                      const ShadingField& shading, const Image& backdrop) {
    const int n = camera.image_size;
    if (n < 64) throw ShapeError("image size must be at least 64");
    if (backdrop.channels != 3 || backdrop.height != n || backdrop.width != n)
        throw ShapeError("backdrop size must match the camera image size");
    const int tex_h = texture.height();
    const int tex_w = texture.width();
    const CameraFrame frame = camera_frame(camera);
    constexpr double kNear = 0.1;

    const std::size_t pixels = static_cast<std::size_t>(n) * n;
    std::vector<double> zbuf(pixels, std::numeric_limits<double>::infinity());
    std::vector<int> face_at(pixels, -1);
    std::vector<Vec2> uv_at(pixels, Vec2{0, 0});

    struct Projected {
        double sx, sy, z;
    };
    for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
        const Face& f = mesh.faces[fi];
        Projected p[3];
        bool behind = false;
        for (int k = 0; k < 3; ++k) {
            const Vec3 rel = sub(mesh.vertices[f.vertices[k]], frame.eye);
            const double z = dot(rel, frame.forward);
            if (z < kNear) behind = true;
            p[k] = {frame.half + frame.focal * dot(rel, frame.right) / z, frame.half - frame.focal * dot(rel, frame.up) / z, z};
        }
        if (behind) continue;
        const double area = (p[1].sx - p[0].sx) * (p[2].sy - p[0].sy) - (p[2].sx - p[0].sx) * (p[1].sy - p[0].sy);
        if (std::abs(area) < 1e-12) continue;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({p[0].sx, p[1].sx, p[2].sx}))));
        const int x1 = std::min(n - 1, static_cast<int>(std::ceil(std::max({p[0].sx, p[1].sx, p[2].sx}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({p[0].sy, p[1].sy, p[2].sy}))));
        const int y1 = std::min(n - 1, static_cast<int>(std::ceil(std::max({p[0].sy, p[1].sy, p[2].sy}))));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double px = x + 0.5;
                const double py = y + 0.5;
                double l[3];
                l[0] = ((p[1].sx - px) * (p[2].sy - py) - (p[2].sx - px) * (p[1].sy - py)) / area;
                l[1] = ((p[2].sx - px) * (p[0].sy - py) - (p[0].sx - px) * (p[2].sy - py)) / area;
                l[2] = 1.0 - l[0] - l[1];
                if (l[0] < 0 || l[1] < 0 || l[2] < 0) continue;
                // perspective-correct interpolation
                const double w0 = l[0] / p[0].z, w1 = l[1] / p[1].z, w2 = l[2] / p[2].z;
                const double zinv = w0 + w1 + w2;
                const double depth = 1.0 / zinv;
                const std::size_t idx = static_cast<std::size_t>(y) * n + x;
                if (depth >= zbuf[idx]) continue;
                zbuf[idx] = depth;
                face_at[idx] = static_cast<int>(fi);
                uv_at[idx] = {(w0 * f.uv[0][0] + w1 * f.uv[1][0] + w2 * f.uv[2][0]) / zinv,
                              (w0 * f.uv[0][1] + w1 * f.uv[1][1] + w2 * f.uv[2][1]) / zinv};
            }
        }
    }

    SceneSample s;
    s.camera = camera;
    s.ref = backdrop;
    s.gray = backdrop;
    s.depth = Image(1, n, n);
    s.mask = Image(1, n, n);
    s.body_mask = Image(1, n, n);
    s.shading = Image(1, n, n);
    s.render_map = render::RenderMap(n, n, tex_h, tex_w);
    const std::size_t texels = texture.texel_count();
    int bx0 = n, by0 = n, bx1 = -1, by1 = -1;
    std::vector<render::Tap> none;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * n + x;
            const int fi = face_at[idx];
            if (fi < 0) {
                s.render_map.push_pixel(none);
                continue;
            }
            const Face& f = mesh.faces[static_cast<std::size_t>(fi)];
            const Vec3& a = mesh.vertices[f.vertices[0]];
            Vec3 normal = normalize(cross(sub(mesh.vertices[f.vertices[1]], a), sub(mesh.vertices[f.vertices[2]], a)));
            if (dot(normal, sub(frame.eye, a)) < 0) normal = scale(normal, -1.0);
            const double sh = shading.factor(normal);
            s.depth.data[idx] = zbuf[idx];
            s.mask.data[idx] = 1.0;
            s.shading.data[idx] = sh;
            bx0 = std::min(bx0, x);
            bx1 = std::max(bx1, x);
            by0 = std::min(by0, y);
            by1 = std::max(by1, y);
            if (f.part == Part::body) {
                const auto taps = bilinear_taps(uv_at[idx][0], uv_at[idx][1], tex_h, tex_w);
                s.render_map.push_pixel(taps);
                s.body_mask.data[idx] = 1.0;
                for (int c = 0; c < 3; ++c) {
                    double albedo = 0.0;
                    for (const auto& t : taps) albedo += t.weight * texture.values.data[c * texels + t.texel];
                    s.ref.at(c, y, x) = sh * albedo;
                    s.gray.at(c, y, x) = sh * kGrayLevel;
                }
            } else {
                s.render_map.push_pixel(none);
                for (int c = 0; c < 3; ++c) {
                    s.ref.at(c, y, x) = sh * kAuxiliaryAlbedo[static_cast<std::size_t>(c)];
                    s.gray.at(c, y, x) = s.ref.at(c, y, x);
                }
            }
        }
    }
    if (bx1 < 0) throw EmptyMaskError("no truck pixel is visible from this camera");
    s.gt = Box::from_corners(bx0, by0, bx1 + 1, by1 + 1);
    return s;
}

Image retexture(const SceneSample& sample, const render::TextureMap& texture) {
    Image out = sample.ref;
    const Image raw = render::render_raw(sample.render_map, texture);
    const std::size_t plane = out.plane_size();
    for (std::size_t p = 0; p < plane; ++p) {
        if (sample.body_mask.data[p] == 0.0) continue;
        for (int c = 0; c < 3; ++c) out.data[c * plane + p] = sample.shading.data[p] * raw.data[c * plane + p];
    }
    return out;
}

// ---------------------------------------------------------------- textures

render::TextureMap make_procedural_texture(TextureCategory category, int size, std::uint64_t seed, std::uint64_t index) {
    Rng rng = make_rng(seed, {0x7e47, index});
    render::TextureMap t(size, size, 0.0, render::TextureRole::procedural);
    Image& v = t.values;
    switch (category) {
        case TextureCategory::noise:
            for (auto& x : v.data) x = uniform01(rng);
            break;
        case TextureCategory::uniform: {
            const auto color = random_color(rng);
            for (int c = 0; c < 3; ++c)
                for (auto& x : v.plane(c)) x = color[static_cast<std::size_t>(c)];
            break;
        }
        case TextureCategory::stripes: {
            const auto a = random_color(rng);
            const auto b = random_color(rng);
            const int period = uniform_int(rng, 4, 16);
            const int orientation = uniform_int(rng, 0, 2);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const int coord = orientation == 0 ? y : orientation == 1 ? x : x + y;
                    const auto& col = (coord / period) % 2 == 0 ? a : b;
                    for (int c = 0; c < 3; ++c) v.at(c, y, x) = col[static_cast<std::size_t>(c)];
                }
            break;
        }
        case TextureCategory::blobs: {
            const auto bg = random_color(rng);
            for (int c = 0; c < 3; ++c)
                for (auto& x : v.plane(c)) x = bg[static_cast<std::size_t>(c)];
            const int blobs = uniform_int(rng, 6, 14);
            for (int i = 0; i < blobs; ++i) {
                const auto col = random_color(rng);
                fill_disc(v, uniform(rng, 0, size), uniform(rng, 0, size), uniform(rng, 2.0, size / 5.0), col);
            }
            break;
        }
    }
    return t;
}

std::vector<render::TextureMap> make_procedural_textures(int n, int size, std::uint64_t seed, const ProceduralMix& mix) {
    if (n < 1) throw ConfigError("need at least one procedural texture");
    if (mix.categories.empty()) throw ConfigError("procedural mix is empty");
    std::vector<render::TextureMap> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        out.push_back(make_procedural_texture(mix.categories[static_cast<std::size_t>(i) % mix.categories.size()], size, seed,
                                              static_cast<std::uint64_t>(i)));
    return out;
}

render::TextureMap make_base_texture(int size) {
    render::TextureMap t(size, size, 0.0, render::TextureRole::base);
    const double color[3] = {0.36, 0.38, 0.24};
    for (int c = 0; c < 3; ++c)
        for (auto& x : t.values.plane(c)) x = color[c];
    return t;
}

render::TextureMap make_naive_texture(int size, std::uint64_t seed) {
    Rng rng = make_rng(seed, {0x4a1e});
    render::TextureMap t = make_base_texture(size);
    t.role = render::TextureRole::naive;
    const std::array<std::array<double, 3>, 3> tones{{{0.22, 0.24, 0.14}, {0.45, 0.40, 0.28}, {0.10, 0.10, 0.08}}};
    for (int i = 0; i < size / 2; ++i) {
        const auto& tone = tones[static_cast<std::size_t>(i) % tones.size()];
        const double cx = uniform(rng, 0, size);
        const double cy = uniform(rng, 0, size);
        // clusters of overlapping discs give irregular patches
        for (int k = 0; k < 3; ++k)
            fill_disc(t.values, cx + uniform(rng, -3, 3), cy + uniform(rng, -3, 3), uniform(rng, 1.5, size / 12.0 + 2), tone);
    }
    return t;
}

render::TextureMap make_random_texture(int size, std::uint64_t seed) {
    Rng rng = make_rng(seed, {0x4a4d});
    render::TextureMap t(size, size, 0.0, render::TextureRole::random);
    for (auto& x : t.values.data) x = uniform01(rng);
    return t;
}

// ---------------------------------------------------------------- dataset

void DatasetConfig::validate() const {
    if (positions < 1 || views < 1) throw ConfigError("positions and views must be >= 1");
    if (image_size < 64) throw ConfigError("image_size must be >= 64");
    if (texture_size < 2) throw ConfigError("texture_size must be >= 2");
    if (!(distance_min > 0 && distance_max >= distance_min)) throw ConfigError("invalid camera distance range");
    if (!(narrow_range_deg[1] > narrow_range_deg[0]) || !(wide_range_deg[1] > wide_range_deg[0]))
        throw ConfigError("camera angle ranges must be non-empty");
    const double elev_lo = angles == AngleConvention::swapped ? narrow_range_deg[0] : wide_range_deg[0];
    if (elev_lo < 0) throw ConfigError("elevation range must be non-negative");
    if (train_ratio < 0 || test_ratio < 0 || train_ratio + test_ratio == 0) throw ConfigError("invalid split ratio");
    if (procedural_textures < 1) throw ConfigError("procedural_textures must be >= 1");
    if (!(fov_deg > 1 && fov_deg < 170)) throw ConfigError("fov_deg out of range");
}

nlohmann::json to_json(const DatasetConfig& c) {
    return {{"positions", c.positions},
            {"views", c.views},
            {"image_size", c.image_size},
            {"texture_size", c.texture_size},
            {"fov_deg", c.fov_deg},
            {"distance_min", c.distance_min},
            {"distance_max", c.distance_max},
            {"narrow_range_deg", c.narrow_range_deg},
            {"wide_range_deg", c.wide_range_deg},
            {"angle_convention", c.angles == AngleConvention::swapped ? "swapped" : "verbatim"},
            {"train_ratio", c.train_ratio},
            {"test_ratio", c.test_ratio},
            {"procedural_textures", c.procedural_textures},
            {"max_distractors", c.max_distractors},
            {"seed", c.seed}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.positions = j.value("positions", c.positions);
    c.views = j.value("views", c.views);
    c.image_size = j.value("image_size", c.image_size);
    c.texture_size = j.value("texture_size", c.texture_size);
    c.fov_deg = j.value("fov_deg", c.fov_deg);
    c.distance_min = j.value("distance_min", c.distance_min);
    c.distance_max = j.value("distance_max", c.distance_max);
    c.narrow_range_deg = j.value("narrow_range_deg", c.narrow_range_deg);
    c.wide_range_deg = j.value("wide_range_deg", c.wide_range_deg);
    const std::string conv = j.value("angle_convention", std::string("swapped"));
    if (conv == "swapped") c.angles = AngleConvention::swapped;
    else if (conv == "verbatim") c.angles = AngleConvention::verbatim;
    else throw ConfigError("angle_convention must be 'swapped' or 'verbatim'");
    c.train_ratio = j.value("train_ratio", c.train_ratio);
    c.test_ratio = j.value("test_ratio", c.test_ratio);
    c.procedural_textures = j.value("procedural_textures", c.procedural_textures);
    c.max_distractors = j.value("max_distractors", c.max_distractors);
    c.seed = j.value("seed", c.seed);
    return c;
}

int train_position_count(const DatasetConfig& cfg) {
    const double exact = static_cast<double>(cfg.positions) * cfg.train_ratio / (cfg.train_ratio + cfg.test_ratio);
    int n = static_cast<int>(std::lround(exact));
    if (cfg.positions >= 2) n = std::clamp(n, 1, cfg.positions - 1);
    return n;
}

PositionSetup position_setup(const DatasetConfig& cfg, int position) {
    // One sun per scene; positions differ in the truck's heading relative to it.
    Rng sun = make_rng(cfg.seed, {0x5a11});
    const double el = uniform(sun, 40, 70) * kDeg;
    Rng rng = make_rng(cfg.seed, {0x9051, static_cast<std::uint64_t>(position)});
    PositionSetup setup;
    const double az = uniform(rng, 0, 2 * std::numbers::pi);
    setup.shading.light_dir = {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
    setup.shading.ambient = 0.25;
    setup.palette.top = {uniform(rng, 0.45, 0.75), uniform(rng, 0.55, 0.8), uniform(rng, 0.65, 0.95)};
    setup.palette.bottom = {uniform(rng, 0.25, 0.55), uniform(rng, 0.25, 0.5), uniform(rng, 0.15, 0.4)};
    return setup;
}

bool Dataset::is_train(const SceneSample& s) const {
    return std::find(train_positions.begin(), train_positions.end(), s.position) != train_positions.end();
}

std::vector<const SceneSample*> Dataset::split(bool train) const {
    std::vector<const SceneSample*> out;
    for (const auto& s : samples)
        if (is_train(s) == train) out.push_back(&s);
    return out;
}

Dataset generate_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    const int n_train = train_position_count(cfg);
    for (int p = 0; p < cfg.positions; ++p) (p < n_train ? ds.train_positions : ds.test_positions).push_back(p);
    ds.textures = make_procedural_textures(cfg.procedural_textures, cfg.texture_size, cfg.seed);
    ds.base = make_base_texture(cfg.texture_size);
    ds.naive = make_naive_texture(cfg.texture_size, cfg.seed);
    ds.random = make_random_texture(cfg.texture_size, cfg.seed);

    const TruckMesh mesh = make_truck_mesh();
    std::vector<PositionSetup> setups;
    for (int p = 0; p < cfg.positions; ++p) setups.push_back(position_setup(cfg, p));

    const bool swapped = cfg.angles == AngleConvention::swapped;
    const auto& elev_range = swapped ? cfg.narrow_range_deg : cfg.wide_range_deg;
    const auto& azim_range = swapped ? cfg.wide_range_deg : cfg.narrow_range_deg;

    const std::size_t total = static_cast<std::size_t>(cfg.positions) * cfg.views;
    ds.samples.resize(total);
    parallel_for(total, cfg.threads, [&](std::size_t i) {
        const int position = static_cast<int>(i) / cfg.views;
        const int view = static_cast<int>(i) % cfg.views;
        const PositionSetup& setup = setups[static_cast<std::size_t>(position)];
        Rng rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(position), static_cast<std::uint64_t>(view), 1});
        CameraPose cam;
        cam.image_size = cfg.image_size;
        cam.fov_deg = cfg.fov_deg;
        cam.target = truck_center();
        const int texture_id = uniform_int(rng, 0, cfg.procedural_textures - 1);
        const auto& texture = ds.textures[static_cast<std::size_t>(texture_id)];
        Image plain = paint_backdrop(setup.palette, cfg.image_size);
        SceneSample s;
        for (int attempt = 0;; ++attempt) {
            cam.azimuth_deg = uniform(rng, azim_range[0], azim_range[1]);
            cam.elevation_deg = uniform(rng, elev_range[0], elev_range[1]);
            cam.distance = uniform(rng, cfg.distance_min, cfg.distance_max);
            try {
                s = rasterize(mesh, cam, texture, setup.shading, plain);
                break;
            } catch (const EmptyMaskError&) {
                if (attempt >= 16) throw;
            }
        }
        // Distractors go into free background space, then the background is repainted.
        Backdrop backdrop = setup.palette;
        const int count = uniform_int(rng, 0, cfg.max_distractors);
        for (int k = 0; k < count; ++k) {
            for (int attempt = 0; attempt < 12; ++attempt) {
                Distractor d;
                d.cls = uniform_int(rng, 1, 2);
                const double scale = cfg.image_size / 128.0;
                const double w = (d.cls == 1 ? uniform(rng, 18, 34) : uniform(rng, 8, 22)) * scale;
                const double h = (d.cls == 1 ? w * uniform(rng, 0.45, 0.6) : uniform(rng, 8, 22) * scale);
                d.box = {uniform(rng, w / 2, cfg.image_size - w / 2), uniform(rng, h / 2, cfg.image_size - h / 2), w, h};
                d.color = random_color(rng, 0.1, 0.9);
                bool clash = overlaps(d.box, s.gt, 2.0);
                for (const auto& other : backdrop.distractors) clash = clash || overlaps(d.box, other.box, 2.0);
                if (clash) continue;
                backdrop.distractors.push_back(d);
                break;
            }
        }
        const Image bg = paint_backdrop(backdrop, cfg.image_size);
        const std::size_t plane = bg.plane_size();
        for (std::size_t p = 0; p < plane; ++p) {
            if (s.mask.data[p] != 0.0) continue;
            for (int c = 0; c < 3; ++c) {
                s.ref.data[c * plane + p] = bg.data[c * plane + p];
                s.gray.data[c * plane + p] = bg.data[c * plane + p];
            }
        }
        s.distractors = backdrop.distractors;
        s.id = static_cast<int>(i);
        s.position = position;
        s.view = view;
        s.texture_id = texture_id;
        ds.samples[i] = std::move(s);
    });
    return ds;
}

// ---------------------------------------------------------------- files

nlohmann::json to_json(const Box& b) { return nlohmann::json::array({b.cx, b.cy, b.w, b.h}); }

Box box_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw FormatError("box must be [cx, cy, w, h]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

namespace {

std::string sample_stem(int id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "samples/%05d", id);
    return buf;
}

}  // namespace

nlohmann::json manifest(const Dataset& ds, const std::string& tool_version) {
    nlohmann::json m;
    m["format"] = "taco-dataset";
    m["tool_version"] = tool_version;
    m["config"] = to_json(ds.config);
    m["train_positions"] = ds.train_positions;
    m["test_positions"] = ds.test_positions;
    nlohmann::json tex;
    tex["procedural"] = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.textures.size(); ++i) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "textures/proc_%03zu.tnsr", i);
        tex["procedural"].push_back(buf);
    }
    tex["base"] = "textures/base.tnsr";
    tex["naive"] = "textures/naive.tnsr";
    tex["random"] = "textures/random.tnsr";
    m["textures"] = tex;
    m["samples"] = nlohmann::json::array();
    for (const auto& s : ds.samples) {
        const std::string stem = sample_stem(s.id);
        nlohmann::json distractors = nlohmann::json::array();
        for (const auto& d : s.distractors) distractors.push_back({{"class", d.cls}, {"box", to_json(d.box)}});
        m["samples"].push_back({
            {"id", s.id},
            {"position", s.position},
            {"view", s.view},
            {"split", ds.is_train(s) ? "train" : "test"},
            {"texture_id", s.texture_id},
            {"camera",
             {{"azimuth_deg", s.camera.azimuth_deg},
              {"elevation_deg", s.camera.elevation_deg},
              {"distance", s.camera.distance},
              {"target", s.camera.target},
              {"image_size", s.camera.image_size},
              {"fov_deg", s.camera.fov_deg}}},
            {"gt_box", to_json(s.gt)},
            {"distractors", distractors},
            {"files",
             {{"ref", stem + "_ref.tnsr"},
              {"ref_ppm", stem + "_ref.ppm"},
              {"gray", stem + "_gray.tnsr"},
              {"depth", stem + "_depth.tnsr"},
              {"mask", stem + "_mask.tnsr"},
              {"body_mask", stem + "_body.tnsr"},
              {"render_map", stem + "_map.rmap"}}},
        });
    }
    return m;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& root, const std::string& tool_version) {
    const nlohmann::json m = manifest(ds, tool_version);
    std::filesystem::create_directories(root / "samples");
    const auto& tex = m["textures"];
    for (std::size_t i = 0; i < ds.textures.size(); ++i)
        io::write_image_tensor(root / tex["procedural"][i].get<std::string>(), ds.textures[i].values);
    for (const auto* name : {"base", "naive", "random"}) {
        const auto& t = std::string(name) == "base" ? ds.base : std::string(name) == "naive" ? ds.naive : ds.random;
        io::write_image_tensor(root / tex[name].get<std::string>(), t.values);
        io::write_ppm(root / (std::string("textures/") + name + ".ppm"), t.values);
    }
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        const auto& f = m["samples"][i]["files"];
        io::write_image_tensor(root / f["ref"].get<std::string>(), s.ref);
        io::write_ppm(root / f["ref_ppm"].get<std::string>(), s.ref);
        io::write_image_tensor(root / f["gray"].get<std::string>(), s.gray);
        io::write_image_tensor(root / f["depth"].get<std::string>(), s.depth);
        io::write_image_tensor(root / f["mask"].get<std::string>(), s.mask);
        io::write_image_tensor(root / f["body_mask"].get<std::string>(), s.body_mask);
        render::write_render_map(root / f["render_map"].get<std::string>(), s.render_map);
    }
    io::write_text_file(root / "manifest.json", m.dump(1) + "\n");
}

Dataset read_dataset(const std::filesystem::path& root) {
    const auto manifest_path = root / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw ConfigError("no dataset manifest at " + manifest_path.string() + " (run gen-dataset first)");
    const auto m = nlohmann::json::parse(io::read_text_file(manifest_path));
    Dataset ds;
    ds.config = dataset_config_from_json(m.at("config"));
    ds.train_positions = m.at("train_positions").get<std::vector<int>>();
    ds.test_positions = m.at("test_positions").get<std::vector<int>>();
    const auto& tex = m.at("textures");
    for (const auto& p : tex.at("procedural"))
        ds.textures.emplace_back(io::read_image_tensor(root / p.get<std::string>()), render::TextureRole::procedural);
    ds.base = render::TextureMap(io::read_image_tensor(root / tex.at("base").get<std::string>()), render::TextureRole::base);
    ds.naive = render::TextureMap(io::read_image_tensor(root / tex.at("naive").get<std::string>()), render::TextureRole::naive);
    ds.random = render::TextureMap(io::read_image_tensor(root / tex.at("random").get<std::string>()), render::TextureRole::random);
    const int tex_size = ds.config.texture_size;
    for (const auto& e : m.at("samples")) {
        SceneSample s;
        s.id = e.at("id");
        s.position = e.at("position");
        s.view = e.at("view");
        s.texture_id = e.value("texture_id", -1);
        const auto& cam = e.at("camera");
        s.camera.azimuth_deg = cam.at("azimuth_deg");
        s.camera.elevation_deg = cam.at("elevation_deg");
        s.camera.distance = cam.at("distance");
        s.camera.target = cam.at("target").get<Vec3>();
        s.camera.image_size = cam.at("image_size");
        s.camera.fov_deg = cam.value("fov_deg", ds.config.fov_deg);
        s.gt = box_from_json(e.at("gt_box"));
        for (const auto& d : e.at("distractors")) s.distractors.push_back({d.at("class").get<int>(), box_from_json(d.at("box")), {}});
        const auto& f = e.at("files");
        s.ref = io::read_image_tensor(root / f.at("ref").get<std::string>());
        s.gray = io::read_image_tensor(root / f.at("gray").get<std::string>());
        s.depth = io::read_image_tensor(root / f.at("depth").get<std::string>());
        s.mask = io::read_image_tensor(root / f.at("mask").get<std::string>());
        s.body_mask = io::read_image_tensor(root / f.at("body_mask").get<std::string>());
        const int n = s.camera.image_size;
        s.render_map = render::read_render_map(root / f.at("render_map").get<std::string>(), n, n, tex_size, tex_size);
        // Shading is implied by the gray render on body pixels and by the
        // fixed albedo on auxiliary pixels.
        s.shading = Image(1, n, n);
        const std::size_t plane = s.shading.plane_size();
        for (std::size_t p = 0; p < plane; ++p) {
            if (s.body_mask.data[p] != 0.0) s.shading.data[p] = s.gray.data[p] / kGrayLevel;
            else if (s.mask.data[p] != 0.0) s.shading.data[p] = s.ref.data[p] / kAuxiliaryAlbedo[0];
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace taco::scene
