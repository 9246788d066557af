#include "taco/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace taco::io {

namespace {

constexpr std::array<char, 4> kTensorMagic{'T', 'N', 'S', 'R'};
constexpr std::array<char, 4> kBundleMagic{'T', 'B', 'D', 'L'};
constexpr std::uint8_t kTensorVersion = 1;

void expect(std::istream& in, const char* what) {
    if (!in) throw FormatError(std::string("truncated or unreadable ") + what);
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open for reading: " + path.string());
    return in;
}

}  // namespace

std::size_t Tensor::element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b.data(), 4);
}

void write_f32(std::ostream& out, float v) { write_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t read_u32(std::istream& in) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    expect(in, "u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

void write_tensor(std::ostream& out, std::span<const std::uint32_t> shape, std::span<const double> values) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != values.size()) throw ShapeError("tensor payload does not match its shape");
    if (shape.size() > 255) throw ShapeError("tensor rank exceeds 255");
    out.write(kTensorMagic.data(), 4);
    out.put(static_cast<char>(kTensorVersion));
    out.put(static_cast<char>(shape.size()));
    for (auto d : shape) write_u32(out, d);
    for (double v : values) write_f32(out, static_cast<float>(v));
    if (!out) throw FormatError("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    expect(in, "tensor header");
    if (magic != kTensorMagic) throw FormatError("bad tensor magic");
    const int version = in.get();
    const int rank = in.get();
    expect(in, "tensor header");
    if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
    Tensor t;
    t.shape.resize(static_cast<std::size_t>(rank));
    for (auto& d : t.shape) d = read_u32(in);
    t.values.resize(t.element_count());
    for (auto& v : t.values) v = read_f32(in);
    return t;
}

void write_tensor_file(const std::filesystem::path& path, std::span<const std::uint32_t> shape,
                       std::span<const double> values) {
    auto out = open_out(path);
    write_tensor(out, shape, values);
}

Tensor read_tensor_file(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_tensor(in);
}

void write_image_tensor(const std::filesystem::path& path, const Image& image) {
    const std::array<std::uint32_t, 3> shape{static_cast<std::uint32_t>(image.channels),
                                             static_cast<std::uint32_t>(image.height),
                                             static_cast<std::uint32_t>(image.width)};
    write_tensor_file(path, shape, image.data);
}

Image read_image_tensor(const std::filesystem::path& path) {
    Tensor t = read_tensor_file(path);
    if (t.shape.size() != 3) throw FormatError("expected rank-3 image tensor in " + path.string());
    Image img(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2]));
    img.data = std::move(t.values);
    return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ShapeError("PPM needs 1 or 3 channels");
    auto out = open_out(path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * 3);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = image.at(image.channels == 3 ? c : 0, y, x);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

Image read_ppm(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    expect(in, "PPM header");
    if (magic != "P6" || maxval != 255) throw FormatError("only 8-bit P6 PPM is supported");
    Image img(3, h, w);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        expect(in, "PPM payload");
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
    }
    return img;
}

void write_bundle(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& meta,
                  std::span<const NamedTensor> tensors) {
    nlohmann::json header;
    header["kind"] = kind;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    for (const auto& t : tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape}});
    const std::string text = header.dump();
    auto out = open_out(path);
    out.write(kBundleMagic.data(), 4);
    write_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tensors) write_tensor(out, t.tensor.shape, t.tensor.values);
    if (!out) throw FormatError("bundle write failed: " + path.string());
}

const Tensor& Bundle::get(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.tensor;
    throw FormatError("bundle has no tensor named '" + name + "'");
}

Bundle read_bundle(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    expect(in, "bundle header");
    if (magic != kBundleMagic) throw FormatError("bad bundle magic in " + path.string());
    const std::uint32_t len = read_u32(in);
    std::string text(len, '\0');
    in.read(text.data(), len);
    expect(in, "bundle header");
    const auto header = nlohmann::json::parse(text);
    Bundle b;
    b.kind = header.at("kind").get<std::string>();
    b.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        NamedTensor nt{entry.at("name").get<std::string>(), read_tensor(in)};
        if (nt.tensor.shape != entry.at("shape").get<std::vector<std::uint32_t>>())
            throw FormatError("bundle tensor '" + nt.name + "' shape disagrees with header");
        b.tensors.push_back(std::move(nt));
    }
    return b;
}

std::string read_text_file(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
}

}  // namespace taco::io
