#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "taco/image.hpp"

namespace taco::io {

/// Dense float tensor as stored on disk. Values are f32 on disk and widened
/// to double in memory.
struct Tensor {
    std::vector<std::uint32_t> shape;
    std::vector<double> values;

    [[nodiscard]] std::size_t element_count() const;
};

// "TNSR": magic, u8 version (1), u8 rank, rank x u32 dims, little-endian f32
// payload in row-major order.
void write_tensor(std::ostream& out, std::span<const std::uint32_t> shape, std::span<const double> values);
Tensor read_tensor(std::istream& in);
void write_tensor_file(const std::filesystem::path& path, std::span<const std::uint32_t> shape,
                       std::span<const double> values);
Tensor read_tensor_file(const std::filesystem::path& path);

/// Images are stored as rank-3 [channels, height, width] tensors.
void write_image_tensor(const std::filesystem::path& path, const Image& image);
Image read_image_tensor(const std::filesystem::path& path);

/// Binary P6 PPM, values clamped to [0,1] and quantized to 8 bits.
/// Single-channel images are written as gray.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

/// A named tensor inside a bundle.
struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Bundle: magic "TBDL", u32 header length, JSON header
// {"kind", "meta", "tensors": [{"name", "shape"}]}, then one TNSR record per
// tensor in header order.
void write_bundle(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& meta,
                  std::span<const NamedTensor> tensors);

struct Bundle {
    std::string kind;
    nlohmann::json meta;
    std::vector<NamedTensor> tensors;

    [[nodiscard]] const Tensor& get(const std::string& name) const;
};
Bundle read_bundle(const std::filesystem::path& path);

// Little-endian primitive helpers shared by the binary formats.
void write_u32(std::ostream& out, std::uint32_t v);
void write_f32(std::ostream& out, float v);
std::uint32_t read_u32(std::istream& in);
float read_f32(std::istream& in);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace taco::io
