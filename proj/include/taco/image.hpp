#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace taco {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or divergence during training/optimization.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

/// Backward pass requested without a matching forward pass.
class MissingCacheError : public Error {
public:
    using Error::Error;
};

/// Planar (channel, row, column) grid of doubles. Used for images, textures,
/// feature maps and per-pixel scalar fields alike.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w),
          data(static_cast<std::size_t>(c) * h * w, fill) {
        if (c < 0 || h < 0 || w < 0) throw ShapeError("negative image dimension");
    }

    [[nodiscard]] std::size_t plane_size() const {
        return static_cast<std::size_t>(height) * width;
    }
    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] bool empty() const { return data.empty(); }

    [[nodiscard]] std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height + y) * width + x;
    }
    double& at(int c, int y, int x) { return data[index(c, y, x)]; }
    [[nodiscard]] double at(int c, int y, int x) const { return data[index(c, y, x)]; }

    std::span<double> plane(int c) {
        return {data.data() + c * plane_size(), plane_size()};
    }
    [[nodiscard]] std::span<const double> plane(int c) const {
        return {data.data() + c * plane_size(), plane_size()};
    }

    [[nodiscard]] bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch (" +
                         std::to_string(a.channels) + "x" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.channels) + "x" +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
    }
}

/// Axis-aligned box in pixel units, center format.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    [[nodiscard]] double x1() const { return cx - 0.5 * w; }
    [[nodiscard]] double x2() const { return cx + 0.5 * w; }
    [[nodiscard]] double y1() const { return cy - 0.5 * h; }
    [[nodiscard]] double y2() const { return cy + 0.5 * h; }
    [[nodiscard]] double area() const { return w * h; }

    static Box from_corners(double x1, double y1, double x2, double y2) {
        return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
    }
};

/// Inclusive-exclusive integer pixel window.
struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    [[nodiscard]] int width() const { return x1 - x0; }
    [[nodiscard]] int height() const { return y1 - y0; }
    [[nodiscard]] bool empty() const { return x1 <= x0 || y1 <= y0; }
};

}  // namespace taco
