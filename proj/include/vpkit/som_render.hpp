#pragma once

#include "vpkit/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vpkit {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int w, int h, Rgb fill = {});

    Rgb at(int x, int y) const;
    void set(int x, int y, Rgb c);
    ImageSize size() const { return {width, height}; }
    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Any PNG libpng understands, converted to 8-bit RGB (alpha dropped). Throws BadImage.
RgbImage decode_png(std::string_view bytes);
RgbImage load_png(const std::filesystem::path& path);
/// Deterministic encoding: fixed filter/compression settings, no time chunk.
std::string encode_png(const RgbImage& image);

std::string sha256_hex(std::string_view bytes);

enum class MarkShape { PointDot, BoxOutline, PolygonOutline };

const char* to_string(MarkShape s);

struct MarkStyle {
    MarkShape shape = MarkShape::BoxOutline; // points always render as dots
    Rgb stroke{0, 255, 0};
    int stroke_width = 2;
    int dot_radius = 4;
    int chip_scale = 2;      // 5x7 font magnification
    int point_chip_offset = 6; // chip sits this many px right of a point
};

MarkStyle natural_style();
MarkStyle ocr_style(); // red polygon outlines

/// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

struct RenderedOverlay {
    std::string png;
    std::string hash; // sha256 of png, hex
    RgbImage image;
    std::vector<PixelRect> chips; // chips[k-1] is mark k
    BinaryMask footprint;         // every pixel the renderer wrote
};

/// Pixel extent of the id chip for mark number `id`.
int chip_width(int id, int scale);
int chip_height(int scale);

/// Mark k = prompts[k-1]. Chips anchor at the mark's top-left (points: to the
/// right of the dot) and are shifted inward to stay inside the image.
/// Throws ImageTooSmall when a chip is larger than the image.
RenderedOverlay render_marks(const RgbImage& image, const VisualPromptSet& prompts, const MarkStyle& style = {});
RenderedOverlay render_marks(const std::filesystem::path& image_path, const VisualPromptSet& prompts,
                             const MarkStyle& style = {});

/// Fills the union of the prompt regions with `fill` at opacity alpha in (0,1].
/// Throws BadAlpha.
RenderedOverlay render_alpha_blend(const RgbImage& image, const VisualPromptSet& prompts, double alpha = 0.5,
                                   Rgb fill = {0, 255, 0}, int dot_radius = 4);

} // namespace vpkit
