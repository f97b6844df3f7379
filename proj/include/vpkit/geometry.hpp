#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

namespace vpkit {

// All prompt coordinates are normalized to [0,1] by image width/height.
// Pixel space only appears at ingestion (normalize) and rendering
// (denormalize / rasterize).

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point2&, const Point2&) = default;
};

struct PointPrompt {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const PointPrompt&, const PointPrompt&) = default;
};

/// Axis-aligned box, (x1,y1) top-left and (x2,y2) bottom-right.
struct BoxPrompt {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    friend bool operator==(const BoxPrompt&, const BoxPrompt&) = default;
};

/// Closed polygon drawn by the user. Reduced to its enclosing box before it
/// reaches the encoder.
struct FreeFormPrompt {
    std::vector<Point2> vertices;
    friend bool operator==(const FreeFormPrompt&, const FreeFormPrompt&) = default;
};

using VisualPrompt = std::variant<PointPrompt, BoxPrompt, FreeFormPrompt>;
using VisualPromptSet = std::vector<VisualPrompt>;

enum class PromptKind { Point, Box, FreeForm };

PromptKind kind_of(const VisualPrompt& p);
const char* to_string(PromptKind k);
PromptKind prompt_kind_from_string(std::string_view s);

// Throw Error{OutOfBounds} / Error{Degenerate} when an invariant is violated.
void validate(const PointPrompt& p);
void validate(const BoxPrompt& b);
void validate(const FreeFormPrompt& f);
void validate(const VisualPrompt& p);

struct ImageSize {
    int width = 0;
    int height = 0;
    friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Prompt expressed in pixel coordinates, as found in source annotations.
struct PixelPoint {
    double x = 0.0;
    double y = 0.0;
};
struct PixelBox {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;
};
struct PixelPolygon {
    std::vector<Point2> vertices;
};
using PixelPrompt = std::variant<PixelPoint, PixelBox, PixelPolygon>;

/// Pixel coordinates may lie anywhere in [0,width] x [0,height].
VisualPrompt normalize(const PixelPrompt& raw, ImageSize size);
/// Inverse of normalize, rounded to whole pixels.
PixelPrompt denormalize(const VisualPrompt& p, ImageSize size);

BoxPrompt enclosing_box(const FreeFormPrompt& p);

/// Reduces any prompt to what the encoder consumes: points stay points,
/// free-form shapes become their enclosing box.
VisualPrompt reduce_for_encoder(const VisualPrompt& p);

double box_iou(const BoxPrompt& a, const BoxPrompt& b);

/// Row-addressable boolean raster.
class BinaryMask {
  public:
    BinaryMask() = default;
    BinaryMask(int width, int height);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return bits_.empty(); }

    bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int x, int y, bool v = true) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
    std::span<const std::uint8_t> row(int y) const {
        return {bits_.data() + static_cast<std::size_t>(y) * width_, static_cast<std::size_t>(width_)};
    }

    std::size_t count() const;
    BinaryMask& operator|=(const BinaryMask& other);

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

  private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Uncompressed column-major RLE, runs alternate starting with background.
BinaryMask decode_rle(std::span<const std::uint32_t> counts, int height, int width);
std::vector<std::uint32_t> encode_rle(const BinaryMask& mask);

/// Even-odd fill sampled at pixel centers; vertices are in pixel units.
BinaryMask rasterize_polygon(std::span<const Point2> vertices, int width, int height);

/// Tight normalized box around the set pixels. Throws EmptyMask when no bit is set.
BoxPrompt mask_bounding_box(const BinaryMask& mask);

/// Normalized center of pixel (x,y).
PointPrompt pixel_center(int x, int y, ImageSize size);

bool point_in_polygon(Point2 p, std::span<const Point2> vertices);

} // namespace vpkit
