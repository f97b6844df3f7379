#include "vpkit/geometry.hpp"

#include "vpkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace vpkit {

namespace {

bool in_unit(double v) { return v >= 0.0 && v <= 1.0 && std::isfinite(v); }

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_image(ImageSize size) {
    if (size.width <= 0 || size.height <= 0)
        fail(ErrorCode::BadImage, "image size must be positive, got " + std::to_string(size.width) + "x" +
                                      std::to_string(size.height));
}

void check_pixel(double x, double y, ImageSize size) {
    if (!(x >= 0.0 && x <= size.width && y >= 0.0 && y <= size.height))
        fail(ErrorCode::OutOfBounds, "pixel coordinate (" + std::to_string(x) + "," + std::to_string(y) +
                                         ") outside " + std::to_string(size.width) + "x" +
                                         std::to_string(size.height) + " image");
}

} // namespace

PromptKind kind_of(const VisualPrompt& p) {
    return std::visit(overloaded{[](const PointPrompt&) { return PromptKind::Point; },
                                 [](const BoxPrompt&) { return PromptKind::Box; },
                                 [](const FreeFormPrompt&) { return PromptKind::FreeForm; }},
                      p);
}

const char* to_string(PromptKind k) {
    switch (k) {
    case PromptKind::Point:
        return "point";
    case PromptKind::Box:
        return "box";
    case PromptKind::FreeForm:
        return "freeform";
    }
    return "?";
}

PromptKind prompt_kind_from_string(std::string_view s) {
    if (s == "point")
        return PromptKind::Point;
    if (s == "box")
        return PromptKind::Box;
    if (s == "freeform")
        return PromptKind::FreeForm;
    fail(ErrorCode::InvalidArgument, "unknown prompt kind '" + std::string(s) + "'");
}

void validate(const PointPrompt& p) {
    if (!in_unit(p.x) || !in_unit(p.y))
        fail(ErrorCode::OutOfBounds, "point outside [0,1]");
}

void validate(const BoxPrompt& b) {
    if (!in_unit(b.x1) || !in_unit(b.y1) || !in_unit(b.x2) || !in_unit(b.y2))
        fail(ErrorCode::OutOfBounds, "box corner outside [0,1]");
    if (!(b.x1 < b.x2) || !(b.y1 < b.y2))
        fail(ErrorCode::Degenerate, "box corners not ordered (x1<x2, y1<y2)");
}

void validate(const FreeFormPrompt& f) {
    if (f.vertices.size() < 3)
        fail(ErrorCode::Degenerate, "free-form prompt needs at least 3 vertices");
    for (const auto& v : f.vertices)
        if (!in_unit(v.x) || !in_unit(v.y))
            fail(ErrorCode::OutOfBounds, "free-form vertex outside [0,1]");
}

void validate(const VisualPrompt& p) {
    std::visit([](const auto& v) { validate(v); }, p);
}

VisualPrompt normalize(const PixelPrompt& raw, ImageSize size) {
    check_image(size);
    const double w = size.width;
    const double h = size.height;
    return std::visit(
        overloaded{[&](const PixelPoint& p) -> VisualPrompt {
                       check_pixel(p.x, p.y, size);
                       return PointPrompt{p.x / w, p.y / h};
                   },
                   [&](const PixelBox& b) -> VisualPrompt {
                       check_pixel(b.x1, b.y1, size);
                       check_pixel(b.x2, b.y2, size);
                       BoxPrompt out{b.x1 / w, b.y1 / h, b.x2 / w, b.y2 / h};
                       validate(out);
                       return out;
                   },
                   [&](const PixelPolygon& poly) -> VisualPrompt {
                       FreeFormPrompt out;
                       out.vertices.reserve(poly.vertices.size());
                       for (const auto& v : poly.vertices) {
                           check_pixel(v.x, v.y, size);
                           out.vertices.push_back({v.x / w, v.y / h});
                       }
                       validate(out);
                       return out;
                   }},
        raw);
}

PixelPrompt denormalize(const VisualPrompt& p, ImageSize size) {
    check_image(size);
    const double w = size.width;
    const double h = size.height;
    return std::visit(overloaded{[&](const PointPrompt& q) -> PixelPrompt {
                                     return PixelPoint{std::round(q.x * w), std::round(q.y * h)};
                                 },
                                 [&](const BoxPrompt& b) -> PixelPrompt {
                                     return PixelBox{std::round(b.x1 * w), std::round(b.y1 * h),
                                                     std::round(b.x2 * w), std::round(b.y2 * h)};
                                 },
                                 [&](const FreeFormPrompt& f) -> PixelPrompt {
                                     PixelPolygon out;
                                     for (const auto& v : f.vertices)
                                         out.vertices.push_back({std::round(v.x * w), std::round(v.y * h)});
                                     return out;
                                 }},
                      p);
}

BoxPrompt enclosing_box(const FreeFormPrompt& p) {
    validate(p);
    BoxPrompt b{1.0, 1.0, 0.0, 0.0};
    for (const auto& v : p.vertices) {
        b.x1 = std::min(b.x1, v.x);
        b.y1 = std::min(b.y1, v.y);
        b.x2 = std::max(b.x2, v.x);
        b.y2 = std::max(b.y2, v.y);
    }
    if (!(b.x1 < b.x2) || !(b.y1 < b.y2))
        fail(ErrorCode::Degenerate, "free-form prompt has a zero-area bounding rectangle");
    return b;
}

VisualPrompt reduce_for_encoder(const VisualPrompt& p) {
    if (const auto* f = std::get_if<FreeFormPrompt>(&p))
        return enclosing_box(*f);
    validate(p);
    return p;
}

double box_iou(const BoxPrompt& a, const BoxPrompt& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0)
        return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
    if (width < 0 || height < 0)
        fail(ErrorCode::InvalidArgument, "negative mask dimension");
    bits_.assign(static_cast<std::size_t>(width) * height, 0);
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& other) {
    if (other.width_ != width_ || other.height_ != height_)
        fail(ErrorCode::InvalidArgument, "mask size mismatch in union");
    for (std::size_t i = 0; i < bits_.size(); ++i)
        bits_[i] |= other.bits_[i];
    return *this;
}

BinaryMask decode_rle(std::span<const std::uint32_t> counts, int height, int width) {
    if (height < 0 || width < 0)
        fail(ErrorCode::MalformedRle, "negative RLE size");
    const std::uint64_t total = static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
    const std::uint64_t sum = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
    if (sum != total)
        fail(ErrorCode::MalformedRle,
             "run lengths sum to " + std::to_string(sum) + ", expected " + std::to_string(total));

    BinaryMask mask(width, height);
    std::uint64_t pos = 0;
    bool fg = false;
    for (auto run : counts) {
        if (fg) {
            for (std::uint64_t i = pos; i < pos + run; ++i) {
                // column-major: index = x * height + y
                mask.set(static_cast<int>(i / height), static_cast<int>(i % height));
            }
        }
        pos += run;
        fg = !fg;
    }
    return mask;
}

std::vector<std::uint32_t> encode_rle(const BinaryMask& mask) {
    std::vector<std::uint32_t> counts;
    bool current = false;
    std::uint32_t run = 0;
    for (int x = 0; x < mask.width(); ++x) {
        for (int y = 0; y < mask.height(); ++y) {
            if (mask.at(x, y) != current) {
                counts.push_back(run);
                run = 0;
                current = !current;
            }
            ++run;
        }
    }
    if (run > 0 || counts.empty())
        counts.push_back(run);
    return counts;
}

BinaryMask rasterize_polygon(std::span<const Point2> vertices, int width, int height) {
    BinaryMask mask(width, height);
    const std::size_t n = vertices.size();
    if (n < 3)
        return mask;
    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
        const double yc = y + 0.5;
        xs.clear();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Point2& a = vertices[i];
            const Point2& b = vertices[j];
            if ((a.y > yc) != (b.y > yc))
                xs.push_back((b.x - a.x) * (yc - a.y) / (b.y - a.y) + a.x);
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            // Pixel centers in [xs[k], xs[k+1]).
            const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            const int x1 = std::min(width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
            for (int x = x0; x < x1; ++x)
                mask.set(x, y);
        }
    }
    return mask;
}

BoxPrompt mask_bounding_box(const BinaryMask& mask) {
    int min_x = mask.width(), min_y = mask.height(), max_x = -1, max_y = -1;
    for (int y = 0; y < mask.height(); ++y) {
        const auto r = mask.row(y);
        for (int x = 0; x < mask.width(); ++x) {
            if (r[x]) {
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
            }
        }
    }
    if (max_x < 0)
        fail(ErrorCode::EmptyMask, "mask has no set pixel");
    const double w = mask.width();
    const double h = mask.height();
    return BoxPrompt{min_x / w, min_y / h, (max_x + 1) / w, (max_y + 1) / h};
}

PointPrompt pixel_center(int x, int y, ImageSize size) {
    check_image(size);
    return PointPrompt{(x + 0.5) / size.width, (y + 0.5) / size.height};
}

bool point_in_polygon(Point2 p, std::span<const Point2> vertices) {
    bool inside = false;
    const std::size_t n = vertices.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point2& a = vertices[i];
        const Point2& b = vertices[j];
        if (((a.y > p.y) != (b.y > p.y)) && (p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x))
            inside = !inside;
    }
    return inside;
}

} // namespace vpkit
