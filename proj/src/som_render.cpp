#include "vpkit/som_render.hpp"

#include "json_io.hpp"
#include "vpkit/error.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>

namespace vpkit {

namespace {

// 5x7 digit glyphs, one row per entry, bit 4 is the leftmost column.
constexpr std::array<std::array<std::uint8_t, 7>, 10> kDigits{{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},
}};

constexpr Rgb kChipBackground{0, 0, 0};
constexpr Rgb kChipDigit{255, 255, 255};

struct Canvas {
    RgbImage image;
    BinaryMask footprint;

    explicit Canvas(const RgbImage& src) : image(src), footprint(src.width, src.height) {}

    void paint(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= image.width || y >= image.height)
            return;
        image.set(x, y, c);
        footprint.set(x, y);
    }
};

void check_image(const RgbImage& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        fail(ErrorCode::BadImage, "image raster is empty or inconsistent");
}

PixelRect box_rect(const BoxPrompt& b, int W, int H) {
    PixelRect r{static_cast<int>(std::lround(b.x1 * W)), static_cast<int>(std::lround(b.y1 * H)),
                static_cast<int>(std::lround(b.x2 * W)), static_cast<int>(std::lround(b.y2 * H))};
    auto fix = [](int& lo, int& hi, int limit) {
        lo = std::clamp(lo, 0, limit - 1);
        hi = std::clamp(hi, lo + 1, limit);
    };
    fix(r.x0, r.x1, W);
    fix(r.y0, r.y1, H);
    return r;
}

void draw_box_outline(Canvas& c, const PixelRect& r, Rgb color, int width) {
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            if (x < r.x0 + width || x >= r.x1 - width || y < r.y0 + width || y >= r.y1 - width)
                c.paint(x, y, color);
}

bool in_dot(int x, int y, double cx, double cy, int radius) {
    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
    return dx * dx + dy * dy <= static_cast<double>(radius) * radius;
}

void draw_dot(Canvas& c, double cx, double cy, Rgb color, int radius) {
    for (int y = static_cast<int>(std::floor(cy)) - radius - 1; y <= static_cast<int>(cy) + radius + 1; ++y)
        for (int x = static_cast<int>(std::floor(cx)) - radius - 1; x <= static_cast<int>(cx) + radius + 1; ++x)
            if (in_dot(x, y, cx, cy, radius))
                c.paint(x, y, color);
}

double segment_distance(double px, double py, Point2 a, Point2 b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

void draw_polygon_outline(Canvas& c, const std::vector<Point2>& pts, Rgb color, int width) {
    const double half = width / 2.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Point2 a = pts[i], b = pts[(i + 1) % pts.size()];
        const int x0 = static_cast<int>(std::floor(std::min(a.x, b.x) - half)) - 1;
        const int x1 = static_cast<int>(std::ceil(std::max(a.x, b.x) + half)) + 1;
        const int y0 = static_cast<int>(std::floor(std::min(a.y, b.y) - half)) - 1;
        const int y1 = static_cast<int>(std::ceil(std::max(a.y, b.y) + half)) + 1;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (segment_distance(x + 0.5, y + 0.5, a, b) <= half)
                    c.paint(x, y, color);
    }
}

PixelRect place_chip(int id, int anchor_x, int anchor_y, int scale, int W, int H) {
    const int w = chip_width(id, scale), h = chip_height(scale);
    if (w > W || h > H)
        fail(ErrorCode::ImageTooSmall, "a " + std::to_string(w) + "x" + std::to_string(h) + " id chip does not fit a " +
                                           std::to_string(W) + "x" + std::to_string(H) + " image");
    const int x0 = std::clamp(anchor_x, 0, W - w);
    const int y0 = std::clamp(anchor_y, 0, H - h);
    return {x0, y0, x0 + w, y0 + h};
}

void draw_chip(Canvas& c, const PixelRect& r, int id, int scale) {
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            c.paint(x, y, kChipBackground);
    const std::string digits = std::to_string(id);
    int gx = r.x0 + scale;
    for (const char ch : digits) {
        const auto& glyph = kDigits[static_cast<std::size_t>(ch - '0')];
        for (int row = 0; row < 7; ++row)
            for (int col = 0; col < 5; ++col)
                if (glyph[row] & (0x10 >> col))
                    for (int sy = 0; sy < scale; ++sy)
                        for (int sx = 0; sx < scale; ++sx)
                            c.paint(gx + col * scale + sx, r.y0 + scale + row * scale + sy, kChipDigit);
        gx += 6 * scale;
    }
}

RenderedOverlay finish(Canvas&& c, std::vector<PixelRect> chips) {
    RenderedOverlay out;
    out.png = encode_png(c.image);
    out.hash = sha256_hex(out.png);
    out.image = std::move(c.image);
    out.footprint = std::move(c.footprint);
    out.chips = std::move(chips);
    return out;
}

} // namespace

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h) {
    if (w < 0 || h < 0)
        fail(ErrorCode::BadImage, "negative image size");
    pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
        pixels[i] = fill.r;
        pixels[i + 1] = fill.g;
        pixels[i + 2] = fill.b;
    }
}

Rgb RgbImage::at(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void RgbImage::set(int x, int y, Rgb c) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    pixels[i] = c.r;
    pixels[i + 1] = c.g;
    pixels[i + 2] = c.b;
}

RgbImage decode_png(std::string_view bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        fail(ErrorCode::BadImage, std::string("not a decodable PNG: ") + img.message);
    img.format = PNG_FORMAT_RGB;
    RgbImage out;
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    png_color white{255, 255, 255};
    if (!png_image_finish_read(&img, &white, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        fail(ErrorCode::BadImage, std::string("PNG decode failed: ") + img.message);
    }
    if (out.width <= 0 || out.height <= 0)
        fail(ErrorCode::BadImage, "PNG has no pixels");
    return out;
}

RgbImage load_png(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = detail::read_text_file(path);
    } catch (const Error& e) {
        fail(ErrorCode::BadImage, e.what());
    }
    return decode_png(bytes);
}

std::string encode_png(const RgbImage& image) {
    check_image(image);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(img, size, 0, image.pixels.data(), 0, nullptr))
        fail(ErrorCode::BadImage, std::string("PNG encode failed: ") + img.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr))
        fail(ErrorCode::BadImage, std::string("PNG encode failed: ") + img.message);
    out.resize(size);
    return out;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        fail(ErrorCode::IoFailure, "sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

const char* to_string(MarkShape s) {
    switch (s) {
    case MarkShape::PointDot:
        return "point-dot";
    case MarkShape::BoxOutline:
        return "box-outline";
    case MarkShape::PolygonOutline:
        return "polygon-outline";
    }
    return "?";
}

MarkStyle natural_style() { return MarkStyle{}; }

MarkStyle ocr_style() {
    MarkStyle s;
    s.shape = MarkShape::PolygonOutline;
    s.stroke = {255, 0, 0};
    return s;
}

int chip_width(int id, int scale) {
    const int n = static_cast<int>(std::to_string(id).size());
    return 2 * scale + n * 5 * scale + (n - 1) * scale;
}

int chip_height(int scale) { return 9 * scale; }

RenderedOverlay render_marks(const RgbImage& image, const VisualPromptSet& prompts, const MarkStyle& style) {
    check_image(image);
    if (style.stroke_width < 1 || style.dot_radius < 0 || style.chip_scale < 1)
        fail(ErrorCode::InvalidArgument, "stroke width and chip scale must be >= 1");
    const int W = image.width, H = image.height;
    Canvas c(image);
    std::vector<PixelRect> chips;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        validate(prompts[i]);
        PixelRect chip;
        if (const auto* p = std::get_if<PointPrompt>(&prompts[i])) {
            const double cx = p->x * W, cy = p->y * H;
            draw_dot(c, cx, cy, style.stroke, style.dot_radius);
            chip = place_chip(id, static_cast<int>(std::lround(cx)) + style.point_chip_offset,
                              static_cast<int>(std::lround(cy)) - chip_height(style.chip_scale) / 2,
                              style.chip_scale, W, H);
        } else {
            // Boxes drawn under a polygon style become their 4-corner polygon.
            std::vector<Point2> pts;
            if (const auto* f = std::get_if<FreeFormPrompt>(&prompts[i])) {
                for (const auto& v : f->vertices)
                    pts.push_back({v.x * W, v.y * H});
            } else {
                const auto& b = std::get<BoxPrompt>(prompts[i]);
                pts = {{b.x1 * W, b.y1 * H}, {b.x2 * W, b.y1 * H}, {b.x2 * W, b.y2 * H}, {b.x1 * W, b.y2 * H}};
            }
            const bool as_box = std::holds_alternative<BoxPrompt>(prompts[i]) && style.shape != MarkShape::PolygonOutline;
            if (as_box) {
                draw_box_outline(c, box_rect(std::get<BoxPrompt>(prompts[i]), W, H), style.stroke, style.stroke_width);
            } else {
                draw_polygon_outline(c, pts, style.stroke, style.stroke_width);
            }
            double min_x = pts[0].x, min_y = pts[0].y;
            for (const auto& v : pts) {
                min_x = std::min(min_x, v.x);
                min_y = std::min(min_y, v.y);
            }
            chip = place_chip(id, static_cast<int>(std::lround(min_x)), static_cast<int>(std::lround(min_y)),
                              style.chip_scale, W, H);
        }
        draw_chip(c, chip, id, style.chip_scale);
        chips.push_back(chip);
    }
    return finish(std::move(c), std::move(chips));
}

RenderedOverlay render_marks(const std::filesystem::path& image_path, const VisualPromptSet& prompts,
                             const MarkStyle& style) {
    return render_marks(load_png(image_path), prompts, style);
}

RenderedOverlay render_alpha_blend(const RgbImage& image, const VisualPromptSet& prompts, double alpha, Rgb fill,
                                   int dot_radius) {
    check_image(image);
    if (!(alpha > 0.0 && alpha <= 1.0))
        fail(ErrorCode::BadAlpha, "alpha must lie in (0,1], got " + std::to_string(alpha));
    const int W = image.width, H = image.height;
    BinaryMask region(W, H);
    for (const auto& p : prompts) {
        validate(p);
        if (const auto* pt = std::get_if<PointPrompt>(&p)) {
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (in_dot(x, y, pt->x * W, pt->y * H, dot_radius))
                        region.set(x, y);
        } else if (const auto* b = std::get_if<BoxPrompt>(&p)) {
            const auto r = box_rect(*b, W, H);
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x)
                    region.set(x, y);
        } else {
            std::vector<Point2> pts;
            for (const auto& v : std::get<FreeFormPrompt>(p).vertices)
                pts.push_back({v.x * W, v.y * H});
            region |= rasterize_polygon(pts, W, H);
        }
    }
    Canvas c(image);
    auto mix = [alpha](std::uint8_t src, std::uint8_t f) {
        const double v = (1.0 - alpha) * src + alpha * f;
        return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (region.at(x, y)) {
                const Rgb s = image.at(x, y);
                c.paint(x, y, {mix(s.r, fill.r), mix(s.g, fill.g), mix(s.b, fill.b)});
            }
    return finish(std::move(c), {});
}

} // namespace vpkit
