#include "vpkit/error.hpp"
#include "vpkit/geometry.hpp"

#include <gtest/gtest.h>

using namespace vpkit;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::InvalidArgument;
}

} // namespace

TEST(Normalize, PointAndBox) {
    auto p = std::get<PointPrompt>(normalize(PixelPoint{50, 25}, {100, 100}));
    EXPECT_DOUBLE_EQ(p.x, 0.5);
    EXPECT_DOUBLE_EQ(p.y, 0.25);
    auto b = std::get<BoxPrompt>(normalize(PixelBox{0, 0, 100, 100}, {100, 100}));
    EXPECT_EQ(b, (BoxPrompt{0, 0, 1, 1}));
}

TEST(Normalize, Errors) {
    EXPECT_EQ(code_of([] { normalize(PixelPoint{101, 10}, {100, 100}); }), ErrorCode::OutOfBounds);
    EXPECT_EQ(code_of([] { normalize(PixelPoint{1, 1}, {0, 100}); }), ErrorCode::BadImage);
}

TEST(Normalize, DenormalizeWithinOnePixel) {
    const ImageSize size{37, 53};
    for (int x = 0; x <= 37; x += 3) {
        for (int y = 0; y <= 53; y += 5) {
            auto back = std::get<PixelPoint>(denormalize(normalize(PixelPoint{x + 0.3, y * 1.0}, size), size));
            EXPECT_LE(std::abs(back.x - (x + 0.3)), 1.0);
            EXPECT_LE(std::abs(back.y - y), 1.0);
        }
    }
}

TEST(EnclosingBox, Triangle) {
    FreeFormPrompt tri{{{0.1, 0.1}, {0.5, 0.2}, {0.3, 0.6}}};
    EXPECT_EQ(enclosing_box(tri), (BoxPrompt{0.1, 0.1, 0.5, 0.6}));
}

TEST(EnclosingBox, RectangleIsFixedPoint) {
    FreeFormPrompt rect{{{0.2, 0.3}, {0.7, 0.3}, {0.7, 0.9}, {0.2, 0.9}}};
    EXPECT_EQ(enclosing_box(rect), (BoxPrompt{0.2, 0.3, 0.7, 0.9}));
}

TEST(EnclosingBox, CollinearAcceptedVerticalRejected) {
    FreeFormPrompt diag{{{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}}};
    EXPECT_EQ(enclosing_box(diag), (BoxPrompt{0.1, 0.1, 0.3, 0.3}));
    FreeFormPrompt vertical{{{0.4, 0.1}, {0.4, 0.2}, {0.4, 0.3}}};
    EXPECT_EQ(code_of([&] { enclosing_box(vertical); }), ErrorCode::Degenerate);
}

TEST(EnclosingBox, Minimality) {
    FreeFormPrompt poly{{{0.15, 0.4}, {0.35, 0.05}, {0.8, 0.3}, {0.6, 0.95}}};
    const auto b = enclosing_box(poly);
    for (const auto& v : poly.vertices) {
        EXPECT_TRUE(v.x >= b.x1 && v.x <= b.x2 && v.y >= b.y1 && v.y <= b.y2);
    }
    const double eps = 1e-9;
    auto excluded = [&](auto pred) {
        return std::any_of(poly.vertices.begin(), poly.vertices.end(), pred);
    };
    EXPECT_TRUE(excluded([&](const Point2& v) { return v.x < b.x1 + eps; }));
    EXPECT_TRUE(excluded([&](const Point2& v) { return v.x > b.x2 - eps; }));
    EXPECT_TRUE(excluded([&](const Point2& v) { return v.y < b.y1 + eps; }));
    EXPECT_TRUE(excluded([&](const Point2& v) { return v.y > b.y2 - eps; }));
}

TEST(BoxIou, Cases) {
    BoxPrompt a{0, 0, 0.5, 0.5}, b{0.25, 0.25, 0.75, 0.75}, c{0.6, 0.6, 0.9, 0.9};
    EXPECT_DOUBLE_EQ(box_iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(box_iou(a, c), 0.0);
    EXPECT_NEAR(box_iou(a, b), 0.0625 / 0.4375, 1e-12);
    EXPECT_DOUBLE_EQ(box_iou(a, b), box_iou(b, a));
}

TEST(Rle, DecodeExamples) {
    const std::vector<std::uint32_t> counts{4, 3, 2};
    auto m = decode_rle(counts, 3, 3);
    EXPECT_EQ(m.count(), 3u);
    // column-major: indices 4,5,6 -> (x=1,y=1), (x=1,y=2), (x=2,y=0)
    EXPECT_TRUE(m.at(1, 1));
    EXPECT_TRUE(m.at(1, 2));
    EXPECT_TRUE(m.at(2, 0));
    EXPECT_FALSE(m.at(0, 0));

    const std::vector<std::uint32_t> zeros{9};
    EXPECT_EQ(decode_rle(zeros, 3, 3).count(), 0u);
    const std::vector<std::uint32_t> ones{0, 9};
    EXPECT_EQ(decode_rle(ones, 3, 3).count(), 9u);
}

TEST(Rle, SumMismatch) {
    const std::vector<std::uint32_t> counts{4, 3};
    EXPECT_EQ(code_of([&] { decode_rle(counts, 3, 3); }), ErrorCode::MalformedRle);
}

TEST(Rle, RoundTrip) {
    for (const auto& counts : std::vector<std::vector<std::uint32_t>>{{4, 3, 2}, {9}, {0, 9}, {0, 1, 1, 1, 6}, {2, 5, 2}}) {
        EXPECT_EQ(encode_rle(decode_rle(counts, 3, 3)), counts);
    }
}

TEST(Rasterize, LeftHalfSquare) {
    std::vector<Point2> square{{0, 0}, {5, 0}, {5, 10}, {0, 10}};
    auto m = rasterize_polygon(square, 10, 10);
    EXPECT_EQ(m.count(), 50u);
    EXPECT_EQ(mask_bounding_box(m), (BoxPrompt{0, 0, 0.5, 1}));
}

TEST(Rasterize, MatchesPointInPolygonAtCenters) {
    std::vector<Point2> poly{{1.2, 0.7}, {17.5, 3.1}, {9.9, 8.4}, {14.2, 15.8}, {2.6, 12.3}};
    auto m = rasterize_polygon(poly, 20, 18);
    for (int y = 0; y < 18; ++y)
        for (int x = 0; x < 20; ++x)
            EXPECT_EQ(m.at(x, y), point_in_polygon({x + 0.5, y + 0.5}, poly)) << x << "," << y;
}

TEST(MaskBox, EmptyMask) {
    BinaryMask m(4, 4);
    EXPECT_EQ(code_of([&] { mask_bounding_box(m); }), ErrorCode::EmptyMask);
}

TEST(Validate, Prompts) {
    EXPECT_EQ(code_of([] { validate(BoxPrompt{0.5, 0.1, 0.4, 0.3}); }), ErrorCode::Degenerate);
    EXPECT_EQ(code_of([] { validate(PointPrompt{1.1, 0.0}); }), ErrorCode::OutOfBounds);
    EXPECT_EQ(code_of([] { validate(FreeFormPrompt{{{0, 0}, {1, 1}}}); }), ErrorCode::Degenerate);
}
