#include "vpkit/augment.hpp"

#include "vpkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vpkit {

std::uint64_t DeterministicRng::next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double DeterministicRng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double DeterministicRng::gaussian() {
    const double u1 = 1.0 - uniform(); // (0,1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t DeterministicRng::index(std::size_t n) {
    if (n == 0)
        fail(ErrorCode::InvalidArgument, "index() over an empty range");
    const auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return std::min(i, n - 1);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    DeterministicRng rng(base ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xD1B54A32D192ED03ULL));
    return rng.next();
}

void validate(const AugmentConfig& cfg) {
    if (!(cfg.sigma_scale >= 0.0) || !std::isfinite(cfg.sigma_scale))
        fail(ErrorCode::InvalidArgument, "sigma_scale must be >= 0");
    if (!(cfg.min_box_side > 0.0 && cfg.min_box_side < 1.0))
        fail(ErrorCode::InvalidArgument, "min_box_side must lie in (0,1)");
}

namespace {

// Clamp [lo,hi] into [0,1] while keeping at least min_side of extent.
void clamp_span(double& lo, double& hi, double min_side) {
    lo = std::clamp(lo, 0.0, 1.0);
    hi = std::clamp(hi, 0.0, 1.0);
    if (hi - lo < min_side) {
        if (lo + min_side <= 1.0) {
            hi = lo + min_side;
        } else {
            lo = 1.0 - min_side;
            hi = 1.0;
        }
    }
}

} // namespace

BoxPrompt jitter_box(const BoxPrompt& box, const AugmentConfig& cfg, std::uint64_t seed) {
    validate(box);
    validate(cfg);
    DeterministicRng rng(seed);
    const double w = box.width();
    const double h = box.height();
    const double s = cfg.sigma_scale;

    const double dx = rng.gaussian() * s * w;
    const double dy = rng.gaussian() * s * h;
    const double new_w = std::max(w * (1.0 + s * rng.gaussian()), cfg.min_box_side);
    const double new_h = std::max(h * (1.0 + s * rng.gaussian()), cfg.min_box_side);

    // Expressed relative to the original corners so that zero noise is exact.
    BoxPrompt out{box.x1 + dx - (new_w - w) / 2.0, box.y1 + dy - (new_h - h) / 2.0,
                  box.x2 + dx + (new_w - w) / 2.0, box.y2 + dy + (new_h - h) / 2.0};
    clamp_span(out.x1, out.x2, cfg.min_box_side);
    clamp_span(out.y1, out.y2, cfg.min_box_side);
    return out;
}

std::vector<PointPrompt> sample_mask_points(const BinaryMask& mask, std::size_t k, std::uint64_t seed) {
    if (k == 0)
        fail(ErrorCode::InvalidArgument, "k must be >= 1");
    std::vector<std::size_t> on;
    for (int y = 0; y < mask.height(); ++y) {
        const auto r = mask.row(y);
        for (int x = 0; x < mask.width(); ++x)
            if (r[x])
                on.push_back(static_cast<std::size_t>(y) * mask.width() + x);
    }
    if (on.empty())
        fail(ErrorCode::EmptyMask, "cannot sample points from an empty mask");

    const ImageSize size{mask.width(), mask.height()};
    DeterministicRng rng(seed);
    std::vector<PointPrompt> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t p = on[rng.index(on.size())];
        out.push_back(pixel_center(static_cast<int>(p % mask.width()), static_cast<int>(p / mask.width()), size));
    }
    return out;
}

std::vector<LabelledPoint> sample_labelled_pixels(const LabelMap& map, std::size_t k, std::uint64_t seed,
                                                  std::span<const std::uint32_t> ignore) {
    if (map.width <= 0 || map.height <= 0 ||
        map.ids.size() != static_cast<std::size_t>(map.width) * map.height)
        fail(ErrorCode::InvalidArgument, "label map is empty or its size does not match its raster");
    if (k == 0)
        fail(ErrorCode::InvalidArgument, "k must be >= 1");

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < map.ids.size(); ++i)
        if (std::find(ignore.begin(), ignore.end(), map.ids[i]) == ignore.end())
            candidates.push_back(i);
    if (candidates.empty())
        fail(ErrorCode::NoSampleablePixels, "every pixel carries an ignored label");

    const ImageSize size{map.width, map.height};
    DeterministicRng rng(seed);
    std::vector<LabelledPoint> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t p = candidates[rng.index(candidates.size())];
        out.push_back({pixel_center(static_cast<int>(p % map.width), static_cast<int>(p / map.width), size),
                       map.ids[p]});
    }
    return out;
}

} // namespace vpkit
