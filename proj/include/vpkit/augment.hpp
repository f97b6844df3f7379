#pragma once

#include "vpkit/geometry.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vpkit {

/// SplitMix64 stream with a fully pinned derivation so that golden values
/// reproduce in any language:
///
///   next():     state += 0x9E3779B97F4A7C15; z = state;
///               z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
///               z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
///               return z ^ (z >> 31)
///   uniform():  (next() >> 11) * 2^-53                      in [0,1)
///   gaussian(): u1 = 1 - uniform(); u2 = uniform();
///               sqrt(-2 ln u1) * cos(2 pi u2)               (two draws, no caching)
///   index(n):   min(n-1, floor(uniform() * n))
class DeterministicRng {
  public:
    explicit DeterministicRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next();
    double uniform();
    double gaussian();
    std::size_t index(std::size_t n);

  private:
    std::uint64_t state_;
};

/// Stable per-item seed: one SplitMix64 step over base ^ (a * golden) ^ b.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

struct AugmentConfig {
    double sigma_scale = 0.1;  // noise scale relative to box width/height
    double min_box_side = 0.01; // normalized floor on jittered sides
};

void validate(const AugmentConfig& cfg);

/// Draw order is fixed: dx, dy, dw, dh.
///   center  += (N(0,(sigma w)^2), N(0,(sigma h)^2))
///   size    *= (1 + N(0,sigma^2)) per axis, floored at min_box_side
/// then clamped into [0,1] keeping at least min_box_side per side.
BoxPrompt jitter_box(const BoxPrompt& box, const AugmentConfig& cfg, std::uint64_t seed);

/// Uniform sampling with replacement over the set pixels; returns pixel centers.
std::vector<PointPrompt> sample_mask_points(const BinaryMask& mask, std::size_t k, std::uint64_t seed);

/// Per-pixel category raster; ids index into `names`.
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> ids; // row-major
    std::vector<std::string> names;

    std::uint32_t at(int x, int y) const { return ids[static_cast<std::size_t>(y) * width + x]; }
};

struct LabelledPoint {
    PointPrompt point;
    std::uint32_t label = 0;
};

std::vector<LabelledPoint> sample_labelled_pixels(const LabelMap& map, std::size_t k, std::uint64_t seed,
                                                  std::span<const std::uint32_t> ignore = {});

} // namespace vpkit
