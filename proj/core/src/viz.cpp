#include "depthfill/viz.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace depthfill {

namespace {

// Compact blue-cyan-yellow-red ramp.
void ramp(float t, std::uint8_t* rgb) {
    t = std::clamp(t, 0.0f, 1.0f);
    const float r = std::clamp(1.5f - std::abs(2.0f * t - 1.5f), 0.0f, 1.0f);
    const float g = std::clamp(1.5f - std::abs(2.0f * t - 1.0f), 0.0f, 1.0f);
    const float b = std::clamp(1.5f - std::abs(2.0f * t - 0.5f), 0.0f, 1.0f);
    rgb[0] = static_cast<std::uint8_t>(std::lround(255.0f * r));
    rgb[1] = static_cast<std::uint8_t>(std::lround(255.0f * g));
    rgb[2] = static_cast<std::uint8_t>(std::lround(255.0f * b));
}

}  // namespace

ImageRGB colorize_depth(const DepthMap& depth, float min_m, float max_m) {
    if (!(min_m < max_m)) throw std::invalid_argument("colorize_depth: bad range");
    ImageRGB out(depth.height, depth.width);
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            const float d = depth.at(y, x);
            std::uint8_t* px = out.at(y, x);
            if (d <= 0.0f) {
                px[0] = px[1] = px[2] = 0;
                continue;
            }
            ramp((d - min_m) / (max_m - min_m), px);
        }
    }
    return out;
}

ImageRGB montage_row(const std::vector<ImageRGB>& tiles) {
    if (tiles.empty()) throw std::invalid_argument("montage_row: no tiles");
    const int h = tiles[0].height;
    int total_w = 0;
    for (const ImageRGB& t : tiles) {
        if (t.height != h) throw std::invalid_argument("montage_row: tile heights differ");
        total_w += t.width;
    }
    const int sep = 2;
    total_w += sep * (static_cast<int>(tiles.size()) - 1);
    ImageRGB out(h, total_w);
    std::fill(out.pixels.begin(), out.pixels.end(), 32);
    int x0 = 0;
    for (const ImageRGB& t : tiles) {
        for (int y = 0; y < h; ++y) {
            std::copy(t.at(y, 0), t.at(y, 0) + static_cast<std::size_t>(t.width) * 3,
                      out.at(y, x0));
        }
        x0 += t.width + sep;
    }
    return out;
}

}  // namespace depthfill
