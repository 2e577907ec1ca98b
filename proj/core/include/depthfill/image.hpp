#pragma once

#include <cstdint>
#include <vector>

namespace depthfill {

/// Single-channel depth in meters; 0.0 encodes an invalid pixel. Valid
/// values must stay in (0, 65.535] so they survive the 16-bit millimeter
/// codec.
struct DepthMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    DepthMap() = default;
    DepthMap(int height, int width, float fill = 0.0f)
        : height(height), width(width),
          values(static_cast<std::size_t>(height) * width, fill) {}

    float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return values.size(); }
};

/// Indicator of pixels carrying a real sensor measurement.
struct ValidityMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> valid;

    ValidityMask() = default;
    ValidityMask(int height, int width, bool fill = false)
        : height(height), width(width),
          valid(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

    bool at(int y, int x) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int y, int x, bool v) { valid[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    std::size_t count() const;
};

/// Raw sensor depth plus its validity support. Invalid pixels carry 0.
struct SparseDepthInput {
    DepthMap depth;
    ValidityMask mask;

    /// Checks the container invariants (dims match, invalid pixels are 0,
    /// valid pixels strictly positive and finite); throws on violation.
    void validate() const;
};

/// Pinhole camera intrinsics in pixels.
struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
};

/// Interleaved 8-bit RGB image.
struct ImageRGB {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // 3 * height * width

    ImageRGB() = default;
    ImageRGB(int height, int width)
        : height(height), width(width),
          pixels(static_cast<std::size_t>(height) * width * 3, 0) {}

    std::uint8_t* at(int y, int x) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    const std::uint8_t* at(int y, int x) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
};

/// 16-bit single-channel label image (used for material masks).
struct ImageGray16 {
    int height = 0;
    int width = 0;
    std::vector<std::uint16_t> pixels;

    ImageGray16() = default;
    ImageGray16(int height, int width)
        : height(height), width(width),
          pixels(static_cast<std::size_t>(height) * width, 0) {}

    std::uint16_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint16_t at(int y, int x) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
};

}  // namespace depthfill
