#pragma once

#include "depthfill/image.hpp"

#include <string>

namespace depthfill {

/// 16-bit grayscale PNG depth codec, millimeter convention: stored value is
/// round(meters * 1000), 0 encodes invalid. Round trip is exact to 1 mm.
/// Throws on depths outside (0, 65.535] m (invalid 0 excepted) and on
/// malformed files.
void write_depth_png16(const std::string& path, const DepthMap& depth);
DepthMap read_depth_png16(const std::string& path);

/// 16-bit grayscale label images (material masks).
void write_gray_png16(const std::string& path, const ImageGray16& image);
ImageGray16 read_gray_png16(const std::string& path);

/// 8-bit 3-channel RGB.
void write_rgb_png8(const std::string& path, const ImageRGB& image);
ImageRGB read_rgb_png8(const std::string& path);

}  // namespace depthfill
