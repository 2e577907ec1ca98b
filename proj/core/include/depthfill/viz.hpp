#pragma once

#include "depthfill/image.hpp"

#include <vector>

namespace depthfill {

/// Depth-to-color rendering for qualitative inspection. Valid depths map
/// through a blue-to-red ramp over [min_m, max_m]; invalid pixels are black.
ImageRGB colorize_depth(const DepthMap& depth, float min_m, float max_m);

/// Horizontal side-by-side montage with a 2-pixel separator.
ImageRGB montage_row(const std::vector<ImageRGB>& tiles);

}  // namespace depthfill
