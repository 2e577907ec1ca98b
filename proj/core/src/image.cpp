#include "depthfill/image.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace depthfill {

std::size_t ValidityMask::count() const {
    return std::accumulate(valid.begin(), valid.end(), std::size_t{0},
                           [](std::size_t acc, std::uint8_t v) { return acc + (v != 0); });
}

void SparseDepthInput::validate() const {
    if (depth.height != mask.height || depth.width != mask.width) {
        throw std::invalid_argument("sparse depth: depth " + std::to_string(depth.width) + "x" +
                                    std::to_string(depth.height) + " and mask " +
                                    std::to_string(mask.width) + "x" +
                                    std::to_string(mask.height) + " dims differ");
    }
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        const float v = depth.values[i];
        if (mask.valid[i]) {
            if (!(v > 0.0f) || !std::isfinite(v)) {
                throw std::invalid_argument(
                    "sparse depth: valid pixel " + std::to_string(i) +
                    " must be strictly positive and finite, got " + std::to_string(v));
            }
        } else if (v != 0.0f) {
            throw std::invalid_argument("sparse depth: invalid pixel " + std::to_string(i) +
                                        " must carry 0, got " + std::to_string(v));
        }
    }
}

}  // namespace depthfill
