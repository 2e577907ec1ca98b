#pragma once

#include "depthfill/image.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

namespace depthfill {

/// Standard depth-completion error metrics over a validity mask. delta
/// values are percentages in [0, 100] and are monotone in the threshold.
/// pixel_count == 0 flags the explicit "no valid pixels" outcome; the
/// numeric fields are zero in that case, never NaN.
struct MetricReport {
    double rmse = 0.0;       // meters
    double rel = 0.0;        // dimensionless
    double mae = 0.0;        // meters
    double delta_105 = 0.0;  // percent
    double delta_110 = 0.0;
    double delta_125 = 0.0;
    std::int64_t pixel_count = 0;

    bool has_pixels() const { return pixel_count > 0; }
};

/// All means run over masked pixels only, in double precision.
MetricReport compute_metrics(const DepthMap& pred, const DepthMap& gt,
                             const ValidityMask& eval_mask);

/// Mask of pixels where gt is valid (> 0) and inside the optional
/// [min, max] meters range.
ValidityMask make_eval_mask(const DepthMap& gt,
                            std::optional<std::pair<float, float>> valid_range);

/// Flat text report, one "key value" line per metric.
std::string to_report_text(const MetricReport& report);

}  // namespace depthfill
