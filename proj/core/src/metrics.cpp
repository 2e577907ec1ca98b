#include "depthfill/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace depthfill {

MetricReport compute_metrics(const DepthMap& pred, const DepthMap& gt,
                             const ValidityMask& eval_mask) {
    if (pred.height != gt.height || pred.width != gt.width ||
        eval_mask.height != gt.height || eval_mask.width != gt.width) {
        throw std::invalid_argument("compute_metrics: pred/gt/mask dims differ");
    }
    MetricReport r;
    double sum_sq = 0.0;
    double sum_abs = 0.0;
    double sum_rel = 0.0;
    std::int64_t in_105 = 0, in_110 = 0, in_125 = 0;
    const std::size_t count = gt.values.size();
    for (std::size_t i = 0; i < count; ++i) {
        if (!eval_mask.valid[i]) continue;
        const double d = pred.values[i];
        const double d_star = gt.values[i];
        const double diff = d - d_star;
        sum_sq += diff * diff;
        sum_abs += std::abs(diff);
        sum_rel += std::abs(diff) / d_star;
        ++r.pixel_count;
        if (d > 0.0) {
            const double ratio = std::max(d / d_star, d_star / d);
            if (ratio < 1.05) ++in_105;
            if (ratio < 1.10) ++in_110;
            if (ratio < 1.25) ++in_125;
        }
    }
    if (r.pixel_count == 0) return r;
    const double n = static_cast<double>(r.pixel_count);
    r.rmse = std::sqrt(sum_sq / n);
    r.mae = sum_abs / n;
    r.rel = sum_rel / n;
    r.delta_105 = 100.0 * in_105 / n;
    r.delta_110 = 100.0 * in_110 / n;
    r.delta_125 = 100.0 * in_125 / n;
    return r;
}

ValidityMask make_eval_mask(const DepthMap& gt,
                            std::optional<std::pair<float, float>> valid_range) {
    ValidityMask m(gt.height, gt.width);
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
        const float v = gt.values[i];
        bool ok = v > 0.0f && std::isfinite(v);
        if (ok && valid_range) {
            ok = v >= valid_range->first && v <= valid_range->second;
        }
        m.valid[i] = ok ? 1 : 0;
    }
    return m;
}

std::string to_report_text(const MetricReport& report) {
    std::ostringstream os;
    os.precision(9);
    if (!report.has_pixels()) {
        os << "status no_valid_pixels\n";
        os << "pixel_count 0\n";
        return os.str();
    }
    os << "rmse " << report.rmse << "\n";
    os << "rel " << report.rel << "\n";
    os << "mae " << report.mae << "\n";
    os << "delta_1.05 " << report.delta_105 << "\n";
    os << "delta_1.10 " << report.delta_110 << "\n";
    os << "delta_1.25 " << report.delta_125 << "\n";
    os << "pixel_count " << report.pixel_count << "\n";
    return os.str();
}

}  // namespace depthfill
