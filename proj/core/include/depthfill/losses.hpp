#pragma once

#include "depthfill/image.hpp"
#include "depthfill/tensor.hpp"

#include <optional>
#include <utility>

namespace depthfill {

/// Two-stage composite supervision: each stage combines an L1 depth term, a
/// Sobel gradient term and a surface-normal term; the stage losses are mixed
/// by the coarse/refined weights.
struct LossConfig {
    float w_coarse = 0.5f;   // weight of the coarse-stage loss
    float w_refined = 1.0f;  // weight of the refined-stage loss
    float w_normal = 0.3f;
    float w_depth = 1.0f;
    float w_grad = 0.5f;
    float range_min = 0.3f;  // meters
    float range_max = 1.5f;
    bool apply_range = true;

    void validate() const;
    std::optional<std::pair<float, float>> range() const {
        if (!apply_range) return std::nullopt;
        return std::make_pair(range_min, range_max);
    }
};

/// Mean absolute error over masked pixels; differentiable w.r.t. pred.
/// pred/gt/mask are (n, 1, h, w); mask holds 0/1. empty_mask (optional)
/// reports the no-valid-pixels case, which yields a zero loss.
Tensor depth_loss(Tape* tape, const Tensor& pred, const Tensor& gt, const Tensor& mask,
                  bool* empty_mask = nullptr);

/// L1 distance between the 3x3 Sobel responses of pred and gt, averaged
/// over pixels whose full Sobel support is mask-valid.
Tensor gradient_loss(Tape* tape, const Tensor& pred, const Tensor& gt, const Tensor& mask,
                     bool* empty_mask = nullptr);

/// Mean (1 - cosine) distance between unit normals derived from pred and gt
/// by back-projection and central-difference cross products. Pixels with
/// degenerate normals or invalid cross-neighbor support are excluded.
Tensor normal_loss(Tape* tape, const Tensor& pred, const Tensor& gt,
                   const CameraIntrinsics& intrinsics, const Tensor& mask,
                   bool* empty_mask = nullptr);

/// Scalar sub-terms of the combined objective, retained for logging.
struct LossBreakdown {
    double total = 0.0;
    double coarse_total = 0.0;
    double refined_total = 0.0;
    double coarse_depth = 0.0, coarse_grad = 0.0, coarse_normal = 0.0;
    double refined_depth = 0.0, refined_grad = 0.0, refined_normal = 0.0;
    bool empty_mask_warning = false;
    Tensor total_tensor;  // taped scalar for backward
};

/// Builds the validity mask from gt (> 0, optional range) and applies the
/// per-stage combination. refined may be undefined (coarse-only training);
/// its stage weight then contributes nothing.
LossBreakdown total_loss(Tape* tape, const Tensor& coarse, const Tensor& refined,
                         const Tensor& gt, const CameraIntrinsics& intrinsics,
                         const LossConfig& config);

/// 0/1 mask tensor of gt validity restricted to the configured range.
Tensor loss_mask_from_gt(const Tensor& gt, const LossConfig& config);

}  // namespace depthfill
