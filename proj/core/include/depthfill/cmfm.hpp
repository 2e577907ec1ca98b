#pragma once

#include "depthfill/ops.hpp"
#include "depthfill/tensor.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace depthfill {

/// Cross-modal fusion block. Per-pixel channel weights are derived from both
/// modalities and each modality's features are gated by the other's weights
/// before a depthwise feed-forward refinement.

struct FeaturePair {
    Tensor rgb;
    Tensor depth;
};

struct FusionWeights {
    Tensor fuse;   // shared spatial-importance map
    Tensor rgb;    // channel-softmax-normalized after combine_weights
    Tensor depth;
};

struct FusedFeature {
    Tensor fused;
    Tensor temp;  // bottleneck branch output, retained for tests
};

/// Weights for one fusion stage of width c. The two 1x1 projections, the
/// 3x3/5x5 multi-scale branches with their 1x1 merges, and the bottleneck
/// (1x1 expand -> depthwise 3x3 -> 1x1 project, expansion ratio 2) plus the
/// channel layer-norm affine.
struct CmfmParams {
    int channels = 0;

    Tensor proj_rgb_w, proj_rgb_b;
    Tensor proj_depth_w, proj_depth_b;

    Tensor ms_rgb_k3_w, ms_rgb_k3_b;
    Tensor ms_rgb_k5_w, ms_rgb_k5_b;
    Tensor ms_rgb_merge_w, ms_rgb_merge_b;
    Tensor ms_depth_k3_w, ms_depth_k3_b;
    Tensor ms_depth_k5_w, ms_depth_k5_b;
    Tensor ms_depth_merge_w, ms_depth_merge_b;

    Tensor ffn_expand_w, ffn_expand_b;
    Tensor ffn_dw_w, ffn_dw_b;
    Tensor ffn_project_w, ffn_project_b;
    Tensor norm_gamma, norm_beta;

    /// Seeded construction for stage width c. Conv weights are
    /// Kaiming-uniform, biases zero, gamma one, beta zero.
    static CmfmParams create(int channels, std::mt19937& rng);

    /// Parameter tensors with names "<prefix>.<local>" in a fixed order.
    std::vector<std::pair<std::string, Tensor>> named_tensors(const std::string& prefix) const;
};

/// Shared spatial importance: Conv(F_rgb) + Conv(F_depth), 1x1 projections.
Tensor fuse_global(Tape* tape, const FeaturePair& pair, const CmfmParams& params);

/// Raw (pre-softmax) per-modality weights from the 3x3/5x5 branch pair,
/// concatenated and merged back to c channels by a 1x1 conv.
std::pair<Tensor, Tensor> multiscale_weights(Tape* tape, const FeaturePair& pair,
                                             const CmfmParams& params);

/// Final weights: softmax(w_raw + softmax(w_fuse)) per modality, channel axis.
std::pair<Tensor, Tensor> combine_weights(Tape* tape, const Tensor& w_raw_rgb,
                                          const Tensor& w_raw_depth, const Tensor& w_fuse);

/// Cross-gating: rgb is scaled by the depth weights and vice versa.
FeaturePair modulate(Tape* tape, const FeaturePair& pair, const FusionWeights& weights);

/// Bottleneck refinement with residual and channel layer norm.
FusedFeature ffn_refine(Tape* tape, const Tensor& fused_in, const CmfmParams& params);

/// Full block: fuse_global -> multiscale_weights -> combine_weights ->
/// modulate -> sum of the gated pair -> ffn_refine.
FusedFeature cmfm_forward(Tape* tape, const FeaturePair& pair, const CmfmParams& params);

}  // namespace depthfill
