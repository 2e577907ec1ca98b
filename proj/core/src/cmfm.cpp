#include "depthfill/cmfm.hpp"

#include "depthfill/optim.hpp"

namespace depthfill {

namespace {

void require_pair(const FeaturePair& pair, const char* op) {
    if (!(pair.rgb.shape() == pair.depth.shape())) {
        fail(std::string(op) + ": rgb " + pair.rgb.shape().str() + " and depth " +
             pair.depth.shape().str() + " shapes differ");
    }
}

Tensor conv_weight(int out_c, int in_c, int k, std::mt19937& rng) {
    Tensor w = Tensor::zeros({out_c, in_c, k, k});
    kaiming_uniform_fill(w, in_c * k * k, rng);
    return w;
}

Tensor bias_for(int c) { return Tensor::zeros({1, c, 1, 1}); }

}  // namespace

CmfmParams CmfmParams::create(int channels, std::mt19937& rng) {
    CmfmParams p;
    p.channels = channels;
    const int c = channels;
    p.proj_rgb_w = conv_weight(c, c, 1, rng);
    p.proj_rgb_b = bias_for(c);
    p.proj_depth_w = conv_weight(c, c, 1, rng);
    p.proj_depth_b = bias_for(c);

    p.ms_rgb_k3_w = conv_weight(c, c, 3, rng);
    p.ms_rgb_k3_b = bias_for(c);
    p.ms_rgb_k5_w = conv_weight(c, c, 5, rng);
    p.ms_rgb_k5_b = bias_for(c);
    p.ms_rgb_merge_w = conv_weight(c, 2 * c, 1, rng);
    p.ms_rgb_merge_b = bias_for(c);
    p.ms_depth_k3_w = conv_weight(c, c, 3, rng);
    p.ms_depth_k3_b = bias_for(c);
    p.ms_depth_k5_w = conv_weight(c, c, 5, rng);
    p.ms_depth_k5_b = bias_for(c);
    p.ms_depth_merge_w = conv_weight(c, 2 * c, 1, rng);
    p.ms_depth_merge_b = bias_for(c);

    p.ffn_expand_w = conv_weight(2 * c, c, 1, rng);
    p.ffn_expand_b = bias_for(2 * c);
    p.ffn_dw_w = Tensor::zeros({2 * c, 1, 3, 3});
    kaiming_uniform_fill(p.ffn_dw_w, 9, rng);
    p.ffn_dw_b = bias_for(2 * c);
    p.ffn_project_w = conv_weight(c, 2 * c, 1, rng);
    p.ffn_project_b = bias_for(c);
    p.norm_gamma = Tensor::full({1, c, 1, 1}, 1.0f);
    p.norm_beta = bias_for(c);
    return p;
}

std::vector<std::pair<std::string, Tensor>> CmfmParams::named_tensors(
    const std::string& prefix) const {
    return {
        {prefix + ".proj_rgb.weight", proj_rgb_w},
        {prefix + ".proj_rgb.bias", proj_rgb_b},
        {prefix + ".proj_depth.weight", proj_depth_w},
        {prefix + ".proj_depth.bias", proj_depth_b},
        {prefix + ".ms_rgb_k3.weight", ms_rgb_k3_w},
        {prefix + ".ms_rgb_k3.bias", ms_rgb_k3_b},
        {prefix + ".ms_rgb_k5.weight", ms_rgb_k5_w},
        {prefix + ".ms_rgb_k5.bias", ms_rgb_k5_b},
        {prefix + ".ms_rgb_merge.weight", ms_rgb_merge_w},
        {prefix + ".ms_rgb_merge.bias", ms_rgb_merge_b},
        {prefix + ".ms_depth_k3.weight", ms_depth_k3_w},
        {prefix + ".ms_depth_k3.bias", ms_depth_k3_b},
        {prefix + ".ms_depth_k5.weight", ms_depth_k5_w},
        {prefix + ".ms_depth_k5.bias", ms_depth_k5_b},
        {prefix + ".ms_depth_merge.weight", ms_depth_merge_w},
        {prefix + ".ms_depth_merge.bias", ms_depth_merge_b},
        {prefix + ".ffn_expand.weight", ffn_expand_w},
        {prefix + ".ffn_expand.bias", ffn_expand_b},
        {prefix + ".ffn_dw.weight", ffn_dw_w},
        {prefix + ".ffn_dw.bias", ffn_dw_b},
        {prefix + ".ffn_project.weight", ffn_project_w},
        {prefix + ".ffn_project.bias", ffn_project_b},
        {prefix + ".norm.gamma", norm_gamma},
        {prefix + ".norm.beta", norm_beta},
    };
}

Tensor fuse_global(Tape* tape, const FeaturePair& pair, const CmfmParams& params) {
    require_pair(pair, "fuse_global");
    Tensor a = conv2d(tape, pair.rgb, params.proj_rgb_w, params.proj_rgb_b, 1, 0);
    Tensor b = conv2d(tape, pair.depth, params.proj_depth_w, params.proj_depth_b, 1, 0);
    return add(tape, a, b);
}

std::pair<Tensor, Tensor> multiscale_weights(Tape* tape, const FeaturePair& pair,
                                             const CmfmParams& params) {
    require_pair(pair, "multiscale_weights");
    auto branch = [&](const Tensor& f, const Tensor& k3w, const Tensor& k3b, const Tensor& k5w,
                      const Tensor& k5b, const Tensor& mw, const Tensor& mb) {
        Tensor s3 = conv2d(tape, f, k3w, k3b, 1, 1);
        Tensor s5 = conv2d(tape, f, k5w, k5b, 1, 2);
        Tensor cat = concat_channel(tape, s3, s5);
        return conv2d(tape, cat, mw, mb, 1, 0);
    };
    Tensor w_rgb = branch(pair.rgb, params.ms_rgb_k3_w, params.ms_rgb_k3_b, params.ms_rgb_k5_w,
                          params.ms_rgb_k5_b, params.ms_rgb_merge_w, params.ms_rgb_merge_b);
    Tensor w_depth =
        branch(pair.depth, params.ms_depth_k3_w, params.ms_depth_k3_b, params.ms_depth_k5_w,
               params.ms_depth_k5_b, params.ms_depth_merge_w, params.ms_depth_merge_b);
    return {w_rgb, w_depth};
}

std::pair<Tensor, Tensor> combine_weights(Tape* tape, const Tensor& w_raw_rgb,
                                          const Tensor& w_raw_depth, const Tensor& w_fuse) {
    if (!(w_raw_rgb.shape() == w_raw_depth.shape()) || !(w_raw_rgb.shape() == w_fuse.shape())) {
        fail("combine_weights: shapes " + w_raw_rgb.shape().str() + ", " +
             w_raw_depth.shape().str() + ", " + w_fuse.shape().str() + " must match");
    }
    Tensor fuse_sm = softmax_channel(tape, w_fuse);
    Tensor w_rgb = softmax_channel(tape, add(tape, w_raw_rgb, fuse_sm));
    Tensor w_depth = softmax_channel(tape, add(tape, w_raw_depth, fuse_sm));
    return {w_rgb, w_depth};
}

FeaturePair modulate(Tape* tape, const FeaturePair& pair, const FusionWeights& weights) {
    require_pair(pair, "modulate");
    // Cross assignment: each modality is gated by the other's weights.
    FeaturePair out;
    out.rgb = multiply(tape, pair.rgb, weights.depth);
    out.depth = multiply(tape, pair.depth, weights.rgb);
    return out;
}

FusedFeature ffn_refine(Tape* tape, const Tensor& fused_in, const CmfmParams& params) {
    Tensor expanded = conv2d(tape, fused_in, params.ffn_expand_w, params.ffn_expand_b, 1, 0);
    Tensor spatial = depthwise_conv2d(tape, expanded, params.ffn_dw_w, params.ffn_dw_b, 1);
    Tensor activated = relu(tape, spatial);
    Tensor temp = conv2d(tape, activated, params.ffn_project_w, params.ffn_project_b, 1, 0);
    Tensor residual = add(tape, temp, fused_in);
    FusedFeature out;
    out.temp = temp;
    out.fused = layer_norm_channel(tape, residual, params.norm_gamma, params.norm_beta);
    return out;
}

FusedFeature cmfm_forward(Tape* tape, const FeaturePair& pair, const CmfmParams& params) {
    require_pair(pair, "cmfm_forward");
    if (pair.rgb.c() != params.channels) {
        fail("cmfm_forward: stage width " + std::to_string(params.channels) +
             " does not match input channels " + std::to_string(pair.rgb.c()));
    }
    Tensor w_fuse = fuse_global(tape, pair, params);
    auto [raw_rgb, raw_depth] = multiscale_weights(tape, pair, params);
    auto [w_rgb, w_depth] = combine_weights(tape, raw_rgb, raw_depth, w_fuse);
    FusionWeights weights{w_fuse, w_rgb, w_depth};
    FeaturePair gated = modulate(tape, pair, weights);
    Tensor fused = add(tape, gated.rgb, gated.depth);
    return ffn_refine(tape, fused, params);
}

}  // namespace depthfill
