#include "depthfill/model.hpp"

#include "depthfill/ops.hpp"

#include <string>

namespace depthfill {

void ModelConfig::validate() const {
    if (stage_widths.size() < 2) fail("model config: need at least two stages");
    for (std::size_t i = 1; i < stage_widths.size(); ++i) {
        if (stage_widths[i] <= stage_widths[i - 1]) {
            fail("model config: stage widths must be strictly increasing");
        }
    }
    const int stages = static_cast<int>(stage_widths.size());
    const int factor = 1 << stages;
    if (input_height % factor != 0 || input_width % factor != 0) {
        fail("model config: input " + std::to_string(input_width) + "x" +
             std::to_string(input_height) + " must be divisible by 2^" +
             std::to_string(stages));
    }
    if (depth_norm_max <= 0.0f) fail("model config: depth_norm_max must be positive");
    if (use_refinement) schedule.validate();
}

Tensor Model::register_conv(const std::string& name, int out_c, int in_c, int k,
                            std::mt19937& rng, Tensor* bias) {
    Tensor w = Tensor::zeros({out_c, in_c, k, k});
    kaiming_uniform_fill(w, in_c * k * k, rng);
    params_.emplace_back(name + ".weight", w);
    Tensor b = Tensor::zeros({1, out_c, 1, 1});
    params_.emplace_back(name + ".bias", b);
    *bias = params_.back().tensor;
    return params_[params_.size() - 2].tensor;
}

Model::Model(const ModelConfig& config) : config_(config) {
    config_.validate();
    std::mt19937 rng(static_cast<std::uint32_t>(config_.seed ^ 0x9e3779b9u));
    const auto& widths = config_.stage_widths;
    const int stages = static_cast<int>(widths.size());

    int in_rgb = 3;
    int in_depth = 2;  // normalized depth + validity channel
    for (int i = 0; i < stages; ++i) {
        const std::string tag = "stage" + std::to_string(i);
        ConvLayer rgb, depth;
        rgb.w = register_conv("encoder_rgb." + tag, widths[i], in_rgb, 3, rng, &rgb.b);
        depth.w = register_conv("encoder_depth." + tag, widths[i], in_depth, 3, rng, &depth.b);
        enc_rgb_.push_back(rgb);
        enc_depth_.push_back(depth);
        in_rgb = widths[i];
        in_depth = widths[i];
    }

    for (int i = 0; i < stages; ++i) {
        const std::string tag = "stage" + std::to_string(i);
        if (config_.use_cmfm) {
            CmfmParams p = CmfmParams::create(widths[i], rng);
            for (auto& [name, tensor] : p.named_tensors("cmfm." + tag)) {
                params_.emplace_back(name, tensor);
            }
            cmfm_.push_back(std::move(p));
        } else {
            ConvLayer fuse;
            fuse.w = register_conv("fuse_concat." + tag, widths[i], 2 * widths[i], 1, rng,
                                   &fuse.b);
            fuse_concat_.push_back(fuse);
        }
    }

    for (int i = stages - 2; i >= 0; --i) {
        const std::string tag = "stage" + std::to_string(i);
        ConvLayer up;
        up.w = register_conv("decoder." + tag, widths[i], widths[i + 1], 3, rng, &up.b);
        dec_.push_back(up);
    }
    dec_out_.w = register_conv("decoder.full_res", widths[0], widths[0], 3, rng, &dec_out_.b);
    coarse_head_.w = register_conv("coarse_head", 1, widths[0], 3, rng, &coarse_head_.b);

    if (config_.use_refinement) {
        const int c0 = widths[0];
        head_trunk_.w = register_conv("heads.trunk", c0, c0, 3, rng, &head_trunk_.b);
        for (int k : config_.schedule.kernels) {
            ConvLayer head;
            head.w = register_conv("heads.affinity_k" + std::to_string(k), k * k - 1, c0, 1,
                                   rng, &head.b);
            affinity_heads_.push_back(head);
        }
        const int num_k = config_.schedule.kernel_count();
        const int num_t = config_.schedule.snapshot_count();
        confidence_head_.w = register_conv("heads.confidence", num_k, c0, 1, rng,
                                            &confidence_head_.b);
        alpha_head_.w = register_conv("heads.alpha", num_t, c0, 1, rng, &alpha_head_.b);
        beta_head_.w = register_conv("heads.beta", num_k, c0, 1, rng, &beta_head_.b);
    }
}

ModelOutputs Model::forward(Tape* tape, const Tensor& rgb, const Tensor& sparse_depth,
                            const Tensor& valid_mask) const {
    const Shape4 rs = rgb.shape();
    if (rs.c != 3 || rs.h != config_.input_height || rs.w != config_.input_width) {
        fail("model forward: rgb shape " + rs.str() + " does not match configured input " +
             std::to_string(config_.input_width) + "x" + std::to_string(config_.input_height));
    }
    const Shape4 want{rs.n, 1, rs.h, rs.w};
    if (!(sparse_depth.shape() == want) || !(valid_mask.shape() == want)) {
        fail("model forward: depth/mask must be " + want.str());
    }

    Tensor depth_in = concat_channel(
        tape, scale(tape, sparse_depth, 1.0f / config_.depth_norm_max), valid_mask);

    const int stages = static_cast<int>(config_.stage_widths.size());
    Tensor rgb_x = rgb;
    Tensor depth_x = depth_in;
    std::vector<Tensor> fused(stages);
    for (int i = 0; i < stages; ++i) {
        rgb_x = relu(tape, conv2d(tape, rgb_x, enc_rgb_[i].w, enc_rgb_[i].b, 2, 1));
        depth_x = relu(tape, conv2d(tape, depth_x, enc_depth_[i].w, enc_depth_[i].b, 2, 1));
        if (config_.use_cmfm) {
            fused[i] = cmfm_forward(tape, {rgb_x, depth_x}, cmfm_[i]).fused;
        } else {
            Tensor cat = concat_channel(tape, rgb_x, depth_x);
            fused[i] = conv2d(tape, cat, fuse_concat_[i].w, fuse_concat_[i].b, 1, 0);
        }
    }

    Tensor x = fused[stages - 1];
    for (int d = 0; d < static_cast<int>(dec_.size()); ++d) {
        const int skip = stages - 2 - d;
        Tensor up = bilinear_upsample_x2(tape, x);
        Tensor projected = conv2d(tape, up, dec_[d].w, dec_[d].b, 1, 1);
        x = relu(tape, add(tape, projected, fused[skip]));
    }
    Tensor full = bilinear_upsample_x2(tape, x);
    Tensor features = relu(tape, conv2d(tape, full, dec_out_.w, dec_out_.b, 1, 1));

    ModelOutputs out;
    out.decoder_features = features;
    out.coarse = softplus(tape, conv2d(tape, features, coarse_head_.w, coarse_head_.b, 1, 1));

    if (config_.use_refinement) {
        Tensor trunk =
            relu(tape, conv2d(tape, features, head_trunk_.w, head_trunk_.b, 1, 1));
        for (const ConvLayer& head : affinity_heads_) {
            out.raw_affinities.push_back(conv2d(tape, trunk, head.w, head.b, 1, 0));
        }
        out.confidence =
            sigmoid(tape, conv2d(tape, trunk, confidence_head_.w, confidence_head_.b, 1, 0));
        out.alpha =
            softmax_channel(tape, conv2d(tape, trunk, alpha_head_.w, alpha_head_.b, 1, 0));
        out.beta =
            softmax_channel(tape, conv2d(tape, trunk, beta_head_.w, beta_head_.b, 1, 0));
        out.refined = refine_depth(tape, out.coarse, sparse_depth, valid_mask,
                                   out.raw_affinities, out.confidence, out.alpha, out.beta,
                                   config_.schedule);
    }
    return out;
}

void Model::zero_grads() {
    for (Parameter& p : params_) p.tensor.zero_grad();
}

TrainState build_model(const ModelConfig& config) { return TrainState(Model(config)); }

}  // namespace depthfill
