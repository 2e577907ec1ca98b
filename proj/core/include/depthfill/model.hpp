#pragma once

#include "depthfill/cmfm.hpp"
#include "depthfill/optim.hpp"
#include "depthfill/refine.hpp"
#include "depthfill/tensor.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace depthfill {

/// Desk-scale depth-completion network: two small conv encoders (RGB and
/// sparse depth + mask), per-stage cross-modal fusion, an upsampling decoder
/// with skip sums, a softplus coarse-depth head and, when enabled, the
/// prediction heads feeding the propagation refinement.
struct ModelConfig {
    std::vector<int> stage_widths{16, 32, 64, 128};
    int input_height = 224;
    int input_width = 224;
    bool use_cmfm = true;
    bool use_refinement = true;
    RefinementSchedule schedule;
    float depth_norm_max = 2.0f;  // meters; raw depth is divided by this
    std::uint64_t seed = 0;

    void validate() const;
};

struct ModelOutputs {
    Tensor coarse;            // (n, 1, h, w), strictly positive
    Tensor refined;           // undefined when refinement is disabled
    Tensor decoder_features;  // full-resolution decoder output
    std::vector<Tensor> raw_affinities;  // per kernel, undefined entries when disabled
    Tensor confidence;        // (n, |K|, h, w) in [0, 1]
    Tensor alpha;             // (n, |T|, h, w), channel-softmaxed
    Tensor beta;              // (n, |K|, h, w), channel-softmaxed
};

class Model {
public:
    explicit Model(const ModelConfig& config);
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }

    /// rgb is (n, 3, h, w) in [0, 1]; sparse_depth is (n, 1, h, w) meters
    /// with 0 at holes; valid_mask is (n, 1, h, w) in {0, 1}.
    ModelOutputs forward(Tape* tape, const Tensor& rgb, const Tensor& sparse_depth,
                         const Tensor& valid_mask) const;

    void zero_grads();

private:
    struct ConvLayer {
        Tensor w, b;
    };

    Tensor register_conv(const std::string& name, int out_c, int in_c, int k,
                         std::mt19937& rng, Tensor* bias);

    ModelConfig config_;
    std::vector<ConvLayer> enc_rgb_;
    std::vector<ConvLayer> enc_depth_;
    std::vector<CmfmParams> cmfm_;
    std::vector<ConvLayer> fuse_concat_;  // ablation path
    std::vector<ConvLayer> dec_;
    ConvLayer dec_out_;
    ConvLayer coarse_head_;
    ConvLayer head_trunk_;
    std::vector<ConvLayer> affinity_heads_;
    ConvLayer confidence_head_;
    ConvLayer alpha_head_;
    ConvLayer beta_head_;
    std::vector<Parameter> params_;
};

/// Training-loop state. Checkpoints capture all of it.
struct TrainState {
    Model model;
    int epoch = 0;
    std::uint64_t rng_seed = 0;
    double best_val_rmse = std::numeric_limits<double>::infinity();

    explicit TrainState(Model m) : model(std::move(m)) {}
    TrainState(TrainState&&) = default;
    TrainState& operator=(TrainState&&) = default;
};

TrainState build_model(const ModelConfig& config);

}  // namespace depthfill
