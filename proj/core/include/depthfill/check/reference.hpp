#pragma once

#include "depthfill/image.hpp"
#include "depthfill/metrics.hpp"
#include "depthfill/refine.hpp"
#include "depthfill/tensor.hpp"

#include <vector>

namespace depthfill::check {

/// Naive double-precision reference implementations used as independent
/// oracles by the finite-difference gradient suite and the engine-vs-naive
/// equivalence tests. Deliberately simple loops with no shared code with
/// the production kernels.

/// Plain f64 NCHW array.
struct Arr4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Arr4() = default;
    Arr4(int n, int c, int h, int w)
        : n(n), c(c), h(h), w(w),
          v(static_cast<std::size_t>(n) * c * h * w, 0.0) {}

    std::size_t size() const { return v.size(); }
    double& at(int in, int ic, int iy, int ix) {
        return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    double at(int in, int ic, int iy, int ix) const {
        return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    static Arr4 from_tensor(const Tensor& t);
};

Arr4 conv2d_ref(const Arr4& x, const Arr4& w, const Arr4* bias, int stride, int padding);
Arr4 depthwise_conv2d_ref(const Arr4& x, const Arr4& w, const Arr4* bias, int padding);
Arr4 softmax_channel_ref(const Arr4& x);
Arr4 layer_norm_channel_ref(const Arr4& x, const Arr4& gamma, const Arr4& beta, double eps);
Arr4 add_ref(const Arr4& a, const Arr4& b);
Arr4 multiply_ref(const Arr4& a, const Arr4& b);
Arr4 relu_ref(const Arr4& x);
Arr4 sigmoid_ref(const Arr4& x);
Arr4 softplus_ref(const Arr4& x);
Arr4 concat_channel_ref(const Arr4& a, const Arr4& b);
Arr4 bilinear_upsample_x2_ref(const Arr4& x);
Arr4 avgpool_x2_ref(const Arr4& x);
double sum_all_ref(const Arr4& x);
double mean_all_ref(const Arr4& x);

/// Reference CMFM forward. Tensor order matches the gradient suite:
/// [rgb, depth, proj_rgb_w, proj_rgb_b, proj_depth_w, proj_depth_b,
///  ms_rgb_k3_w/b, ms_rgb_k5_w/b, ms_rgb_merge_w/b,
///  ms_depth_k3_w/b, ms_depth_k5_w/b, ms_depth_merge_w/b,
///  ffn_expand_w/b, ffn_dw_w/b, ffn_project_w/b, gamma, beta].
Arr4 cmfm_forward_ref(const std::vector<Arr4>& inputs);

/// Reference refinement, Eqs.-style per-pixel loops. Input order:
/// [coarse, sparse, mask, phi, alpha, beta, raw_k0, raw_k1, ...].
Arr4 refine_ref(const std::vector<Arr4>& inputs, const RefinementSchedule& schedule);

double depth_loss_ref(const Arr4& pred, const Arr4& gt, const Arr4& mask);
double gradient_loss_ref(const Arr4& pred, const Arr4& gt, const Arr4& mask);
double normal_loss_ref(const Arr4& pred, const Arr4& gt, const CameraIntrinsics& intrinsics,
                       const Arr4& mask);

/// Metric oracle, structured independently of compute_metrics.
MetricReport compute_metrics_ref(const DepthMap& pred, const DepthMap& gt,
                                 const ValidityMask& eval_mask);

}  // namespace depthfill::check
