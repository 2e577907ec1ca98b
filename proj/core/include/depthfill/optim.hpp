#pragma once

#include "depthfill/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace depthfill {

/// A named learnable tensor with its optimizer state.
struct Parameter {
    Tensor tensor;  // requires_grad is always true
    std::string name;
    std::vector<float> adam_m;  // first moment, same length as tensor
    std::vector<float> adam_v;  // second moment
    std::int64_t step = 0;

    Parameter() = default;
    Parameter(std::string name, Tensor t);
};

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
};

/// One decoupled-weight-decay Adam update over all parameters. Decay is
/// applied to the parameter before the moment update (p -= lr*wd*p); grads
/// are left intact for inspection. Rejects parameters with missing grads.
void adam_step(std::vector<Parameter>& params, const AdamConfig& config);

/// Kaiming-uniform fill: U(-b, b) with b = sqrt(6 / fan_in).
void kaiming_uniform_fill(Tensor& t, int fan_in, std::mt19937& rng);

}  // namespace depthfill
