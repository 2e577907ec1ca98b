#include "depthfill/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace depthfill {

Parameter::Parameter(std::string name_, Tensor t) : tensor(std::move(t)), name(std::move(name_)) {
    tensor.set_requires_grad(true);
    adam_m.assign(tensor.numel(), 0.0f);
    adam_v.assign(tensor.numel(), 0.0f);
}

void adam_step(std::vector<Parameter>& params, const AdamConfig& config) {
    if (config.lr <= 0.0f) fail("adam_step: lr must be positive");
    for (Parameter& p : params) {
        if (!p.tensor.requires_grad() || p.tensor.grad() == nullptr) {
            throw std::runtime_error("adam_step: parameter '" + p.name + "' has no gradient");
        }
        if (p.adam_m.size() != p.tensor.numel() || p.adam_v.size() != p.tensor.numel()) {
            throw std::runtime_error("adam_step: moment buffers of '" + p.name +
                                     "' do not match the tensor");
        }
        p.step += 1;
        const double lr = config.lr;
        const double b1 = config.beta1;
        const double b2 = config.beta2;
        const double bias1 = 1.0 - std::pow(b1, static_cast<double>(p.step));
        const double bias2 = 1.0 - std::pow(b2, static_cast<double>(p.step));
        float* value = p.tensor.data();
        const float* grad = p.tensor.grad();
        const std::size_t count = p.tensor.numel();
        for (std::size_t i = 0; i < count; ++i) {
            double v = value[i];
            if (config.weight_decay != 0.0f) {
                v -= lr * config.weight_decay * v;
            }
            const double g = grad[i];
            const double m = b1 * p.adam_m[i] + (1.0 - b1) * g;
            const double s = b2 * p.adam_v[i] + (1.0 - b2) * g * g;
            p.adam_m[i] = static_cast<float>(m);
            p.adam_v[i] = static_cast<float>(s);
            const double m_hat = m / bias1;
            const double s_hat = s / bias2;
            v -= lr * m_hat / (std::sqrt(s_hat) + config.eps);
            value[i] = static_cast<float>(v);
        }
    }
}

void kaiming_uniform_fill(Tensor& t, int fan_in, std::mt19937& rng) {
    if (fan_in <= 0) fail("kaiming_uniform_fill: fan_in must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    float* data = t.data();
    const std::size_t count = t.numel();
    for (std::size_t i = 0; i < count; ++i) {
        // 53-bit uniform in [0, 1); explicit so the stream is stable.
        const std::uint64_t hi = static_cast<std::uint64_t>(rng()) << 32 | rng();
        const double u = static_cast<double>(hi >> 11) * 0x1.0p-53;
        data[i] = static_cast<float>((2.0 * u - 1.0) * bound);
    }
}

}  // namespace depthfill
