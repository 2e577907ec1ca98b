#include "depthfill/ops.hpp"
#include "depthfill/threading.hpp"

#include <cmath>
#include <string>

namespace depthfill {

namespace {

bool taped(Tape* tape, const Tensor& a) { return tape && a.requires_grad(); }
bool taped(Tape* tape, const Tensor& a, const Tensor& b) {
    return tape && (a.requires_grad() || b.requires_grad());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape())) {
        fail(std::string(op) + ": operand shapes " + a.shape().str() + " and " +
             b.shape().str() + " differ");
    }
}

constexpr std::int64_t kGrain = 1 << 14;

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    a.check_finite("add");
    b.check_finite("add");
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    parallel_for_chunks(0, static_cast<std::int64_t>(a.numel()), kGrain,
                        [&](std::int64_t lo, std::int64_t hi) {
                            for (std::int64_t i = lo; i < hi; ++i) po[i] = pa[i] + pb[i];
                        });
    if (taped(tape, a, b)) {
        out.set_requires_grad(true);
        tape->record([a, b, out]() mutable {
            const float* g = out.grad();
            const std::int64_t count = static_cast<std::int64_t>(out.numel());
            if (a.requires_grad()) {
                float* ga = a.grad();
                for (std::int64_t i = 0; i < count; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                float* gb = b.grad();
                for (std::int64_t i = 0; i < count; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor multiply(Tape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape("multiply", a, b);
    a.check_finite("multiply");
    b.check_finite("multiply");
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    parallel_for_chunks(0, static_cast<std::int64_t>(a.numel()), kGrain,
                        [&](std::int64_t lo, std::int64_t hi) {
                            for (std::int64_t i = lo; i < hi; ++i) po[i] = pa[i] * pb[i];
                        });
    if (taped(tape, a, b)) {
        out.set_requires_grad(true);
        tape->record([a, b, out]() mutable {
            const float* g = out.grad();
            const std::int64_t count = static_cast<std::int64_t>(out.numel());
            if (a.requires_grad()) {
                float* ga = a.grad();
                const float* vb = b.data();
                for (std::int64_t i = 0; i < count; ++i) ga[i] += g[i] * vb[i];
            }
            if (b.requires_grad()) {
                float* gb = b.grad();
                const float* va = a.data();
                for (std::int64_t i = 0; i < count; ++i) gb[i] += g[i] * va[i];
            }
        });
    }
    return out;
}

Tensor relu(Tape* tape, const Tensor& input) {
    input.check_finite("relu");
    Tensor out = Tensor::zeros(input.shape());
    const float* pi = input.data();
    float* po = out.data();
    parallel_for_chunks(0, static_cast<std::int64_t>(input.numel()), kGrain,
                        [&](std::int64_t lo, std::int64_t hi) {
                            for (std::int64_t i = lo; i < hi; ++i)
                                po[i] = pi[i] > 0.0f ? pi[i] : 0.0f;
                        });
    if (taped(tape, input)) {
        out.set_requires_grad(true);
        tape->record([input, out]() mutable {
            const float* g = out.grad();
            const float* vi = input.data();
            float* gi = input.grad();
            const std::int64_t count = static_cast<std::int64_t>(out.numel());
            for (std::int64_t i = 0; i < count; ++i) {
                if (vi[i] > 0.0f) gi[i] += g[i];
            }
        });
    }
    return out;
}

namespace {
float sigmoid_stable(float x) {
    if (x >= 0.0f) {
        float e = std::exp(-x);
        return 1.0f / (1.0f + e);
    }
    float e = std::exp(x);
    return e / (1.0f + e);
}
}  // namespace

Tensor sigmoid(Tape* tape, const Tensor& input) {
    input.check_finite("sigmoid");
    Tensor out = Tensor::zeros(input.shape());
    const float* pi = input.data();
    float* po = out.data();
    parallel_for_chunks(0, static_cast<std::int64_t>(input.numel()), kGrain,
                        [&](std::int64_t lo, std::int64_t hi) {
                            for (std::int64_t i = lo; i < hi; ++i) po[i] = sigmoid_stable(pi[i]);
                        });
    if (taped(tape, input)) {
        out.set_requires_grad(true);
        tape->record([input, out]() mutable {
            const float* g = out.grad();
            const float* vo = out.data();
            float* gi = input.grad();
            const std::int64_t count = static_cast<std::int64_t>(out.numel());
            for (std::int64_t i = 0; i < count; ++i) {
                gi[i] += g[i] * vo[i] * (1.0f - vo[i]);
            }
        });
    }
    return out;
}

Tensor softplus(Tape* tape, const Tensor& input) {
    input.check_finite("softplus");
    Tensor out = Tensor::zeros(input.shape());
    const float* pi = input.data();
    float* po = out.data();
    parallel_for_chunks(0, static_cast<std::int64_t>(input.numel()), kGrain,
                        [&](std::int64_t lo, std::int64_t hi) {
                            for (std::int64_t i = lo; i < hi; ++i) {
                                float x = pi[i];
                                po[i] = x > 20.0f ? x : std::log1p(std::exp(x));
                            }
                        });
    if (taped(tape, input)) {
        out.set_requires_grad(true);
        tape->record([input, out]() mutable {
            const float* g = out.grad();
            const float* vi = input.data();
            float* gi = input.grad();
            const std::int64_t count = static_cast<std::int64_t>(out.numel());
            for (std::int64_t i = 0; i < count; ++i) {
                gi[i] += g[i] * sigmoid_stable(vi[i]);
            }
        });
    }
    return out;
}

Tensor scale(Tape* tape, const Tensor& input, float factor) {
    input.check_finite("scale");
    Tensor out = Tensor::zeros(input.shape());
    const float* pi = input.data();
    float* po = out.data();
    const std::int64_t count = static_cast<std::int64_t>(input.numel());
    for (std::int64_t i = 0; i < count; ++i) po[i] = pi[i] * factor;
    if (taped(tape, input)) {
        out.set_requires_grad(true);
        tape->record([input, out, factor]() mutable {
            const float* g = out.grad();
            float* gi = input.grad();
            const std::int64_t n = static_cast<std::int64_t>(out.numel());
            for (std::int64_t i = 0; i < n; ++i) gi[i] += g[i] * factor;
        });
    }
    return out;
}

Tensor softmax_channel(Tape* tape, const Tensor& input) {
    if (input.c() < 1) fail("softmax_channel: need at least one channel");
    input.check_finite("softmax_channel");
    const Shape4 s = input.shape();
    Tensor out = Tensor::zeros(s);
    const int channels = s.c;
    const std::int64_t pixels = static_cast<std::int64_t>(s.n) * s.h * s.w;
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    const float* pi = input.data();
    float* po = out.data();
    parallel_for_chunks(0, pixels, 1024, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t p = lo; p < hi; ++p) {
            const std::int64_t img = p / plane;
            const std::int64_t pix = p % plane;
            const std::int64_t base = img * channels * plane + pix;
            float mx = pi[base];
            for (int ch = 1; ch < channels; ++ch) {
                mx = std::max(mx, pi[base + ch * plane]);
            }
            double denom = 0.0;
            for (int ch = 0; ch < channels; ++ch) {
                denom += std::exp(static_cast<double>(pi[base + ch * plane]) - mx);
            }
            for (int ch = 0; ch < channels; ++ch) {
                po[base + ch * plane] = static_cast<float>(
                    std::exp(static_cast<double>(pi[base + ch * plane]) - mx) / denom);
            }
        }
    });
    if (taped(tape, input)) {
        out.set_requires_grad(true);
        tape->record([input, out, channels, pixels, plane]() mutable {
            const float* g = out.grad();
            const float* y = out.data();
            float* gi = input.grad();
            for (std::int64_t p = 0; p < pixels; ++p) {
                const std::int64_t img = p / plane;
                const std::int64_t pix = p % plane;
                const std::int64_t base = img * channels * plane + pix;
                double dot = 0.0;
                for (int ch = 0; ch < channels; ++ch) {
                    const std::int64_t idx = base + ch * plane;
                    dot += static_cast<double>(g[idx]) * y[idx];
                }
                for (int ch = 0; ch < channels; ++ch) {
                    const std::int64_t idx = base + ch * plane;
                    gi[idx] += static_cast<float>(y[idx] * (g[idx] - dot));
                }
            }
        });
    }
    return out;
}

Tensor layer_norm_channel(Tape* tape, const Tensor& input, const Tensor& gamma,
                          const Tensor& beta, float eps) {
    const Shape4 s = input.shape();
    if (gamma.shape() != Shape4{1, s.c, 1, 1} || beta.shape() != Shape4{1, s.c, 1, 1}) {
        fail("layer_norm_channel: affine shapes " + gamma.shape().str() + " / " +
             beta.shape().str() + " do not match channel count " + std::to_string(s.c));
    }
    if (eps <= 0.0f) fail("layer_norm_channel: eps must be positive");
    input.check_finite("layer_norm_channel");
    Tensor out = Tensor::zeros(s);
    const int channels = s.c;
    const std::int64_t pixels = static_cast<std::int64_t>(s.n) * s.h * s.w;
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    const float* pi = input.data();
    const float* pg = gamma.data();
    const float* pb = beta.data();
    float* po = out.data();
    parallel_for_chunks(0, pixels, 1024, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t p = lo; p < hi; ++p) {
            const std::int64_t img = p / plane;
            const std::int64_t pix = p % plane;
            const std::int64_t base = img * channels * plane + pix;
            double mean = 0.0;
            for (int ch = 0; ch < channels; ++ch) mean += pi[base + ch * plane];
            mean /= channels;
            double var = 0.0;
            for (int ch = 0; ch < channels; ++ch) {
                const double d = pi[base + ch * plane] - mean;
                var += d * d;
            }
            var /= channels;
            const double inv = 1.0 / std::sqrt(var + eps);
            for (int ch = 0; ch < channels; ++ch) {
                const double xhat = (pi[base + ch * plane] - mean) * inv;
                po[base + ch * plane] = static_cast<float>(xhat * pg[ch] + pb[ch]);
            }
        }
    });
    if (taped(tape, input) || taped(tape, gamma, beta)) {
        out.set_requires_grad(true);
        const double deps = eps;
        tape->record([input, gamma, beta, out, channels, pixels, plane, deps]() mutable {
            const float* g = out.grad();
            const float* pi = input.data();
            const float* pg = gamma.data();
            float* gi = input.requires_grad() ? input.grad() : nullptr;
            float* gg = gamma.requires_grad() ? gamma.grad() : nullptr;
            float* gb = beta.requires_grad() ? beta.grad() : nullptr;
            for (std::int64_t p = 0; p < pixels; ++p) {
                const std::int64_t img = p / plane;
                const std::int64_t pix = p % plane;
                const std::int64_t base = img * channels * plane + pix;
                double mean = 0.0;
                for (int ch = 0; ch < channels; ++ch) mean += pi[base + ch * plane];
                mean /= channels;
                double var = 0.0;
                for (int ch = 0; ch < channels; ++ch) {
                    const double d = pi[base + ch * plane] - mean;
                    var += d * d;
                }
                var /= channels;
                const double inv = 1.0 / std::sqrt(var + deps);
                // gyh = dL/dxhat; two reduced terms give dL/dx in closed form.
                double sum_gyh = 0.0;
                double sum_gyh_xhat = 0.0;
                for (int ch = 0; ch < channels; ++ch) {
                    const std::int64_t idx = base + ch * plane;
                    const double xhat = (pi[idx] - mean) * inv;
                    const double gyh = static_cast<double>(g[idx]) * pg[ch];
                    sum_gyh += gyh;
                    sum_gyh_xhat += gyh * xhat;
                    if (gg) gg[ch] += static_cast<float>(g[idx] * xhat);
                    if (gb) gb[ch] += g[idx];
                }
                if (gi) {
                    for (int ch = 0; ch < channels; ++ch) {
                        const std::int64_t idx = base + ch * plane;
                        const double xhat = (pi[idx] - mean) * inv;
                        const double gyh = static_cast<double>(g[idx]) * pg[ch];
                        gi[idx] += static_cast<float>(
                            inv * (gyh - sum_gyh / channels - xhat * sum_gyh_xhat / channels));
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum_all(Tape* tape, const Tensor& input) {
    input.check_finite("sum_all");
    double acc = 0.0;
    const float* pi = input.data();
    const std::int64_t count = static_cast<std::int64_t>(input.numel());
    for (std::int64_t i = 0; i < count; ++i) acc += pi[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (taped(tape, input)) {
        out.set_requires_grad(true);
        tape->record([input, out]() mutable {
            const float g = out.grad()[0];
            float* gi = input.grad();
            const std::int64_t n = static_cast<std::int64_t>(input.numel());
            for (std::int64_t i = 0; i < n; ++i) gi[i] += g;
        });
    }
    return out;
}

Tensor mean_all(Tape* tape, const Tensor& input) {
    if (input.numel() == 0) fail("mean_all: empty tensor");
    input.check_finite("mean_all");
    double acc = 0.0;
    const float* pi = input.data();
    const std::int64_t count = static_cast<std::int64_t>(input.numel());
    for (std::int64_t i = 0; i < count; ++i) acc += pi[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(count)));
    if (taped(tape, input)) {
        out.set_requires_grad(true);
        tape->record([input, out, count]() mutable {
            const float g = out.grad()[0] / static_cast<float>(count);
            float* gi = input.grad();
            for (std::int64_t i = 0; i < count; ++i) gi[i] += g;
        });
    }
    return out;
}

}  // namespace depthfill
