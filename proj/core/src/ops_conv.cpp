#include "depthfill/ops.hpp"
#include "depthfill/threading.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace depthfill {

namespace {

int ceil_div(int a, int b) { return a > 0 ? (a + b - 1) / b : -(-a / b); }

struct ConvDims {
    int oh = 0, ow = 0;
};

ConvDims conv_dims(const char* op, const Shape4& in, const Shape4& wt, int stride, int padding) {
    if (stride < 1) fail(std::string(op) + ": stride must be >= 1");
    if (padding < 0) fail(std::string(op) + ": padding must be >= 0");
    ConvDims d;
    d.oh = conv_out_extent(in.h, wt.h, stride, padding);
    d.ow = conv_out_extent(in.w, wt.w, stride, padding);
    if (d.oh <= 0 || d.ow <= 0) {
        fail(std::string(op) + ": kernel " + wt.str() + " does not fit input " + in.str());
    }
    return d;
}

// Valid output range along one axis for a fixed kernel tap: indices ox with
// 0 <= ox*stride + k - padding < extent.
void tap_range(int extent, int out_extent, int k, int stride, int padding, int* lo, int* hi) {
    *lo = std::max(0, ceil_div(padding - k, stride));
    const int last = extent - 1 - k + padding;
    *hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
}

}  // namespace

int conv_out_extent(int in_extent, int kernel, int stride, int padding) {
    return (in_extent + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    const Shape4 in = input.shape();
    const Shape4 wt = weight.shape();
    if (in.c != wt.c) {
        fail("conv2d: input channels " + std::to_string(in.c) + " != weight in_c " +
             std::to_string(wt.c) + " (weight " + wt.str() + ")");
    }
    if (bias.defined() && bias.shape() != Shape4{1, wt.n, 1, 1}) {
        fail("conv2d: bias shape " + bias.shape().str() + " does not match out_c " +
             std::to_string(wt.n));
    }
    const ConvDims d = conv_dims("conv2d", in, wt, stride, padding);
    input.check_finite("conv2d");
    weight.check_finite("conv2d");

    Tensor out = Tensor::zeros({in.n, wt.n, d.oh, d.ow});
    const float* pin = input.data();
    const float* pw = weight.data();
    const float* pb = bias.defined() ? bias.data() : nullptr;
    float* po = out.data();
    const std::int64_t in_plane = static_cast<std::int64_t>(in.h) * in.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(d.oh) * d.ow;

    parallel_for(0, static_cast<std::int64_t>(in.n) * wt.n, [&](std::int64_t job) {
        const int img = static_cast<int>(job / wt.n);
        const int oc = static_cast<int>(job % wt.n);
        std::vector<double> acc(d.ow);
        const float* in_img = pin + static_cast<std::int64_t>(img) * in.c * in_plane;
        float* out_row0 = po + (static_cast<std::int64_t>(img) * wt.n + oc) * out_plane;
        for (int oy = 0; oy < d.oh; ++oy) {
            const double init = pb ? static_cast<double>(pb[oc]) : 0.0;
            for (int ox = 0; ox < d.ow; ++ox) acc[ox] = init;
            for (int ic = 0; ic < in.c; ++ic) {
                const float* in_ch = in_img + static_cast<std::int64_t>(ic) * in_plane;
                const float* w_ch = pw + ((static_cast<std::int64_t>(oc) * in.c + ic) * wt.h) * wt.w;
                for (int ky = 0; ky < wt.h; ++ky) {
                    const int iy = oy * stride + ky - padding;
                    if (iy < 0 || iy >= in.h) continue;
                    const float* in_row = in_ch + static_cast<std::int64_t>(iy) * in.w;
                    for (int kx = 0; kx < wt.w; ++kx) {
                        const double wv = w_ch[ky * wt.w + kx];
                        int lo, hi;
                        tap_range(in.w, d.ow, kx, stride, padding, &lo, &hi);
                        const float* src = in_row + kx - padding;
                        if (stride == 1) {
                            for (int ox = lo; ox < hi; ++ox) acc[ox] += wv * src[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox) acc[ox] += wv * src[ox * stride];
                        }
                    }
                }
            }
            float* out_row = out_row0 + static_cast<std::int64_t>(oy) * d.ow;
            for (int ox = 0; ox < d.ow; ++ox) out_row[ox] = static_cast<float>(acc[ox]);
        }
    });

    if (tape && (input.requires_grad() || weight.requires_grad() ||
                 (bias.defined() && bias.requires_grad()))) {
        out.set_requires_grad(true);
        tape->record([input, weight, bias, out, stride, padding, d, in, wt, in_plane,
                      out_plane]() mutable {
            const float* g = out.grad();
            const float* pin = input.data();
            const float* pw = weight.data();
            if (input.requires_grad()) {
                float* gi = input.grad();
                parallel_for(0, static_cast<std::int64_t>(in.n) * in.c, [&](std::int64_t job) {
                    const int img = static_cast<int>(job / in.c);
                    const int ic = static_cast<int>(job % in.c);
                    std::vector<double> acc(in.w);
                    float* gi_ch = gi + (static_cast<std::int64_t>(img) * in.c + ic) * in_plane;
                    const float* g_img = g + static_cast<std::int64_t>(img) * wt.n * out_plane;
                    for (int iy = 0; iy < in.h; ++iy) {
                        for (int ix = 0; ix < in.w; ++ix) acc[ix] = 0.0;
                        for (int oc = 0; oc < wt.n; ++oc) {
                            const float* g_ch = g_img + static_cast<std::int64_t>(oc) * out_plane;
                            const float* w_ch =
                                pw + ((static_cast<std::int64_t>(oc) * in.c + ic) * wt.h) * wt.w;
                            for (int ky = 0; ky < wt.h; ++ky) {
                                const int oy_num = iy - ky + padding;
                                if (oy_num < 0 || oy_num % stride != 0) continue;
                                const int oy = oy_num / stride;
                                if (oy >= d.oh) continue;
                                const float* g_row = g_ch + static_cast<std::int64_t>(oy) * d.ow;
                                for (int kx = 0; kx < wt.w; ++kx) {
                                    const double wv = w_ch[ky * wt.w + kx];
                                    int lo, hi;
                                    tap_range(in.w, d.ow, kx, stride, padding, &lo, &hi);
                                    double* dst = acc.data() + kx - padding;
                                    if (stride == 1) {
                                        for (int ox = lo; ox < hi; ++ox) dst[ox] += wv * g_row[ox];
                                    } else {
                                        for (int ox = lo; ox < hi; ++ox)
                                            dst[ox * stride] += wv * g_row[ox];
                                    }
                                }
                            }
                        }
                        float* gi_row = gi_ch + static_cast<std::int64_t>(iy) * in.w;
                        for (int ix = 0; ix < in.w; ++ix)
                            gi_row[ix] += static_cast<float>(acc[ix]);
                    }
                });
            }
            if (weight.requires_grad()) {
                float* gw = weight.grad();
                parallel_for(0, static_cast<std::int64_t>(wt.n) * in.c, [&](std::int64_t job) {
                    const int oc = static_cast<int>(job / in.c);
                    const int ic = static_cast<int>(job % in.c);
                    for (int ky = 0; ky < wt.h; ++ky) {
                        for (int kx = 0; kx < wt.w; ++kx) {
                            int lo, hi;
                            tap_range(in.w, d.ow, kx, stride, padding, &lo, &hi);
                            double acc = 0.0;
                            for (int img = 0; img < in.n; ++img) {
                                const float* g_ch =
                                    g + (static_cast<std::int64_t>(img) * wt.n + oc) * out_plane;
                                const float* in_ch =
                                    pin +
                                    (static_cast<std::int64_t>(img) * in.c + ic) * in_plane;
                                for (int oy = 0; oy < d.oh; ++oy) {
                                    const int iy = oy * stride + ky - padding;
                                    if (iy < 0 || iy >= in.h) continue;
                                    const float* g_row =
                                        g_ch + static_cast<std::int64_t>(oy) * d.ow;
                                    const float* in_row =
                                        in_ch + static_cast<std::int64_t>(iy) * in.w + kx -
                                        padding;
                                    if (stride == 1) {
                                        for (int ox = lo; ox < hi; ++ox)
                                            acc += static_cast<double>(g_row[ox]) * in_row[ox];
                                    } else {
                                        for (int ox = lo; ox < hi; ++ox)
                                            acc += static_cast<double>(g_row[ox]) *
                                                   in_row[ox * stride];
                                    }
                                }
                            }
                            gw[((static_cast<std::int64_t>(oc) * in.c + ic) * wt.h + ky) * wt.w +
                               kx] += static_cast<float>(acc);
                        }
                    }
                });
            }
            if (bias.defined() && bias.requires_grad()) {
                float* gb = bias.grad();
                parallel_for(0, wt.n, [&](std::int64_t oc) {
                    double acc = 0.0;
                    for (int img = 0; img < in.n; ++img) {
                        const float* g_ch =
                            g + (static_cast<std::int64_t>(img) * wt.n + oc) * out_plane;
                        for (std::int64_t p = 0; p < out_plane; ++p) acc += g_ch[p];
                    }
                    gb[oc] += static_cast<float>(acc);
                });
            }
        });
    }
    return out;
}

Tensor depthwise_conv2d(Tape* tape, const Tensor& input, const Tensor& weight,
                        const Tensor& bias, int padding) {
    const Shape4 in = input.shape();
    const Shape4 wt = weight.shape();
    if (wt.n != in.c || wt.c != 1) {
        fail("depthwise_conv2d: weight " + wt.str() + " must be (c, 1, kh, kw) with c = " +
             std::to_string(in.c));
    }
    if (bias.defined() && bias.shape() != Shape4{1, in.c, 1, 1}) {
        fail("depthwise_conv2d: bias shape " + bias.shape().str() + " does not match channels");
    }
    const int stride = 1;
    const ConvDims d = conv_dims("depthwise_conv2d", in, wt, stride, padding);
    input.check_finite("depthwise_conv2d");
    weight.check_finite("depthwise_conv2d");

    Tensor out = Tensor::zeros({in.n, in.c, d.oh, d.ow});
    const float* pin = input.data();
    const float* pw = weight.data();
    const float* pb = bias.defined() ? bias.data() : nullptr;
    float* po = out.data();
    const std::int64_t in_plane = static_cast<std::int64_t>(in.h) * in.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(d.oh) * d.ow;

    parallel_for(0, static_cast<std::int64_t>(in.n) * in.c, [&](std::int64_t job) {
        const int img = static_cast<int>(job / in.c);
        const int ch = static_cast<int>(job % in.c);
        std::vector<double> acc(d.ow);
        const float* in_ch = pin + (static_cast<std::int64_t>(img) * in.c + ch) * in_plane;
        const float* w_ch = pw + static_cast<std::int64_t>(ch) * wt.h * wt.w;
        float* out_ch = po + (static_cast<std::int64_t>(img) * in.c + ch) * out_plane;
        for (int oy = 0; oy < d.oh; ++oy) {
            const double init = pb ? static_cast<double>(pb[ch]) : 0.0;
            for (int ox = 0; ox < d.ow; ++ox) acc[ox] = init;
            for (int ky = 0; ky < wt.h; ++ky) {
                const int iy = oy + ky - padding;
                if (iy < 0 || iy >= in.h) continue;
                const float* in_row = in_ch + static_cast<std::int64_t>(iy) * in.w;
                for (int kx = 0; kx < wt.w; ++kx) {
                    const double wv = w_ch[ky * wt.w + kx];
                    int lo, hi;
                    tap_range(in.w, d.ow, kx, stride, padding, &lo, &hi);
                    const float* src = in_row + kx - padding;
                    for (int ox = lo; ox < hi; ++ox) acc[ox] += wv * src[ox];
                }
            }
            float* out_row = out_ch + static_cast<std::int64_t>(oy) * d.ow;
            for (int ox = 0; ox < d.ow; ++ox) out_row[ox] = static_cast<float>(acc[ox]);
        }
    });

    if (tape && (input.requires_grad() || weight.requires_grad() ||
                 (bias.defined() && bias.requires_grad()))) {
        out.set_requires_grad(true);
        tape->record([input, weight, bias, out, padding, d, in, wt, in_plane,
                      out_plane]() mutable {
            const float* g = out.grad();
            const float* pin = input.data();
            const float* pw = weight.data();
            parallel_for(0, static_cast<std::int64_t>(in.n) * in.c, [&](std::int64_t job) {
                const int img = static_cast<int>(job / in.c);
                const int ch = static_cast<int>(job % in.c);
                const float* g_ch = g + (static_cast<std::int64_t>(img) * in.c + ch) * out_plane;
                const float* in_ch =
                    pin + (static_cast<std::int64_t>(img) * in.c + ch) * in_plane;
                const float* w_ch = pw + static_cast<std::int64_t>(ch) * wt.h * wt.w;
                if (input.requires_grad()) {
                    float* gi_ch =
                        input.grad() + (static_cast<std::int64_t>(img) * in.c + ch) * in_plane;
                    std::vector<double> acc(in.w);
                    for (int iy = 0; iy < in.h; ++iy) {
                        for (int ix = 0; ix < in.w; ++ix) acc[ix] = 0.0;
                        for (int ky = 0; ky < wt.h; ++ky) {
                            const int oy = iy - ky + padding;
                            if (oy < 0 || oy >= d.oh) continue;
                            const float* g_row = g_ch + static_cast<std::int64_t>(oy) * d.ow;
                            for (int kx = 0; kx < wt.w; ++kx) {
                                const double wv = w_ch[ky * wt.w + kx];
                                int lo, hi;
                                tap_range(in.w, d.ow, kx, 1, padding, &lo, &hi);
                                double* dst = acc.data() + kx - padding;
                                for (int ox = lo; ox < hi; ++ox) dst[ox] += wv * g_row[ox];
                            }
                        }
                        float* gi_row = gi_ch + static_cast<std::int64_t>(iy) * in.w;
                        for (int ix = 0; ix < in.w; ++ix)
                            gi_row[ix] += static_cast<float>(acc[ix]);
                    }
                }
            });
            // Weight/bias grads accumulate over batch, so run per channel.
            if (weight.requires_grad()) {
                float* gw = weight.grad();
                parallel_for(0, in.c, [&](std::int64_t ch) {
                    for (int ky = 0; ky < wt.h; ++ky) {
                        for (int kx = 0; kx < wt.w; ++kx) {
                            int lo, hi;
                            tap_range(in.w, d.ow, kx, 1, padding, &lo, &hi);
                            double acc = 0.0;
                            for (int img = 0; img < in.n; ++img) {
                                const float* g_ch =
                                    g + (static_cast<std::int64_t>(img) * in.c + ch) * out_plane;
                                const float* in_ch =
                                    pin +
                                    (static_cast<std::int64_t>(img) * in.c + ch) * in_plane;
                                for (int oy = 0; oy < d.oh; ++oy) {
                                    const int iy = oy + ky - padding;
                                    if (iy < 0 || iy >= in.h) continue;
                                    const float* g_row =
                                        g_ch + static_cast<std::int64_t>(oy) * d.ow;
                                    const float* in_row =
                                        in_ch + static_cast<std::int64_t>(iy) * in.w + kx -
                                        padding;
                                    for (int ox = lo; ox < hi; ++ox)
                                        acc += static_cast<double>(g_row[ox]) * in_row[ox];
                                }
                            }
                            gw[(static_cast<std::int64_t>(ch) * wt.h + ky) * wt.w + kx] +=
                                static_cast<float>(acc);
                        }
                    }
                });
            }
            if (bias.defined() && bias.requires_grad()) {
                float* gb = bias.grad();
                parallel_for(0, in.c, [&](std::int64_t ch) {
                    double acc = 0.0;
                    for (int img = 0; img < in.n; ++img) {
                        const float* g_ch =
                            g + (static_cast<std::int64_t>(img) * in.c + ch) * out_plane;
                        for (std::int64_t p = 0; p < out_plane; ++p) acc += g_ch[p];
                    }
                    gb[ch] += static_cast<float>(acc);
                });
            }
        });
    }
    return out;
}

}  // namespace depthfill
