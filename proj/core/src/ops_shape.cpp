#include "depthfill/ops.hpp"
#include "depthfill/threading.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace depthfill {

Tensor concat_channel(Tape* tape, const Tensor& a, const Tensor& b) {
    const Shape4 sa = a.shape();
    const Shape4 sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        fail("concat_channel: shapes " + sa.str() + " and " + sb.str() +
             " differ outside the channel axis");
    }
    a.check_finite("concat_channel");
    b.check_finite("concat_channel");
    Tensor out = Tensor::zeros({sa.n, sa.c + sb.c, sa.h, sa.w});
    const std::int64_t plane = static_cast<std::int64_t>(sa.h) * sa.w;
    const std::int64_t a_img = sa.c * plane;
    const std::int64_t b_img = sb.c * plane;
    for (int img = 0; img < sa.n; ++img) {
        float* dst = out.data() + static_cast<std::int64_t>(img) * (a_img + b_img);
        std::memcpy(dst, a.data() + img * a_img, a_img * sizeof(float));
        std::memcpy(dst + a_img, b.data() + img * b_img, b_img * sizeof(float));
    }
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a, b, out, a_img, b_img, sa]() mutable {
            const float* g = out.grad();
            for (int img = 0; img < sa.n; ++img) {
                const float* src = g + static_cast<std::int64_t>(img) * (a_img + b_img);
                if (a.requires_grad()) {
                    float* ga = a.grad() + img * a_img;
                    for (std::int64_t i = 0; i < a_img; ++i) ga[i] += src[i];
                }
                if (b.requires_grad()) {
                    float* gb = b.grad() + img * b_img;
                    for (std::int64_t i = 0; i < b_img; ++i) gb[i] += src[a_img + i];
                }
            }
        });
    }
    return out;
}

namespace {

// Source taps for bilinear x2 output index o: coordinate (o + 0.5)/2 - 0.5,
// taps clamped to the image.
struct Tap {
    int lo, hi;
    float w_hi;  // weight of the hi tap; lo gets 1 - w_hi
};

Tap tap_for(int o, int extent) {
    const float s = 0.5f * (o + 0.5f) - 0.5f;
    const float fl = std::floor(s);
    Tap t;
    t.w_hi = s - fl;
    t.lo = std::clamp(static_cast<int>(fl), 0, extent - 1);
    t.hi = std::clamp(static_cast<int>(fl) + 1, 0, extent - 1);
    return t;
}

}  // namespace

Tensor bilinear_upsample_x2(Tape* tape, const Tensor& input) {
    const Shape4 in = input.shape();
    input.check_finite("bilinear_upsample_x2");
    const int oh = in.h * 2;
    const int ow = in.w * 2;
    Tensor out = Tensor::zeros({in.n, in.c, oh, ow});
    const std::int64_t in_plane = static_cast<std::int64_t>(in.h) * in.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;
    const float* pi = input.data();
    float* po = out.data();
    parallel_for(0, static_cast<std::int64_t>(in.n) * in.c, [&](std::int64_t plane_idx) {
        const float* src = pi + plane_idx * in_plane;
        float* dst = po + plane_idx * out_plane;
        for (int oy = 0; oy < oh; ++oy) {
            const Tap ty = tap_for(oy, in.h);
            const float* row_lo = src + static_cast<std::int64_t>(ty.lo) * in.w;
            const float* row_hi = src + static_cast<std::int64_t>(ty.hi) * in.w;
            float* out_row = dst + static_cast<std::int64_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
                const Tap tx = tap_for(ox, in.w);
                const float top = row_lo[tx.lo] * (1.0f - tx.w_hi) + row_lo[tx.hi] * tx.w_hi;
                const float bot = row_hi[tx.lo] * (1.0f - tx.w_hi) + row_hi[tx.hi] * tx.w_hi;
                out_row[ox] = top * (1.0f - ty.w_hi) + bot * ty.w_hi;
            }
        }
    });
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([input, out, in, oh, ow, in_plane, out_plane]() mutable {
            const float* g = out.grad();
            float* gi = input.grad();
            parallel_for(0, static_cast<std::int64_t>(in.n) * in.c, [&](std::int64_t plane_idx) {
                const float* g_plane = g + plane_idx * out_plane;
                float* gi_plane = gi + plane_idx * in_plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const Tap ty = tap_for(oy, in.h);
                    const float* g_row = g_plane + static_cast<std::int64_t>(oy) * ow;
                    float* lo_row = gi_plane + static_cast<std::int64_t>(ty.lo) * in.w;
                    float* hi_row = gi_plane + static_cast<std::int64_t>(ty.hi) * in.w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const Tap tx = tap_for(ox, in.w);
                        const float gv = g_row[ox];
                        lo_row[tx.lo] += gv * (1.0f - ty.w_hi) * (1.0f - tx.w_hi);
                        lo_row[tx.hi] += gv * (1.0f - ty.w_hi) * tx.w_hi;
                        hi_row[tx.lo] += gv * ty.w_hi * (1.0f - tx.w_hi);
                        hi_row[tx.hi] += gv * ty.w_hi * tx.w_hi;
                    }
                }
            });
        });
    }
    return out;
}

Tensor avgpool_x2(Tape* tape, const Tensor& input) {
    const Shape4 in = input.shape();
    if (in.h % 2 != 0 || in.w % 2 != 0) {
        fail("avgpool_x2: spatial dims of " + in.str() + " must be even");
    }
    input.check_finite("avgpool_x2");
    const int oh = in.h / 2;
    const int ow = in.w / 2;
    Tensor out = Tensor::zeros({in.n, in.c, oh, ow});
    const std::int64_t in_plane = static_cast<std::int64_t>(in.h) * in.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;
    const float* pi = input.data();
    float* po = out.data();
    parallel_for(0, static_cast<std::int64_t>(in.n) * in.c, [&](std::int64_t plane_idx) {
        const float* src = pi + plane_idx * in_plane;
        float* dst = po + plane_idx * out_plane;
        for (int oy = 0; oy < oh; ++oy) {
            const float* r0 = src + static_cast<std::int64_t>(2 * oy) * in.w;
            const float* r1 = r0 + in.w;
            float* out_row = dst + static_cast<std::int64_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
                out_row[ox] =
                    0.25f * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
            }
        }
    });
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([input, out, in, oh, ow, in_plane, out_plane]() mutable {
            const float* g = out.grad();
            float* gi = input.grad();
            parallel_for(0, static_cast<std::int64_t>(in.n) * in.c, [&](std::int64_t plane_idx) {
                const float* g_plane = g + plane_idx * out_plane;
                float* gi_plane = gi + plane_idx * in_plane;
                for (int iy = 0; iy < in.h; ++iy) {
                    const float* g_row = g_plane + static_cast<std::int64_t>(iy / 2) * ow;
                    float* gi_row = gi_plane + static_cast<std::int64_t>(iy) * in.w;
                    for (int ix = 0; ix < in.w; ++ix) {
                        gi_row[ix] += 0.25f * g_row[ix / 2];
                    }
                }
            });
        });
    }
    return out;
}

}  // namespace depthfill
