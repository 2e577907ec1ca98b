#include "depthfill/losses.hpp"

#include "depthfill/ops.hpp"

#include <cmath>
#include <string>

namespace depthfill {

namespace {

void require_loss_shapes(const char* op, const Tensor& pred, const Tensor& gt,
                         const Tensor& mask) {
    if (!(pred.shape() == gt.shape()) || !(pred.shape() == mask.shape())) {
        fail(std::string(op) + ": pred " + pred.shape().str() + ", gt " + gt.shape().str() +
             ", mask " + mask.shape().str() + " must share one (n, 1, h, w) shape");
    }
    if (pred.c() != 1) {
        fail(std::string(op) + ": expected single-channel maps, got " + pred.shape().str());
    }
}

constexpr double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

void sobel_at(const float* plane, int w, int y, int x, double* gx, double* gy) {
    double ax = 0.0, ay = 0.0;
    for (int dy = -1; dy <= 1; ++dy) {
        const float* row = plane + static_cast<std::int64_t>(y + dy) * w + x;
        for (int dx = -1; dx <= 1; ++dx) {
            const double v = row[dx];
            ax += kSobelX[dy + 1][dx + 1] * v;
            ay += kSobelY[dy + 1][dx + 1] * v;
        }
    }
    *gx = ax;
    *gy = ay;
}

bool sobel_support_valid(const float* mask_plane, int w, int y, int x) {
    for (int dy = -1; dy <= 1; ++dy) {
        const float* row = mask_plane + static_cast<std::int64_t>(y + dy) * w + x;
        for (int dx = -1; dx <= 1; ++dx) {
            if (row[dx] == 0.0f) return false;
        }
    }
    return true;
}

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

/// Camera ray through pixel center: ((x - cx)/fx, (y - cy)/fy, 1).
Vec3 pixel_ray(const CameraIntrinsics& k, int y, int x) {
    return {(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0};
}

constexpr double kDegenerateNormal = 1e-20;  // squared-length floor

/// Un-normalized surface normal at (y, x) from central-difference tangents of
/// the back-projected depth. Also returns the tangents for the backward pass.
void cross_normal(const float* plane, int w, const CameraIntrinsics& k, int y, int x, Vec3* tx,
                  Vec3* ty, Vec3* c) {
    const double d_xp = plane[static_cast<std::int64_t>(y) * w + x + 1];
    const double d_xm = plane[static_cast<std::int64_t>(y) * w + x - 1];
    const double d_yp = plane[static_cast<std::int64_t>(y + 1) * w + x];
    const double d_ym = plane[static_cast<std::int64_t>(y - 1) * w + x];
    const Vec3 rxp = pixel_ray(k, y, x + 1);
    const Vec3 rxm = pixel_ray(k, y, x - 1);
    const Vec3 ryp = pixel_ray(k, y + 1, x);
    const Vec3 rym = pixel_ray(k, y - 1, x);
    *tx = {rxp.x * d_xp - rxm.x * d_xm, rxp.y * d_xp - rxm.y * d_xm, d_xp - d_xm};
    *ty = {ryp.x * d_yp - rym.x * d_ym, ryp.y * d_yp - rym.y * d_ym, d_yp - d_ym};
    *c = cross(*tx, *ty);
}

bool cross_neighbors_valid(const float* mask_plane, int w, int y, int x) {
    return mask_plane[static_cast<std::int64_t>(y) * w + x + 1] != 0.0f &&
           mask_plane[static_cast<std::int64_t>(y) * w + x - 1] != 0.0f &&
           mask_plane[static_cast<std::int64_t>(y + 1) * w + x] != 0.0f &&
           mask_plane[static_cast<std::int64_t>(y - 1) * w + x] != 0.0f;
}

}  // namespace

void LossConfig::validate() const {
    if (w_coarse < 0 || w_refined < 0 || w_normal < 0 || w_depth < 0 || w_grad < 0) {
        fail("loss config: weights must be non-negative");
    }
    if (w_coarse == 0 && w_refined == 0) {
        fail("loss config: at least one stage weight must be positive");
    }
    if (apply_range && !(range_min < range_max)) {
        fail("loss config: valid range min must be below max");
    }
}

Tensor loss_mask_from_gt(const Tensor& gt, const LossConfig& config) {
    Tensor mask = Tensor::zeros(gt.shape());
    const float* pg = gt.data();
    float* pm = mask.data();
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        const float v = pg[i];
        bool ok = v > 0.0f && std::isfinite(v);
        if (ok && config.apply_range) {
            ok = v >= config.range_min && v <= config.range_max;
        }
        pm[i] = ok ? 1.0f : 0.0f;
    }
    return mask;
}

Tensor depth_loss(Tape* tape, const Tensor& pred, const Tensor& gt, const Tensor& mask,
                  bool* empty_mask) {
    require_loss_shapes("depth_loss", pred, gt, mask);
    pred.check_finite("depth_loss");
    const float* pp = pred.data();
    const float* pg = gt.data();
    const float* pm = mask.data();
    double sum = 0.0;
    std::int64_t count = 0;
    const std::int64_t total = static_cast<std::int64_t>(pred.numel());
    for (std::int64_t i = 0; i < total; ++i) {
        if (pm[i] == 0.0f) continue;
        sum += std::abs(static_cast<double>(pp[i]) - pg[i]);
        ++count;
    }
    if (empty_mask) *empty_mask = (count == 0);
    if (count == 0) return Tensor::scalar(0.0f);
    Tensor out = Tensor::scalar(static_cast<float>(sum / count));
    if (tape && pred.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([pred, gt, mask, out, count]() mutable {
            const float g = out.grad()[0];
            const float* pp = pred.data();
            const float* pg = gt.data();
            const float* pm = mask.data();
            float* gp = pred.grad();
            const float inv = g / static_cast<float>(count);
            const std::int64_t total = static_cast<std::int64_t>(pred.numel());
            for (std::int64_t i = 0; i < total; ++i) {
                if (pm[i] == 0.0f) continue;
                const float d = pp[i] - pg[i];
                gp[i] += d > 0.0f ? inv : (d < 0.0f ? -inv : 0.0f);
            }
        });
    }
    return out;
}

Tensor gradient_loss(Tape* tape, const Tensor& pred, const Tensor& gt, const Tensor& mask,
                     bool* empty_mask) {
    require_loss_shapes("gradient_loss", pred, gt, mask);
    pred.check_finite("gradient_loss");
    const Shape4 s = pred.shape();
    const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;

    double sum = 0.0;
    std::int64_t count = 0;
    for (int img = 0; img < s.n; ++img) {
        const float* pp = pred.data() + img * hw;
        const float* pg = gt.data() + img * hw;
        const float* pm = mask.data() + img * hw;
        for (int y = 1; y < s.h - 1; ++y) {
            for (int x = 1; x < s.w - 1; ++x) {
                if (!sobel_support_valid(pm, s.w, y, x)) continue;
                double px, py, qx, qy;
                sobel_at(pp, s.w, y, x, &px, &py);
                sobel_at(pg, s.w, y, x, &qx, &qy);
                sum += 0.5 * (std::abs(px - qx) + std::abs(py - qy));
                ++count;
            }
        }
    }
    if (empty_mask) *empty_mask = (count == 0);
    if (count == 0) return Tensor::scalar(0.0f);
    Tensor out = Tensor::scalar(static_cast<float>(sum / count));
    if (tape && pred.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([pred, gt, mask, out, s, hw, count]() mutable {
            const double g = out.grad()[0];
            const double scale = 0.5 * g / static_cast<double>(count);
            for (int img = 0; img < s.n; ++img) {
                const float* pp = pred.data() + img * hw;
                const float* pg = gt.data() + img * hw;
                const float* pm = mask.data() + img * hw;
                float* gp = pred.grad() + img * hw;
                for (int y = 1; y < s.h - 1; ++y) {
                    for (int x = 1; x < s.w - 1; ++x) {
                        if (!sobel_support_valid(pm, s.w, y, x)) continue;
                        double px, py, qx, qy;
                        sobel_at(pp, s.w, y, x, &px, &py);
                        sobel_at(pg, s.w, y, x, &qx, &qy);
                        const double sx = px > qx ? 1.0 : (px < qx ? -1.0 : 0.0);
                        const double sy = py > qy ? 1.0 : (py < qy ? -1.0 : 0.0);
                        for (int dy = -1; dy <= 1; ++dy) {
                            float* row = gp + static_cast<std::int64_t>(y + dy) * s.w + x;
                            for (int dx = -1; dx <= 1; ++dx) {
                                row[dx] += static_cast<float>(
                                    scale * (sx * kSobelX[dy + 1][dx + 1] +
                                             sy * kSobelY[dy + 1][dx + 1]));
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor normal_loss(Tape* tape, const Tensor& pred, const Tensor& gt,
                   const CameraIntrinsics& intrinsics, const Tensor& mask, bool* empty_mask) {
    require_loss_shapes("normal_loss", pred, gt, mask);
    if (intrinsics.fx <= 0.0 || intrinsics.fy <= 0.0) {
        fail("normal_loss: focal lengths must be positive");
    }
    pred.check_finite("normal_loss");
    const Shape4 s = pred.shape();
    const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;

    double sum = 0.0;
    std::int64_t count = 0;
    for (int img = 0; img < s.n; ++img) {
        const float* pp = pred.data() + img * hw;
        const float* pg = gt.data() + img * hw;
        const float* pm = mask.data() + img * hw;
        for (int y = 1; y < s.h - 1; ++y) {
            for (int x = 1; x < s.w - 1; ++x) {
                if (!cross_neighbors_valid(pm, s.w, y, x)) continue;
                Vec3 tx, ty, cp, tgx, tgy, cg;
                cross_normal(pp, s.w, intrinsics, y, x, &tx, &ty, &cp);
                cross_normal(pg, s.w, intrinsics, y, x, &tgx, &tgy, &cg);
                const double np2 = dot(cp, cp);
                const double ng2 = dot(cg, cg);
                if (np2 < kDegenerateNormal || ng2 < kDegenerateNormal) continue;
                sum += 1.0 - dot(cp, cg) / (std::sqrt(np2) * std::sqrt(ng2));
                ++count;
            }
        }
    }
    if (empty_mask) *empty_mask = (count == 0);
    if (count == 0) return Tensor::scalar(0.0f);
    Tensor out = Tensor::scalar(static_cast<float>(sum / count));
    if (tape && pred.requires_grad()) {
        out.set_requires_grad(true);
        const CameraIntrinsics k = intrinsics;
        tape->record([pred, gt, mask, out, s, hw, count, k]() mutable {
            const double g = out.grad()[0];
            const double scale = g / static_cast<double>(count);
            for (int img = 0; img < s.n; ++img) {
                const float* pp = pred.data() + img * hw;
                const float* pg = gt.data() + img * hw;
                const float* pm = mask.data() + img * hw;
                float* gp = pred.grad() + img * hw;
                for (int y = 1; y < s.h - 1; ++y) {
                    for (int x = 1; x < s.w - 1; ++x) {
                        if (!cross_neighbors_valid(pm, s.w, y, x)) continue;
                        Vec3 tx, ty, cp, tgx, tgy, cg;
                        cross_normal(pp, s.w, k, y, x, &tx, &ty, &cp);
                        cross_normal(pg, s.w, k, y, x, &tgx, &tgy, &cg);
                        const double np2 = dot(cp, cp);
                        const double ng2 = dot(cg, cg);
                        if (np2 < kDegenerateNormal || ng2 < kDegenerateNormal) continue;
                        const double np = std::sqrt(np2);
                        const Vec3 n{cp.x / np, cp.y / np, cp.z / np};
                        const double mg = std::sqrt(ng2);
                        const Vec3 m{cg.x / mg, cg.y / mg, cg.z / mg};
                        // d(1 - n.m)/dc = -(m - n (n.m)) / |c|
                        const double nm = dot(n, m);
                        const Vec3 gc{-scale * (m.x - n.x * nm) / np,
                                      -scale * (m.y - n.y * nm) / np,
                                      -scale * (m.z - n.z * nm) / np};
                        const Vec3 gtx = cross(ty, gc);
                        const Vec3 gty = cross(gc, tx);
                        gp[static_cast<std::int64_t>(y) * s.w + x + 1] +=
                            static_cast<float>(dot(gtx, pixel_ray(k, y, x + 1)));
                        gp[static_cast<std::int64_t>(y) * s.w + x - 1] -=
                            static_cast<float>(dot(gtx, pixel_ray(k, y, x - 1)));
                        gp[static_cast<std::int64_t>(y + 1) * s.w + x] +=
                            static_cast<float>(dot(gty, pixel_ray(k, y + 1, x)));
                        gp[static_cast<std::int64_t>(y - 1) * s.w + x] -=
                            static_cast<float>(dot(gty, pixel_ray(k, y - 1, x)));
                    }
                }
            }
        });
    }
    return out;
}

LossBreakdown total_loss(Tape* tape, const Tensor& coarse, const Tensor& refined,
                         const Tensor& gt, const CameraIntrinsics& intrinsics,
                         const LossConfig& config) {
    config.validate();
    LossBreakdown breakdown;
    Tensor mask = loss_mask_from_gt(gt, config);

    auto stage = [&](const Tensor& pred, double* d_out, double* g_out, double* n_out) {
        bool empty_d = false, empty_g = false, empty_n = false;
        Tensor ld = depth_loss(tape, pred, gt, mask, &empty_d);
        Tensor lg = gradient_loss(tape, pred, gt, mask, &empty_g);
        Tensor ln = normal_loss(tape, pred, gt, intrinsics, mask, &empty_n);
        breakdown.empty_mask_warning |= empty_d || empty_g || empty_n;
        *d_out = ld.item();
        *g_out = lg.item();
        *n_out = ln.item();
        return add(tape, scale(tape, ld, config.w_depth),
                   add(tape, scale(tape, lg, config.w_grad),
                       scale(tape, ln, config.w_normal)));
    };

    Tensor coarse_stage = stage(coarse, &breakdown.coarse_depth, &breakdown.coarse_grad,
                                &breakdown.coarse_normal);
    breakdown.coarse_total = coarse_stage.item();
    Tensor total = scale(tape, coarse_stage, config.w_coarse);
    if (refined.defined()) {
        Tensor refined_stage = stage(refined, &breakdown.refined_depth,
                                     &breakdown.refined_grad, &breakdown.refined_normal);
        breakdown.refined_total = refined_stage.item();
        total = add(tape, total, scale(tape, refined_stage, config.w_refined));
    }
    breakdown.total = total.item();
    breakdown.total_tensor = total;
    return breakdown;
}

}  // namespace depthfill
