#include "depthfill/check/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace depthfill::check {

namespace {

int clampi(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

}  // namespace

Arr4 Arr4::from_tensor(const Tensor& t) {
    Arr4 a(t.n(), t.c(), t.h(), t.w());
    const float* src = t.data();
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] = src[i];
    return a;
}

Arr4 conv2d_ref(const Arr4& x, const Arr4& w, const Arr4* bias, int stride, int padding) {
    const int oh = (x.h + 2 * padding - w.h) / stride + 1;
    const int ow = (x.w + 2 * padding - w.w) / stride + 1;
    Arr4 out(x.n, w.n, oh, ow);
    for (int in = 0; in < x.n; ++in) {
        for (int oc = 0; oc < w.n; ++oc) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias ? bias->v[oc] : 0.0;
                    for (int ic = 0; ic < x.c; ++ic) {
                        for (int ky = 0; ky < w.h; ++ky) {
                            for (int kx = 0; kx < w.w; ++kx) {
                                const int iy = oy * stride + ky - padding;
                                const int ix = ox * stride + kx - padding;
                                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                                acc += x.at(in, ic, iy, ix) * w.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    out.at(in, oc, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

Arr4 depthwise_conv2d_ref(const Arr4& x, const Arr4& w, const Arr4* bias, int padding) {
    const int oh = x.h + 2 * padding - w.h + 1;
    const int ow = x.w + 2 * padding - w.w + 1;
    Arr4 out(x.n, x.c, oh, ow);
    for (int in = 0; in < x.n; ++in) {
        for (int ch = 0; ch < x.c; ++ch) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias ? bias->v[ch] : 0.0;
                    for (int ky = 0; ky < w.h; ++ky) {
                        for (int kx = 0; kx < w.w; ++kx) {
                            const int iy = oy + ky - padding;
                            const int ix = ox + kx - padding;
                            if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                            acc += x.at(in, ch, iy, ix) * w.at(ch, 0, ky, kx);
                        }
                    }
                    out.at(in, ch, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

Arr4 softmax_channel_ref(const Arr4& x) {
    Arr4 out(x.n, x.c, x.h, x.w);
    for (int in = 0; in < x.n; ++in) {
        for (int y = 0; y < x.h; ++y) {
            for (int ix = 0; ix < x.w; ++ix) {
                double mx = x.at(in, 0, y, ix);
                for (int c = 1; c < x.c; ++c) mx = std::max(mx, x.at(in, c, y, ix));
                double denom = 0.0;
                for (int c = 0; c < x.c; ++c) denom += std::exp(x.at(in, c, y, ix) - mx);
                for (int c = 0; c < x.c; ++c) {
                    out.at(in, c, y, ix) = std::exp(x.at(in, c, y, ix) - mx) / denom;
                }
            }
        }
    }
    return out;
}

Arr4 layer_norm_channel_ref(const Arr4& x, const Arr4& gamma, const Arr4& beta, double eps) {
    Arr4 out(x.n, x.c, x.h, x.w);
    for (int in = 0; in < x.n; ++in) {
        for (int y = 0; y < x.h; ++y) {
            for (int ix = 0; ix < x.w; ++ix) {
                double mean = 0.0;
                for (int c = 0; c < x.c; ++c) mean += x.at(in, c, y, ix);
                mean /= x.c;
                double var = 0.0;
                for (int c = 0; c < x.c; ++c) {
                    const double d = x.at(in, c, y, ix) - mean;
                    var += d * d;
                }
                var /= x.c;
                const double inv = 1.0 / std::sqrt(var + eps);
                for (int c = 0; c < x.c; ++c) {
                    out.at(in, c, y, ix) =
                        (x.at(in, c, y, ix) - mean) * inv * gamma.v[c] + beta.v[c];
                }
            }
        }
    }
    return out;
}

Arr4 add_ref(const Arr4& a, const Arr4& b) {
    Arr4 out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

Arr4 multiply_ref(const Arr4& a, const Arr4& b) {
    Arr4 out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
    return out;
}

Arr4 relu_ref(const Arr4& x) {
    Arr4 out = x;
    for (double& v : out.v) v = v > 0.0 ? v : 0.0;
    return out;
}

Arr4 sigmoid_ref(const Arr4& x) {
    Arr4 out = x;
    for (double& v : out.v) v = 1.0 / (1.0 + std::exp(-v));
    return out;
}

Arr4 softplus_ref(const Arr4& x) {
    Arr4 out = x;
    for (double& v : out.v) v = v > 20.0 ? v : std::log1p(std::exp(v));
    return out;
}

Arr4 concat_channel_ref(const Arr4& a, const Arr4& b) {
    Arr4 out(a.n, a.c + b.c, a.h, a.w);
    for (int in = 0; in < a.n; ++in) {
        for (int c = 0; c < a.c; ++c)
            for (int y = 0; y < a.h; ++y)
                for (int x = 0; x < a.w; ++x) out.at(in, c, y, x) = a.at(in, c, y, x);
        for (int c = 0; c < b.c; ++c)
            for (int y = 0; y < a.h; ++y)
                for (int x = 0; x < a.w; ++x) out.at(in, a.c + c, y, x) = b.at(in, c, y, x);
    }
    return out;
}

Arr4 bilinear_upsample_x2_ref(const Arr4& x) {
    Arr4 out(x.n, x.c, 2 * x.h, 2 * x.w);
    for (int in = 0; in < x.n; ++in) {
        for (int c = 0; c < x.c; ++c) {
            for (int oy = 0; oy < 2 * x.h; ++oy) {
                const double sy = 0.5 * (oy + 0.5) - 0.5;
                const int y0r = static_cast<int>(std::floor(sy));
                const double fy = sy - y0r;
                const int y0 = clampi(y0r, x.h - 1);
                const int y1 = clampi(y0r + 1, x.h - 1);
                for (int ox = 0; ox < 2 * x.w; ++ox) {
                    const double sx = 0.5 * (ox + 0.5) - 0.5;
                    const int x0r = static_cast<int>(std::floor(sx));
                    const double fx = sx - x0r;
                    const int x0 = clampi(x0r, x.w - 1);
                    const int x1 = clampi(x0r + 1, x.w - 1);
                    const double top =
                        x.at(in, c, y0, x0) * (1.0 - fx) + x.at(in, c, y0, x1) * fx;
                    const double bot =
                        x.at(in, c, y1, x0) * (1.0 - fx) + x.at(in, c, y1, x1) * fx;
                    out.at(in, c, oy, ox) = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    return out;
}

Arr4 avgpool_x2_ref(const Arr4& x) {
    Arr4 out(x.n, x.c, x.h / 2, x.w / 2);
    for (int in = 0; in < x.n; ++in) {
        for (int c = 0; c < x.c; ++c) {
            for (int oy = 0; oy < out.h; ++oy) {
                for (int ox = 0; ox < out.w; ++ox) {
                    out.at(in, c, oy, ox) =
                        0.25 * (x.at(in, c, 2 * oy, 2 * ox) + x.at(in, c, 2 * oy, 2 * ox + 1) +
                                x.at(in, c, 2 * oy + 1, 2 * ox) +
                                x.at(in, c, 2 * oy + 1, 2 * ox + 1));
                }
            }
        }
    }
    return out;
}

double sum_all_ref(const Arr4& x) {
    double acc = 0.0;
    for (double v : x.v) acc += v;
    return acc;
}

double mean_all_ref(const Arr4& x) { return sum_all_ref(x) / static_cast<double>(x.v.size()); }

Arr4 cmfm_forward_ref(const std::vector<Arr4>& in) {
    if (in.size() != 26) {
        throw std::invalid_argument("cmfm_forward_ref: expected 26 inputs");
    }
    const Arr4& rgb = in[0];
    const Arr4& depth = in[1];
    // Eq. 1 projections.
    Arr4 w_fuse = add_ref(conv2d_ref(rgb, in[2], &in[3], 1, 0),
                          conv2d_ref(depth, in[4], &in[5], 1, 0));
    // Eq. 2 multi-scale branches.
    auto branch = [&](const Arr4& f, const Arr4& k3w, const Arr4& k3b, const Arr4& k5w,
                      const Arr4& k5b, const Arr4& mw, const Arr4& mb) {
        Arr4 s3 = conv2d_ref(f, k3w, &k3b, 1, 1);
        Arr4 s5 = conv2d_ref(f, k5w, &k5b, 1, 2);
        return conv2d_ref(concat_channel_ref(s3, s5), mw, &mb, 1, 0);
    };
    Arr4 raw_rgb = branch(rgb, in[6], in[7], in[8], in[9], in[10], in[11]);
    Arr4 raw_depth = branch(depth, in[12], in[13], in[14], in[15], in[16], in[17]);
    // Eq. 3 combination.
    Arr4 fuse_sm = softmax_channel_ref(w_fuse);
    Arr4 w_rgb = softmax_channel_ref(add_ref(raw_rgb, fuse_sm));
    Arr4 w_depth = softmax_channel_ref(add_ref(raw_depth, fuse_sm));
    // Eq. 4 cross gating, then the additive fusion.
    Arr4 fused = add_ref(multiply_ref(rgb, w_depth), multiply_ref(depth, w_rgb));
    // Eq. 5 bottleneck with residual and norm.
    Arr4 expanded = conv2d_ref(fused, in[18], &in[19], 1, 0);
    Arr4 spatial = depthwise_conv2d_ref(expanded, in[20], &in[21], 1);
    Arr4 temp = conv2d_ref(relu_ref(spatial), in[22], &in[23], 1, 0);
    return layer_norm_channel_ref(add_ref(temp, fused), in[24], in[25], 1e-5);
}

Arr4 refine_ref(const std::vector<Arr4>& in, const RefinementSchedule& schedule) {
    const Arr4& coarse = in[0];
    const Arr4& sparse = in[1];
    const Arr4& mask = in[2];
    const Arr4& phi = in[3];
    const Arr4& alpha = in[4];
    const Arr4& beta = in[5];
    const int num_k = schedule.kernel_count();
    const int num_t = schedule.snapshot_count();
    if (static_cast<int>(in.size()) != 6 + num_k) {
        throw std::invalid_argument("refine_ref: input count mismatch");
    }
    const int h = coarse.h;
    const int w = coarse.w;
    Arr4 out(coarse.n, 1, h, w);
    for (int img = 0; img < coarse.n; ++img) {
        // snapshots[k][ti][pixel]
        std::vector<std::vector<std::vector<double>>> snaps(
            num_k, std::vector<std::vector<double>>(num_t));
        for (int ki = 0; ki < num_k; ++ki) {
            const int kernel = schedule.kernels[ki];
            const int r = kernel / 2;
            const Arr4& raw = in[6 + ki];
            const int J = kernel * kernel - 1;
            std::vector<double> d(static_cast<std::size_t>(h) * w);
            auto embed = [&](std::vector<double>& buf) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        if (mask.at(img, 0, y, x) != 0.0) {
                            const double ph = phi.at(img, ki, y, x);
                            buf[static_cast<std::size_t>(y) * w + x] =
                                (1.0 - ph) * buf[static_cast<std::size_t>(y) * w + x] +
                                ph * sparse.at(img, 0, y, x);
                        }
                    }
                }
            };
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    d[static_cast<std::size_t>(y) * w + x] = coarse.at(img, 0, y, x);
            embed(d);
            auto record = [&](int t) {
                for (int ti = 0; ti < num_t; ++ti) {
                    if (schedule.snapshot_steps[ti] == t) snaps[ki][ti] = d;
                }
            };
            record(0);
            std::vector<double> next(d.size());
            for (int t = 1; t <= schedule.total_steps; ++t) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        // Normalize this pixel's raw vector (Eq. 6).
                        double sum_abs = 0.0;
                        for (int j = 0; j < J; ++j) {
                            sum_abs += std::abs(raw.at(img, j, y, x));
                        }
                        double acc = 0.0;
                        if (sum_abs == 0.0) {
                            acc = d[static_cast<std::size_t>(y) * w + x];
                        } else {
                            double sum_k = 0.0;
                            int j = 0;
                            for (int dy = -r; dy <= r; ++dy) {
                                for (int dx = -r; dx <= r; ++dx) {
                                    if (dy == 0 && dx == 0) continue;
                                    const double kj = raw.at(img, j, y, x) / sum_abs;
                                    sum_k += kj;
                                    const int yy = clampi(y + dy, h - 1);
                                    const int xx = clampi(x + dx, w - 1);
                                    acc += kj * d[static_cast<std::size_t>(yy) * w + xx];
                                    ++j;
                                }
                            }
                            acc += (1.0 - sum_k) * d[static_cast<std::size_t>(y) * w + x];
                        }
                        next[static_cast<std::size_t>(y) * w + x] = acc;
                    }
                }
                d = next;
                embed(d);
                record(t);
            }
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int ti = 0; ti < num_t; ++ti) {
                    for (int ki = 0; ki < num_k; ++ki) {
                        acc += alpha.at(img, ti, y, x) * beta.at(img, ki, y, x) *
                               snaps[ki][ti][static_cast<std::size_t>(y) * w + x];
                    }
                }
                out.at(img, 0, y, x) = acc;
            }
        }
    }
    return out;
}

double depth_loss_ref(const Arr4& pred, const Arr4& gt, const Arr4& mask) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        if (mask.v[i] == 0.0) continue;
        sum += std::abs(pred.v[i] - gt.v[i]);
        ++count;
    }
    return count == 0 ? 0.0 : sum / count;
}

double gradient_loss_ref(const Arr4& pred, const Arr4& gt, const Arr4& mask) {
    static const double gx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static const double gy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    double sum = 0.0;
    std::int64_t count = 0;
    for (int img = 0; img < pred.n; ++img) {
        for (int y = 1; y < pred.h - 1; ++y) {
            for (int x = 1; x < pred.w - 1; ++x) {
                bool ok = true;
                for (int dy = -1; dy <= 1 && ok; ++dy)
                    for (int dx = -1; dx <= 1 && ok; ++dx)
                        ok = mask.at(img, 0, y + dy, x + dx) != 0.0;
                if (!ok) continue;
                double px = 0, py = 0, qx = 0, qy = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        px += gx[dy + 1][dx + 1] * pred.at(img, 0, y + dy, x + dx);
                        py += gy[dy + 1][dx + 1] * pred.at(img, 0, y + dy, x + dx);
                        qx += gx[dy + 1][dx + 1] * gt.at(img, 0, y + dy, x + dx);
                        qy += gy[dy + 1][dx + 1] * gt.at(img, 0, y + dy, x + dx);
                    }
                }
                sum += 0.5 * (std::abs(px - qx) + std::abs(py - qy));
                ++count;
            }
        }
    }
    return count == 0 ? 0.0 : sum / count;
}

double normal_loss_ref(const Arr4& pred, const Arr4& gt, const CameraIntrinsics& k,
                       const Arr4& mask) {
    auto normal_at = [&](const Arr4& d, int img, int y, int x, double* nx, double* ny,
                         double* nz) {
        auto px = [&](int yy, int xx) { return d.at(img, 0, yy, xx) * (xx - k.cx) / k.fx; };
        auto py = [&](int yy, int xx) { return d.at(img, 0, yy, xx) * (yy - k.cy) / k.fy; };
        auto pz = [&](int yy, int xx) { return d.at(img, 0, yy, xx); };
        const double tx0 = px(y, x + 1) - px(y, x - 1);
        const double tx1 = py(y, x + 1) - py(y, x - 1);
        const double tx2 = pz(y, x + 1) - pz(y, x - 1);
        const double ty0 = px(y + 1, x) - px(y - 1, x);
        const double ty1 = py(y + 1, x) - py(y - 1, x);
        const double ty2 = pz(y + 1, x) - pz(y - 1, x);
        *nx = tx1 * ty2 - tx2 * ty1;
        *ny = tx2 * ty0 - tx0 * ty2;
        *nz = tx0 * ty1 - tx1 * ty0;
    };
    double sum = 0.0;
    std::int64_t count = 0;
    for (int img = 0; img < pred.n; ++img) {
        for (int y = 1; y < pred.h - 1; ++y) {
            for (int x = 1; x < pred.w - 1; ++x) {
                if (mask.at(img, 0, y, x + 1) == 0.0 || mask.at(img, 0, y, x - 1) == 0.0 ||
                    mask.at(img, 0, y + 1, x) == 0.0 || mask.at(img, 0, y - 1, x) == 0.0) {
                    continue;
                }
                double ax, ay, az, bx, by, bz;
                normal_at(pred, img, y, x, &ax, &ay, &az);
                normal_at(gt, img, y, x, &bx, &by, &bz);
                const double na = ax * ax + ay * ay + az * az;
                const double nb = bx * bx + by * by + bz * bz;
                if (na < 1e-20 || nb < 1e-20) continue;
                sum += 1.0 - (ax * bx + ay * by + az * bz) / (std::sqrt(na) * std::sqrt(nb));
                ++count;
            }
        }
    }
    return count == 0 ? 0.0 : sum / count;
}

MetricReport compute_metrics_ref(const DepthMap& pred, const DepthMap& gt,
                                 const ValidityMask& eval_mask) {
    std::vector<double> diffs;
    std::vector<double> ratios;
    std::vector<double> rels;
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
        if (!eval_mask.valid[i]) continue;
        const double d = pred.values[i];
        const double s = gt.values[i];
        diffs.push_back(d - s);
        rels.push_back(std::abs(d - s) / s);
        ratios.push_back(d > 0.0 ? std::max(d / s, s / d)
                                 : std::numeric_limits<double>::infinity());
    }
    MetricReport r;
    r.pixel_count = static_cast<std::int64_t>(diffs.size());
    if (diffs.empty()) return r;
    double sq = 0.0, ab = 0.0, rl = 0.0;
    for (double d : diffs) sq += d * d;
    for (double d : diffs) ab += std::abs(d);
    for (double v : rels) rl += v;
    const double n = static_cast<double>(diffs.size());
    r.rmse = std::sqrt(sq / n);
    r.mae = ab / n;
    r.rel = rl / n;
    auto pct_below = [&](double thr) {
        std::int64_t c = 0;
        for (double v : ratios) c += (v < thr);
        return 100.0 * c / n;
    };
    r.delta_105 = pct_below(1.05);
    r.delta_110 = pct_below(1.10);
    r.delta_125 = pct_below(1.25);
    return r;
}

}  // namespace depthfill::check
