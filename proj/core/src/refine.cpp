#include "depthfill/refine.hpp"

#include "depthfill/threading.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>

namespace depthfill {

namespace {

std::int64_t plane_size(int h, int w) { return static_cast<std::int64_t>(h) * w; }

int clamp_idx(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

/// Pixel-major packed affinities for one image: nbr[(y*w+x)*J + j], ctr[y*w+x].
struct PackedAffinity {
    int kernel = 0;
    std::vector<double> nbr;
    std::vector<double> ctr;
};

void pack_affinity(const AffinityField& field, int img, PackedAffinity& out) {
    const int J = field.kernel * field.kernel - 1;
    const std::int64_t hw = plane_size(field.height, field.width);
    out.kernel = field.kernel;
    out.nbr.resize(hw * J);
    out.ctr.resize(hw);
    const double* nb = field.neighbors.data() + static_cast<std::int64_t>(img) * J * hw;
    const double* ct = field.center.data() + static_cast<std::int64_t>(img) * hw;
    for (std::int64_t p = 0; p < hw; ++p) out.ctr[p] = ct[p];
    for (int j = 0; j < J; ++j) {
        const double* src = nb + static_cast<std::int64_t>(j) * hw;
        for (std::int64_t p = 0; p < hw; ++p) out.nbr[p * J + j] = src[p];
    }
}

/// Normalizes one image slice of raw affinities straight into packed form.
void normalize_packed(const float* raw, int J, int h, int w, PackedAffinity& out, int kernel) {
    const std::int64_t hw = plane_size(h, w);
    out.kernel = kernel;
    out.nbr.resize(hw * J);
    out.ctr.resize(hw);
    for (std::int64_t p = 0; p < hw; ++p) {
        double sum_abs = 0.0;
        for (int j = 0; j < J; ++j) sum_abs += std::abs(static_cast<double>(raw[j * hw + p]));
        if (sum_abs == 0.0) {
            for (int j = 0; j < J; ++j) out.nbr[p * J + j] = 0.0;
            out.ctr[p] = 1.0;
            continue;
        }
        double sum = 0.0;
        for (int j = 0; j < J; ++j) {
            const double v = static_cast<double>(raw[j * hw + p]) / sum_abs;
            out.nbr[p * J + j] = v;
            sum += v;
        }
        out.ctr[p] = 1.0 - sum;
    }
}

/// One propagation step over rows [y0, y1), optionally fused with the
/// sensor embedding. cur/next are full f64 planes.
void step_rows(int h, int w, const std::vector<std::pair<int, int>>& offsets,
               const std::vector<std::int64_t>& lin_offsets, const PackedAffinity& affinity,
               const double* cur, double* next, const float* sparse, const float* mask,
               const float* phi, int y0, int y1) {
    const int J = static_cast<int>(offsets.size());
    const int r = affinity.kernel / 2;
    const double* nbr = affinity.nbr.data();
    const double* ctr = affinity.ctr.data();
    for (int y = y0; y < y1; ++y) {
        const bool y_inner = (y >= r && y < h - r);
        const std::int64_t row = static_cast<std::int64_t>(y) * w;
        const int x_inner_lo = y_inner ? r : w;
        const int x_inner_hi = y_inner ? w - r : w;
        auto emit = [&](std::int64_t p, double acc) {
            if (phi && mask[p] != 0.0f) {
                const double ph = phi[p];
                acc = (1.0 - ph) * acc + ph * static_cast<double>(sparse[p]);
            }
            next[p] = acc;
        };
        int x = 0;
        for (; x < x_inner_lo; ++x) {
            const std::int64_t p = row + x;
            double acc = ctr[p] * cur[p];
            const double* np = nbr + p * J;
            for (int j = 0; j < J; ++j) {
                const int yy = clamp_idx(y + offsets[j].first, h - 1);
                const int xx = clamp_idx(x + offsets[j].second, w - 1);
                acc += np[j] * cur[static_cast<std::int64_t>(yy) * w + xx];
            }
            emit(p, acc);
        }
        for (; x < x_inner_hi; ++x) {
            const std::int64_t p = row + x;
            double acc = ctr[p] * cur[p];
            const double* np = nbr + p * J;
            for (int j = 0; j < J; ++j) acc += np[j] * cur[p + lin_offsets[j]];
            emit(p, acc);
        }
        for (; x < w; ++x) {
            const std::int64_t p = row + x;
            double acc = ctr[p] * cur[p];
            const double* np = nbr + p * J;
            for (int j = 0; j < J; ++j) {
                const int yy = clamp_idx(y + offsets[j].first, h - 1);
                const int xx = clamp_idx(x + offsets[j].second, w - 1);
                acc += np[j] * cur[static_cast<std::int64_t>(yy) * w + xx];
            }
            emit(p, acc);
        }
    }
}

constexpr int kRowTile = 16;

void run_step(int h, int w, const std::vector<std::pair<int, int>>& offsets,
              const std::vector<std::int64_t>& lin_offsets, const PackedAffinity& affinity,
              const double* cur, double* next, const float* sparse, const float* mask,
              const float* phi, bool rows_parallel) {
    if (rows_parallel) {
        parallel_for_chunks(0, h, kRowTile, [&](std::int64_t y0, std::int64_t y1) {
            step_rows(h, w, offsets, lin_offsets, affinity, cur, next, sparse, mask, phi,
                      static_cast<int>(y0), static_cast<int>(y1));
        });
    } else {
        step_rows(h, w, offsets, lin_offsets, affinity, cur, next, sparse, mask, phi, 0, h);
    }
}

/// Forward state of one (image, kernel) branch kept for backward.
struct BranchSaves {
    std::vector<std::vector<double>> depth_states;  // T+1 planes, post-embed
    std::vector<std::vector<double>> propagated;    // T planes, pre-embed
};

/// Runs one branch: embed at t=0 then T fused steps, recording snapshots.
void run_branch_forward(int h, int w, const PackedAffinity& affinity, const float* coarse,
                        const float* sparse, const float* mask, const float* phi,
                        const RefinementSchedule& schedule,
                        std::vector<std::vector<double>>& snapshots, BranchSaves* saves,
                        bool rows_parallel) {
    const std::int64_t hw = plane_size(h, w);
    const auto offsets = kernel_offsets(affinity.kernel);
    std::vector<std::int64_t> lin_offsets(offsets.size());
    for (std::size_t j = 0; j < offsets.size(); ++j) {
        lin_offsets[j] = static_cast<std::int64_t>(offsets[j].first) * w + offsets[j].second;
    }

    std::vector<double> cur(hw);
    std::vector<double> next(hw);
    for (std::int64_t p = 0; p < hw; ++p) {
        double d = coarse[p];
        if (mask[p] != 0.0f) {
            const double ph = phi[p];
            d = (1.0 - ph) * d + ph * static_cast<double>(sparse[p]);
        }
        cur[p] = d;
    }
    snapshots.assign(schedule.snapshot_count(), {});
    if (saves) {
        saves->depth_states.assign(schedule.total_steps + 1, {});
        saves->propagated.assign(schedule.total_steps, {});
        saves->depth_states[0] = cur;
    }
    auto snapshot_index = [&](int t) {
        for (int i = 0; i < schedule.snapshot_count(); ++i) {
            if (schedule.snapshot_steps[i] == t) return i;
        }
        return -1;
    };
    if (int si = snapshot_index(0); si >= 0) snapshots[si] = cur;

    for (int t = 1; t <= schedule.total_steps; ++t) {
        if (saves) {
            // Unfused so the pre-embed state is retained.
            run_step(h, w, offsets, lin_offsets, affinity, cur.data(), next.data(), nullptr,
                     nullptr, nullptr, rows_parallel);
            saves->propagated[t - 1] = next;
            for (std::int64_t p = 0; p < hw; ++p) {
                if (mask[p] != 0.0f) {
                    const double ph = phi[p];
                    next[p] = (1.0 - ph) * next[p] + ph * static_cast<double>(sparse[p]);
                }
            }
            saves->depth_states[t] = next;
        } else {
            run_step(h, w, offsets, lin_offsets, affinity, cur.data(), next.data(), sparse, mask,
                     phi, rows_parallel);
        }
        cur.swap(next);
        if (int si = snapshot_index(t); si >= 0) snapshots[si] = cur;
    }
}

void require_shape(const char* op, const Tensor& t, const Shape4& want) {
    if (!(t.shape() == want)) {
        fail(std::string(op) + ": expected shape " + want.str() + ", got " + t.shape().str());
    }
}

}  // namespace

std::vector<std::pair<int, int>> kernel_offsets(int kernel) {
    std::vector<std::pair<int, int>> offsets;
    const int r = kernel / 2;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            if (dy == 0 && dx == 0) continue;
            offsets.emplace_back(dy, dx);
        }
    }
    return offsets;
}

RefinementSchedule RefinementSchedule::with_steps(std::vector<int> kernels, int total_steps) {
    RefinementSchedule s;
    s.kernels = std::move(kernels);
    s.total_steps = total_steps;
    s.snapshot_steps = {0, total_steps / 2, total_steps};
    s.snapshot_steps.erase(std::unique(s.snapshot_steps.begin(), s.snapshot_steps.end()),
                           s.snapshot_steps.end());
    s.validate();
    return s;
}

void RefinementSchedule::validate() const {
    if (kernels.empty()) fail("schedule: at least one kernel required");
    for (int k : kernels) {
        if (k < 3 || k % 2 == 0) {
            fail("schedule: kernel " + std::to_string(k) + " must be odd and >= 3");
        }
    }
    if (total_steps < 1) fail("schedule: total_steps must be >= 1");
    if (snapshot_steps.empty()) fail("schedule: snapshot set must not be empty");
    int prev = -1;
    for (int t : snapshot_steps) {
        if (t < 0 || t > total_steps) {
            fail("schedule: snapshot step " + std::to_string(t) + " outside [0, " +
                 std::to_string(total_steps) + "]");
        }
        if (t <= prev) fail("schedule: snapshot steps must be strictly ascending");
        prev = t;
    }
}

double AffinityField::neighbor(int img, int j, int y, int x) const {
    const int J = kernel * kernel - 1;
    return neighbors[((static_cast<std::int64_t>(img) * J + j) * height + y) * width + x];
}

double AffinityField::center_at(int img, int y, int x) const {
    return center[(static_cast<std::int64_t>(img) * height + y) * width + x];
}

AffinityField normalize_affinities(const Tensor& raw, int kernel) {
    if (kernel < 3 || kernel % 2 == 0) {
        fail("normalize_affinities: kernel " + std::to_string(kernel) + " must be odd and >= 3");
    }
    const int J = kernel * kernel - 1;
    if (raw.c() != J) {
        fail("normalize_affinities: raw channels " + std::to_string(raw.c()) +
             " != k*k-1 = " + std::to_string(J));
    }
    raw.check_finite("normalize_affinities");
    AffinityField field;
    field.kernel = kernel;
    field.images = raw.n();
    field.height = raw.h();
    field.width = raw.w();
    field.raw = raw;
    const std::int64_t hw = plane_size(raw.h(), raw.w());
    field.neighbors.resize(static_cast<std::int64_t>(raw.n()) * J * hw);
    field.center.resize(static_cast<std::int64_t>(raw.n()) * hw);
    const float* src = raw.data();
    for (int img = 0; img < raw.n(); ++img) {
        const float* raw_img = src + static_cast<std::int64_t>(img) * J * hw;
        double* nbr_img = field.neighbors.data() + static_cast<std::int64_t>(img) * J * hw;
        double* ctr_img = field.center.data() + static_cast<std::int64_t>(img) * hw;
        for (std::int64_t p = 0; p < hw; ++p) {
            double sum_abs = 0.0;
            for (int j = 0; j < J; ++j) {
                sum_abs += std::abs(static_cast<double>(raw_img[j * hw + p]));
            }
            if (sum_abs == 0.0) {
                for (int j = 0; j < J; ++j) nbr_img[j * hw + p] = 0.0;
                ctr_img[p] = 1.0;
                continue;
            }
            double sum = 0.0;
            for (int j = 0; j < J; ++j) {
                const double v = static_cast<double>(raw_img[j * hw + p]) / sum_abs;
                nbr_img[j * hw + p] = v;
                sum += v;
            }
            ctr_img[p] = 1.0 - sum;
        }
    }
    return field;
}

DepthMap propagate_step(const DepthMap& depth, const AffinityField& affinity, int kernel) {
    if (affinity.kernel != kernel) {
        fail("propagate_step: affinity kernel " + std::to_string(affinity.kernel) +
             " != requested " + std::to_string(kernel));
    }
    if (affinity.images != 1 || affinity.height != depth.height ||
        affinity.width != depth.width) {
        fail("propagate_step: affinity field (" + std::to_string(affinity.images) + ", " +
             std::to_string(affinity.height) + "x" + std::to_string(affinity.width) +
             ") does not match a single " + std::to_string(depth.height) + "x" +
             std::to_string(depth.width) + " depth map");
    }
    const int J = kernel * kernel - 1;
    const std::int64_t hw = plane_size(depth.height, depth.width);
    if (finite_checks_enabled()) {
        for (std::int64_t p = 0; p < hw; ++p) {
            double sum = affinity.center[p];
            for (int j = 0; j < J; ++j) sum += affinity.neighbors[j * hw + p];
            if (std::abs(sum - 1.0) > 1e-9) {
                throw std::invalid_argument(
                    "propagate_step: affinity not normalized (center + neighbors = " +
                    std::to_string(sum) + ")");
            }
            if (!std::isfinite(depth.values[p])) {
                throw std::invalid_argument("propagate_step: non-finite depth input");
            }
        }
    }
    PackedAffinity packed;
    pack_affinity(affinity, 0, packed);
    const auto offsets = kernel_offsets(kernel);
    std::vector<std::int64_t> lin_offsets(offsets.size());
    for (std::size_t j = 0; j < offsets.size(); ++j) {
        lin_offsets[j] =
            static_cast<std::int64_t>(offsets[j].first) * depth.width + offsets[j].second;
    }
    std::vector<double> cur(hw);
    for (std::int64_t p = 0; p < hw; ++p) cur[p] = depth.values[p];
    std::vector<double> next(hw);
    run_step(depth.height, depth.width, offsets, lin_offsets, packed, cur.data(), next.data(),
             nullptr, nullptr, nullptr, true);
    DepthMap out(depth.height, depth.width);
    for (std::int64_t p = 0; p < hw; ++p) out.values[p] = static_cast<float>(next[p]);
    return out;
}

DepthMap embed_sparse(const DepthMap& depth, const SparseDepthInput& sparse,
                      const Tensor& phi_k) {
    if (sparse.depth.height != depth.height || sparse.depth.width != depth.width) {
        fail("embed_sparse: sparse input dims do not match the depth map");
    }
    require_shape("embed_sparse", phi_k, {1, 1, depth.height, depth.width});
    const std::int64_t hw = plane_size(depth.height, depth.width);
    const float* phi = phi_k.data();
    if (finite_checks_enabled()) {
        for (std::int64_t p = 0; p < hw; ++p) {
            if (phi[p] < 0.0f || phi[p] > 1.0f) {
                throw std::invalid_argument("embed_sparse: phi outside [0, 1]");
            }
        }
    }
    DepthMap out = depth;
    for (std::int64_t p = 0; p < hw; ++p) {
        if (sparse.mask.valid[p]) {
            const double ph = phi[p];
            out.values[p] = static_cast<float>((1.0 - ph) * depth.values[p] +
                                               ph * static_cast<double>(sparse.depth.values[p]));
        }
    }
    return out;
}

DepthMap refine(const DepthMap& coarse, const SparseDepthInput& sparse,
                const std::vector<AffinityField>& affinities, const ConfidenceMap& confidence,
                const CombinationWeights& weights, const RefinementSchedule& schedule) {
    schedule.validate();
    sparse.validate();
    const int h = coarse.height;
    const int w = coarse.width;
    const int num_k = schedule.kernel_count();
    const int num_t = schedule.snapshot_count();
    if (sparse.depth.height != h || sparse.depth.width != w) {
        fail("refine: sparse input dims do not match the coarse map");
    }
    if (static_cast<int>(affinities.size()) != num_k) {
        fail("refine: got " + std::to_string(affinities.size()) + " affinity fields for " +
             std::to_string(num_k) + " kernels");
    }
    for (int i = 0; i < num_k; ++i) {
        if (affinities[i].kernel != schedule.kernels[i]) {
            fail("refine: affinity field " + std::to_string(i) + " has kernel " +
                 std::to_string(affinities[i].kernel) + ", schedule expects " +
                 std::to_string(schedule.kernels[i]));
        }
        if (affinities[i].images != 1 || affinities[i].height != h || affinities[i].width != w) {
            fail("refine: affinity field " + std::to_string(i) + " dims mismatch");
        }
    }
    require_shape("refine", confidence.phi, {1, num_k, h, w});
    require_shape("refine", weights.alpha, {1, num_t, h, w});
    require_shape("refine", weights.beta, {1, num_k, h, w});

    const std::int64_t hw = plane_size(h, w);
    // Float mirrors of the sparse input for the fused step kernel.
    std::vector<float> mask_f(hw);
    for (std::int64_t p = 0; p < hw; ++p) mask_f[p] = sparse.mask.valid[p] ? 1.0f : 0.0f;

    std::vector<std::vector<std::vector<double>>> snapshots(num_k);
    const bool branch_parallel = num_k >= thread_count();
    auto run_one = [&](int ki) {
        PackedAffinity packed;
        pack_affinity(affinities[ki], 0, packed);
        run_branch_forward(h, w, packed, coarse.values.data(), sparse.depth.values.data(),
                           mask_f.data(), confidence.phi.data() + ki * hw, schedule,
                           snapshots[ki], nullptr, !branch_parallel);
    };
    if (branch_parallel) {
        parallel_for(0, num_k, [&](std::int64_t ki) { run_one(static_cast<int>(ki)); });
    } else {
        for (int ki = 0; ki < num_k; ++ki) run_one(ki);
    }

    DepthMap out(h, w);
    const float* alpha = weights.alpha.data();
    const float* beta = weights.beta.data();
    parallel_for_chunks(0, hw, 1 << 12, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t p = lo; p < hi; ++p) {
            double acc = 0.0;
            for (int ti = 0; ti < num_t; ++ti) {
                const double a = alpha[ti * hw + p];
                for (int ki = 0; ki < num_k; ++ki) {
                    acc += a * static_cast<double>(beta[ki * hw + p]) * snapshots[ki][ti][p];
                }
            }
            out.values[p] = static_cast<float>(acc);
        }
    });
    return out;
}

Tensor refine_depth(Tape* tape, const Tensor& coarse, const Tensor& sparse_depth,
                    const Tensor& valid_mask, const std::vector<Tensor>& raw_affinities,
                    const Tensor& phi, const Tensor& alpha, const Tensor& beta,
                    const RefinementSchedule& schedule) {
    schedule.validate();
    const Shape4 s = coarse.shape();
    if (s.c != 1) fail("refine_depth: coarse must be (n, 1, h, w), got " + s.str());
    require_shape("refine_depth", sparse_depth, s);
    require_shape("refine_depth", valid_mask, s);
    const int num_k = schedule.kernel_count();
    const int num_t = schedule.snapshot_count();
    if (static_cast<int>(raw_affinities.size()) != num_k) {
        fail("refine_depth: got " + std::to_string(raw_affinities.size()) +
             " affinity tensors for " + std::to_string(num_k) + " kernels");
    }
    for (int ki = 0; ki < num_k; ++ki) {
        const int J = schedule.kernels[ki] * schedule.kernels[ki] - 1;
        require_shape("refine_depth", raw_affinities[ki], {s.n, J, s.h, s.w});
    }
    require_shape("refine_depth", phi, {s.n, num_k, s.h, s.w});
    require_shape("refine_depth", alpha, {s.n, num_t, s.h, s.w});
    require_shape("refine_depth", beta, {s.n, num_k, s.h, s.w});
    coarse.check_finite("refine_depth");
    if (finite_checks_enabled()) {
        const float* pm = valid_mask.data();
        const float* pp = phi.data();
        for (std::size_t i = 0; i < valid_mask.numel(); ++i) {
            if (pm[i] != 0.0f && pm[i] != 1.0f) {
                throw std::invalid_argument("refine_depth: mask values must be 0 or 1");
            }
        }
        for (std::size_t i = 0; i < phi.numel(); ++i) {
            if (pp[i] < 0.0f || pp[i] > 1.0f) {
                throw std::invalid_argument("refine_depth: phi outside [0, 1]");
            }
        }
    }

    const std::int64_t hw = plane_size(s.h, s.w);
    const int branches = s.n * num_k;

    struct OpSaves {
        std::vector<PackedAffinity> packed;       // per branch (img-major)
        std::vector<BranchSaves> branch_saves;    // per branch
    };
    auto saves = std::make_shared<OpSaves>();
    saves->packed.resize(branches);
    const bool taped = tape && (coarse.requires_grad() || phi.requires_grad() ||
                                alpha.requires_grad() || beta.requires_grad() ||
                                std::any_of(raw_affinities.begin(), raw_affinities.end(),
                                            [](const Tensor& t) { return t.requires_grad(); }));
    if (taped) saves->branch_saves.resize(branches);

    std::vector<std::vector<std::vector<double>>> snapshots(branches);

    const bool branch_parallel = branches >= thread_count();
    auto run_one = [&](int b) {
        const int img = b / num_k;
        const int ki = b % num_k;
        const int kernel = schedule.kernels[ki];
        const int J = kernel * kernel - 1;
        const float* raw_img =
            raw_affinities[ki].data() + static_cast<std::int64_t>(img) * J * hw;
        normalize_packed(raw_img, J, s.h, s.w, saves->packed[b], kernel);
        run_branch_forward(s.h, s.w, saves->packed[b],
                           coarse.data() + static_cast<std::int64_t>(img) * hw,
                           sparse_depth.data() + static_cast<std::int64_t>(img) * hw,
                           valid_mask.data() + static_cast<std::int64_t>(img) * hw,
                           phi.data() + (static_cast<std::int64_t>(img) * num_k + ki) * hw,
                           schedule, snapshots[b], taped ? &saves->branch_saves[b] : nullptr,
                           !branch_parallel);
    };
    if (branch_parallel) {
        parallel_for(0, branches, [&](std::int64_t b) { run_one(static_cast<int>(b)); });
    } else {
        for (int b = 0; b < branches; ++b) run_one(b);
    }

    Tensor out = Tensor::zeros(s);
    {
        const float* pa = alpha.data();
        const float* pb = beta.data();
        float* po = out.data();
        parallel_for(0, s.n, [&](std::int64_t img) {
            const float* a_img = pa + img * num_t * hw;
            const float* b_img = pb + img * num_k * hw;
            float* o_img = po + img * hw;
            for (std::int64_t p = 0; p < hw; ++p) {
                double acc = 0.0;
                for (int ti = 0; ti < num_t; ++ti) {
                    const double a = a_img[ti * hw + p];
                    for (int ki = 0; ki < num_k; ++ki) {
                        acc += a * static_cast<double>(b_img[ki * hw + p]) *
                               snapshots[img * num_k + ki][ti][p];
                    }
                }
                o_img[p] = static_cast<float>(acc);
            }
        });
    }

    if (!taped) return out;

    out.set_requires_grad(true);
    // The snapshot planes are also needed for the alpha/beta grads.
    auto snaps = std::make_shared<std::vector<std::vector<std::vector<double>>>>(
        std::move(snapshots));
    RefinementSchedule sched = schedule;
    std::vector<Tensor> raws = raw_affinities;
    tape->record([coarse, sparse_depth, valid_mask, raws, phi, alpha, beta, out, sched, saves,
                  snaps, s, hw, num_k, num_t]() mutable {
        const float* gout = out.grad();
        const float* pa = alpha.data();
        const float* pb = beta.data();
        const float* pm = valid_mask.data();
        const float* ps = sparse_depth.data();
        const float* pphi = phi.data();
        const int branches = s.n * num_k;

        // Snapshot-combination grads (per image: exclusive slices).
        if (alpha.requires_grad() || beta.requires_grad()) {
            parallel_for(0, s.n, [&](std::int64_t img) {
                const float* g_img = gout + img * hw;
                const float* a_img = pa + img * num_t * hw;
                const float* b_img = pb + img * num_k * hw;
                float* ga_img = alpha.requires_grad() ? alpha.grad() + img * num_t * hw : nullptr;
                float* gb_img = beta.requires_grad() ? beta.grad() + img * num_k * hw : nullptr;
                for (int ti = 0; ti < num_t; ++ti) {
                    for (int ki = 0; ki < num_k; ++ki) {
                        const auto& snap = (*snaps)[img * num_k + ki][ti];
                        for (std::int64_t p = 0; p < hw; ++p) {
                            const double common = snap[p] * static_cast<double>(g_img[p]);
                            if (ga_img) {
                                ga_img[ti * hw + p] += static_cast<float>(
                                    static_cast<double>(b_img[ki * hw + p]) * common);
                            }
                            if (gb_img) {
                                gb_img[ki * hw + p] += static_cast<float>(
                                    static_cast<double>(a_img[ti * hw + p]) * common);
                            }
                        }
                    }
                }
            });
        }

        // Per-branch reverse iteration. Writes to exclusive grad slices of
        // phi and the raw affinities; coarse contributions are merged after.
        std::vector<std::vector<double>> gcoarse_partial(branches);
        parallel_for(0, branches, [&](std::int64_t b) {
            const int img = static_cast<int>(b) / num_k;
            const int ki = static_cast<int>(b) % num_k;
            const int kernel = sched.kernels[ki];
            const int J = kernel * kernel - 1;
            const auto offsets = kernel_offsets(kernel);
            const PackedAffinity& packed = saves->packed[b];
            const BranchSaves& bs = saves->branch_saves[b];
            const float* g_img = gout + static_cast<std::int64_t>(img) * hw;
            const float* a_img = pa + static_cast<std::int64_t>(img) * num_t * hw;
            const float* b_img = pb + static_cast<std::int64_t>(img) * num_k * hw;
            const float* mask_img = pm + static_cast<std::int64_t>(img) * hw;
            const float* sparse_img = ps + static_cast<std::int64_t>(img) * hw;
            const float* phi_plane =
                pphi + (static_cast<std::int64_t>(img) * num_k + ki) * hw;

            auto snapshot_index = [&](int t) {
                for (int i = 0; i < static_cast<int>(sched.snapshot_steps.size()); ++i) {
                    if (sched.snapshot_steps[i] == t) return i;
                }
                return -1;
            };
            auto add_seed = [&](std::vector<double>& gd, int t) {
                const int si = snapshot_index(t);
                if (si < 0) return;
                const float* a_plane = a_img + static_cast<std::int64_t>(si) * hw;
                const float* b_plane = b_img + static_cast<std::int64_t>(ki) * hw;
                for (std::int64_t p = 0; p < hw; ++p) {
                    gd[p] += static_cast<double>(a_plane[p]) * b_plane[p] * g_img[p];
                }
            };

            std::vector<double> gd(hw, 0.0);
            std::vector<double> gp(hw);
            std::vector<double> gd_prev(hw);
            std::vector<double> gphi_acc(hw, 0.0);
            std::vector<double> gctr(hw, 0.0);
            std::vector<double> gnbr(hw * J, 0.0);
            add_seed(gd, sched.total_steps);

            for (int t = sched.total_steps; t >= 1; --t) {
                const std::vector<double>& d_prev = bs.depth_states[t - 1];
                const std::vector<double>& prop = bs.propagated[t - 1];
                for (std::int64_t p = 0; p < hw; ++p) {
                    if (mask_img[p] != 0.0f) {
                        const double ph = phi_plane[p];
                        gphi_acc[p] += gd[p] * (static_cast<double>(sparse_img[p]) - prop[p]);
                        gp[p] = gd[p] * (1.0 - ph);
                    } else {
                        gp[p] = gd[p];
                    }
                }
                std::fill(gd_prev.begin(), gd_prev.end(), 0.0);
                for (int y = 0; y < s.h; ++y) {
                    for (int x = 0; x < s.w; ++x) {
                        const std::int64_t p = static_cast<std::int64_t>(y) * s.w + x;
                        const double gpv = gp[p];
                        gctr[p] += gpv * d_prev[p];
                        gd_prev[p] += gpv * packed.ctr[p];
                        const double* np = packed.nbr.data() + p * J;
                        double* gn = gnbr.data() + p * J;
                        for (int j = 0; j < J; ++j) {
                            const int yy = clamp_idx(y + offsets[j].first, s.h - 1);
                            const int xx = clamp_idx(x + offsets[j].second, s.w - 1);
                            const std::int64_t q = static_cast<std::int64_t>(yy) * s.w + xx;
                            gn[j] += gpv * d_prev[q];
                            gd_prev[q] += gpv * np[j];
                        }
                    }
                }
                gd.swap(gd_prev);
                add_seed(gd, t - 1);
            }

            // t = 0 embedding of the coarse map.
            gcoarse_partial[b].assign(hw, 0.0);
            {
                const float* coarse_img = coarse.data() + static_cast<std::int64_t>(img) * hw;
                for (std::int64_t p = 0; p < hw; ++p) {
                    if (mask_img[p] != 0.0f) {
                        const double ph = phi_plane[p];
                        gphi_acc[p] +=
                            gd[p] * (static_cast<double>(sparse_img[p]) - coarse_img[p]);
                        gcoarse_partial[b][p] = gd[p] * (1.0 - ph);
                    } else {
                        gcoarse_partial[b][p] = gd[p];
                    }
                }
            }

            if (phi.requires_grad()) {
                float* gphi =
                    phi.grad() + (static_cast<std::int64_t>(img) * num_k + ki) * hw;
                for (std::int64_t p = 0; p < hw; ++p) {
                    gphi[p] += static_cast<float>(gphi_acc[p]);
                }
            }

            if (raws[ki].requires_grad()) {
                const float* raw_img =
                    raws[ki].data() + static_cast<std::int64_t>(img) * J * hw;
                float* graw_img = raws[ki].grad() + static_cast<std::int64_t>(img) * J * hw;
                for (std::int64_t p = 0; p < hw; ++p) {
                    double sum_abs = 0.0;
                    for (int j = 0; j < J; ++j) {
                        sum_abs += std::abs(static_cast<double>(raw_img[j * hw + p]));
                    }
                    if (sum_abs == 0.0) continue;  // identity plateau, zero gradient
                    double t_sum = 0.0;
                    double dot = 0.0;
                    const double* gn = gnbr.data() + p * J;
                    for (int j = 0; j < J; ++j) {
                        const double kj = static_cast<double>(raw_img[j * hw + p]) / sum_abs;
                        t_sum += kj;
                        dot += gn[j] * kj;
                    }
                    const double gc = gctr[p];
                    for (int j = 0; j < J; ++j) {
                        const double rv = raw_img[j * hw + p];
                        const double sgn = rv > 0.0 ? 1.0 : (rv < 0.0 ? -1.0 : 0.0);
                        const double g =
                            (gn[j] - sgn * dot) / sum_abs - gc * (1.0 - sgn * t_sum) / sum_abs;
                        graw_img[j * hw + p] += static_cast<float>(g);
                    }
                }
            }
        });

        if (coarse.requires_grad()) {
            float* gc = coarse.grad();
            parallel_for(0, s.n, [&](std::int64_t img) {
                float* gc_img = gc + img * hw;
                for (int ki = 0; ki < num_k; ++ki) {
                    const auto& part = gcoarse_partial[img * num_k + ki];
                    for (std::int64_t p = 0; p < hw; ++p) {
                        gc_img[p] += static_cast<float>(part[p]);
                    }
                }
            });
        }
    });
    return out;
}

BenchReport bench_refine(int height, int width, const RefinementSchedule& schedule, int threads,
                         int repeats, std::uint64_t seed) {
    schedule.validate();
    if (height < schedule.kernels.back() || width < schedule.kernels.back()) {
        fail("bench_refine: image smaller than the largest kernel");
    }
    if (repeats < 1) repeats = 1;
    const Shape4 s{1, 1, height, width};
    const std::int64_t hw = plane_size(height, width);
    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    auto uniform = [&rng](float lo, float hi) {
        return lo + (hi - lo) * (static_cast<float>(rng()) / 4294967296.0f);
    };

    Tensor coarse = Tensor::zeros(s);
    Tensor sparse = Tensor::zeros(s);
    Tensor mask = Tensor::zeros(s);
    for (std::int64_t p = 0; p < hw; ++p) {
        coarse.data()[p] = uniform(0.5f, 1.5f);
        const bool valid = uniform(0.0f, 1.0f) < 0.7f;
        mask.data()[p] = valid ? 1.0f : 0.0f;
        sparse.data()[p] = valid ? uniform(0.5f, 1.5f) : 0.0f;
    }
    const int num_k = schedule.kernel_count();
    const int num_t = schedule.snapshot_count();
    std::vector<Tensor> raw;
    for (int k : schedule.kernels) {
        Tensor t = Tensor::zeros({1, k * k - 1, height, width});
        for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = uniform(-1.0f, 1.0f);
        raw.push_back(t);
    }
    Tensor phi = Tensor::zeros({1, num_k, height, width});
    for (std::size_t i = 0; i < phi.numel(); ++i) phi.data()[i] = uniform(0.0f, 1.0f);
    auto normalized_stack = [&](int channels) {
        Tensor t = Tensor::zeros({1, channels, height, width});
        for (std::int64_t p = 0; p < hw; ++p) {
            float sum = 0.0f;
            for (int ch = 0; ch < channels; ++ch) {
                const float v = uniform(0.05f, 1.0f);
                t.data()[ch * hw + p] = v;
                sum += v;
            }
            for (int ch = 0; ch < channels; ++ch) t.data()[ch * hw + p] /= sum;
        }
        return t;
    };
    Tensor alpha = normalized_stack(num_t);
    Tensor beta = normalized_stack(num_k);

    const int previous_threads = thread_count();
    auto timed_run = [&](const RefinementSchedule& sched, const std::vector<Tensor>& raws,
                         const Tensor& ph, const Tensor& al, const Tensor& be) {
        Tensor result;
        const auto start = std::chrono::steady_clock::now();
        for (int rep = 0; rep < repeats; ++rep) {
            result = refine_depth(nullptr, coarse, sparse, mask, raws, ph, al, be, sched);
        }
        const auto stop = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(stop - start).count() / repeats;
        return std::make_pair(result, secs);
    };

    BenchReport report;
    report.height = height;
    report.width = width;
    report.threads = threads;
    report.repeats = repeats;

    set_thread_count(threads);
    refine_depth(nullptr, coarse, sparse, mask, raw, phi, alpha, beta, schedule);  // warm-up
    auto [multi_out, multi_secs] = timed_run(schedule, raw, phi, alpha, beta);
    report.seconds_per_run = multi_secs;
    double updates = static_cast<double>(hw) * schedule.total_steps * num_k;
    report.pixels_per_second = updates / multi_secs;

    // Per-kernel breakdown: single-kernel schedules on the same inputs.
    for (int ki = 0; ki < num_k; ++ki) {
        RefinementSchedule single = schedule;
        single.kernels = {schedule.kernels[ki]};
        Tensor phi_k = Tensor::zeros({1, 1, height, width});
        Tensor beta_k = Tensor::full({1, 1, height, width}, 1.0f);
        std::copy(phi.data() + static_cast<std::int64_t>(ki) * hw,
                  phi.data() + static_cast<std::int64_t>(ki + 1) * hw, phi_k.data());
        auto [_, secs] = timed_run(single, {raw[ki]}, phi_k, alpha, beta_k);
        report.per_kernel_seconds.emplace_back(schedule.kernels[ki], secs);
    }

    set_thread_count(1);
    auto [single_out, single_secs] = timed_run(schedule, raw, phi, alpha, beta);
    (void)single_secs;
    set_thread_count(previous_threads);

    double max_diff = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) {
        max_diff = std::max(max_diff, static_cast<double>(std::abs(
                                          multi_out.data()[p] - single_out.data()[p])));
    }
    report.max_abs_diff_vs_single = max_diff;
    return report;
}

}  // namespace depthfill
