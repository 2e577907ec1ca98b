#pragma once

#include "depthfill/image.hpp"
#include "depthfill/tensor.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace depthfill {

/// Iterative multi-kernel spatial propagation refinement. Each kernel size
/// runs its own chain of propagate-then-embed steps; per-pixel weights mix
/// the snapshots recorded along the way. Normalized affinities and the
/// propagation state are held in 64-bit inside the engine; tensors at the
/// boundary stay float32.

struct RefinementSchedule {
    std::vector<int> kernels{3, 5, 7};
    int total_steps = 6;
    std::vector<int> snapshot_steps{0, 3, 6};

    /// Builds a schedule with the default snapshot set {0, T/2, T}.
    static RefinementSchedule with_steps(std::vector<int> kernels, int total_steps);

    int kernel_count() const { return static_cast<int>(kernels.size()); }
    int snapshot_count() const { return static_cast<int>(snapshot_steps.size()); }

    /// Kernels odd and >= 3, T >= 1, snapshots sorted ascending within
    /// [0, T]. Throws on violation.
    void validate() const;
};

/// Raw and l1-normalized neighbor weights for one kernel size. The
/// normalized side lives in 64-bit so the per-pixel identity
/// center + sum(neighbors) == 1 holds to full precision.
struct AffinityField {
    int kernel = 0;
    int images = 0;
    int height = 0;
    int width = 0;
    Tensor raw;                     // (n, k*k-1, h, w), may be undefined for hand-built fields
    std::vector<double> neighbors;  // n * (k*k-1) * h * w, plane-major like the tensor
    std::vector<double> center;     // n * h * w

    double neighbor(int img, int j, int y, int x) const;
    double center_at(int img, int y, int x) const;
};

/// Per-pixel confidence of the raw sensor depth, one channel per kernel
/// size, values in [0, 1].
struct ConfidenceMap {
    Tensor phi;  // (n, |K|, h, w)
};

/// Snapshot-combination weights: alpha over iteration steps, beta over
/// kernel sizes, each softmax-normalized per pixel by the producer.
struct CombinationWeights {
    Tensor alpha;  // (n, |T|, h, w)
    Tensor beta;   // (n, |K|, h, w)
};

/// Neighbor offsets of a k x k window in row-major order, center excluded.
std::vector<std::pair<int, int>> kernel_offsets(int kernel);

/// l1-normalizes raw affinities: kappa_j = raw_j / sum|raw|, center =
/// 1 - sum(kappa). An all-zero raw vector yields neighbors 0 / center 1
/// (identity propagation).
AffinityField normalize_affinities(const Tensor& raw, int kernel);

/// One propagation step (single image): every pixel becomes the
/// affinity-weighted combination of itself and its k x k neighbors, with
/// replicate padding at the borders. Rejects unnormalized affinities when
/// finite checks are on.
DepthMap propagate_step(const DepthMap& depth, const AffinityField& affinity, int kernel);

/// Re-injects trusted sensor depth: at valid pixels
/// d = (1 - phi) * d + phi * sensor; invalid pixels pass through.
/// phi_k is (1, 1, h, w) with values in [0, 1].
DepthMap embed_sparse(const DepthMap& depth, const SparseDepthInput& sparse,
                      const Tensor& phi_k);

/// Full refinement for a single image: per kernel, T iterations of
/// propagate-then-embed (the step-0 snapshot is the coarse map after one
/// embed), then the alpha/beta-weighted combination of all snapshots.
DepthMap refine(const DepthMap& coarse, const SparseDepthInput& sparse,
                const std::vector<AffinityField>& affinities, const ConfidenceMap& confidence,
                const CombinationWeights& weights, const RefinementSchedule& schedule);

/// Differentiable batched refinement for the pipeline. coarse, sparse_depth
/// and valid_mask are (n, 1, h, w); raw_affinities holds one
/// (n, k*k-1, h, w) tensor per kernel; phi/alpha/beta as in the structs
/// above. Gradients flow to coarse, affinities, phi, alpha and beta.
Tensor refine_depth(Tape* tape, const Tensor& coarse, const Tensor& sparse_depth,
                    const Tensor& valid_mask, const std::vector<Tensor>& raw_affinities,
                    const Tensor& phi, const Tensor& alpha, const Tensor& beta,
                    const RefinementSchedule& schedule);

/// Forward-throughput report for the propagation engine on seeded random
/// inputs. Checks numerical agreement against the single-thread run.
struct BenchReport {
    int height = 0;
    int width = 0;
    int threads = 0;
    int repeats = 0;
    double seconds_per_run = 0.0;
    double pixels_per_second = 0.0;  // propagated pixel-updates per second
    std::vector<std::pair<int, double>> per_kernel_seconds;
    double max_abs_diff_vs_single = 0.0;
};

BenchReport bench_refine(int height, int width, const RefinementSchedule& schedule, int threads,
                         int repeats = 3, std::uint64_t seed = 1234);

}  // namespace depthfill
