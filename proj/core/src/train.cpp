#include "depthfill/train.hpp"

#include "depthfill/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace depthfill {

namespace {

DepthMap tensor_plane_to_depth(const Tensor& t, int img) {
    DepthMap d(t.h(), t.w());
    const float* src = t.data() + static_cast<std::size_t>(img) * t.h() * t.w();
    std::copy(src, src + d.values.size(), d.values.begin());
    return d;
}

/// Frames are cached once; ids index into the cache.
struct FrameCache {
    std::unordered_map<std::string, Frame> frames;

    const Frame& get(const Manifest& manifest, const std::string& id) {
        auto it = frames.find(id);
        if (it != frames.end()) return it->second;
        auto [pos, _] = frames.emplace(id, load_frame(manifest, manifest.find(id)));
        return pos->second;
    }
};

}  // namespace

MetricReport evaluate(const Model& model, const Manifest& manifest,
                      const std::vector<std::string>& ids, const LossConfig& mask_config,
                      std::vector<FrameEval>* per_frame) {
    MetricReport aggregate;
    std::int64_t frames_used = 0;
    double rmse = 0, rel = 0, mae = 0, d105 = 0, d110 = 0, d125 = 0;
    for (const std::string& id : ids) {
        const Frame frame = load_frame(manifest, manifest.find(id));
        BatchTensors batch = pack_batch({&frame}, {});
        ModelOutputs out = model.forward(nullptr, batch.rgb, batch.sparse_depth,
                                         batch.valid_mask);
        const DepthMap gt = frame.gt_depth;
        const ValidityMask mask = make_eval_mask(gt, mask_config.range());
        const DepthMap coarse = tensor_plane_to_depth(out.coarse, 0);
        MetricReport coarse_report = compute_metrics(coarse, gt, mask);
        MetricReport main_report = coarse_report;
        MetricReport refined_report = coarse_report;
        if (out.refined.defined()) {
            const DepthMap refined = tensor_plane_to_depth(out.refined, 0);
            refined_report = compute_metrics(refined, gt, mask);
            main_report = refined_report;
        }
        if (per_frame) per_frame->push_back({id, coarse_report, refined_report});
        if (!main_report.has_pixels()) continue;
        rmse += main_report.rmse;
        rel += main_report.rel;
        mae += main_report.mae;
        d105 += main_report.delta_105;
        d110 += main_report.delta_110;
        d125 += main_report.delta_125;
        aggregate.pixel_count += main_report.pixel_count;
        ++frames_used;
    }
    if (frames_used == 0) return aggregate;
    aggregate.rmse = rmse / frames_used;
    aggregate.rel = rel / frames_used;
    aggregate.mae = mae / frames_used;
    aggregate.delta_105 = d105 / frames_used;
    aggregate.delta_110 = d110 / frames_used;
    aggregate.delta_125 = d125 / frames_used;
    return aggregate;
}

void train(TrainState& state, const Manifest& manifest,
           const std::vector<std::string>& train_ids, const std::vector<std::string>& val_ids,
           const TrainOptions& options, const EpochCallback& callback) {
    if (train_ids.empty() || val_ids.empty()) {
        throw std::invalid_argument("train: training and validation sets must be non-empty");
    }
    if (options.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    options.loss.validate();

    FrameCache cache;
    CameraIntrinsics intrinsics = manifest.find(train_ids.front()).intrinsics;

    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
    }

    for (int epoch = state.epoch + 1; epoch <= state.epoch + options.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        std::vector<std::string> order = train_ids;
        std::mt19937 shuffle_rng(
            static_cast<std::uint32_t>(state.rng_seed ^ (0x85ebca6bull * epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double sum_total = 0, sum_coarse = 0, sum_refined = 0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t stop = std::min(order.size(), start + options.batch_size);
            std::vector<const Frame*> frames;
            std::vector<bool> flips;
            for (std::size_t i = start; i < stop; ++i) {
                frames.push_back(&cache.get(manifest, order[i]));
                flips.push_back(options.horizontal_flips &&
                                (shuffle_rng() & 1u) == 1u);
            }
            BatchTensors batch = pack_batch(frames, flips);

            Tape tape;
            state.model.zero_grads();
            ModelOutputs out = state.model.forward(&tape, batch.rgb, batch.sparse_depth,
                                                   batch.valid_mask);
            LossBreakdown loss = total_loss(&tape, out.coarse, out.refined, batch.gt_depth,
                                            intrinsics, options.loss);
            if (!std::isfinite(loss.total)) {
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batches));
            }
            sum_total += loss.total;
            sum_coarse += loss.coarse_total;
            sum_refined += loss.refined_total;
            ++batches;
            if (options.adam.lr > 0.0f) {
                tape.backward(loss.total_tensor);
                adam_step(state.model.parameters(), options.adam);
            }
            tape.reset();
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_total = sum_total / batches;
        stats.mean_coarse = sum_coarse / batches;
        stats.mean_refined = sum_refined / batches;
        stats.validation = evaluate(state.model, manifest, val_ids, options.loss);
        state.epoch = epoch;
        if (stats.validation.has_pixels() && stats.validation.rmse < state.best_val_rmse) {
            state.best_val_rmse = stats.validation.rmse;
            stats.is_best = true;
            if (!options.out_dir.empty()) {
                save_checkpoint(options.out_dir / "best.ckpt", state);
            }
        }
        if (!options.out_dir.empty()) {
            save_checkpoint(options.out_dir / "last.ckpt", state);
        }
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                .count();
        if (callback) callback(stats);
    }
}

}  // namespace depthfill
