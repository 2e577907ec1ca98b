#pragma once

#include "depthfill/dataset.hpp"
#include "depthfill/losses.hpp"
#include "depthfill/metrics.hpp"
#include "depthfill/model.hpp"
#include "depthfill/optim.hpp"

#include <functional>
#include <string>
#include <vector>

namespace depthfill {

struct TrainOptions {
    int epochs = 30;
    int batch_size = 4;
    AdamConfig adam;  // lr 1e-4, decoupled weight decay
    LossConfig loss;
    bool horizontal_flips = true;
    std::filesystem::path out_dir;  // empty: no checkpoints written
};

struct EpochStats {
    int epoch = 0;
    double mean_total = 0.0;
    double mean_coarse = 0.0;
    double mean_refined = 0.0;
    MetricReport validation;
    double seconds = 0.0;
    bool is_best = false;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Per-frame evaluation record (refined falls back to coarse when the model
/// has no refinement head).
struct FrameEval {
    std::string id;
    MetricReport coarse;
    MetricReport refined;
};

/// Runs the model over the listed frames and aggregates per-frame metrics
/// (unweighted mean over frames with at least one valid pixel). Metrics are
/// computed on the refined output when present, else the coarse output.
MetricReport evaluate(const Model& model, const Manifest& manifest,
                      const std::vector<std::string>& ids, const LossConfig& mask_config,
                      std::vector<FrameEval>* per_frame = nullptr);

/// Seeded minibatch training: shuffled batches, forward, combined loss,
/// backward, Adam step. Validates after every epoch, tracks the best
/// validation RMSE and (when out_dir is set) writes best.ckpt / last.ckpt.
/// Non-finite losses abort with the offending epoch and batch id.
void train(TrainState& state, const Manifest& manifest,
           const std::vector<std::string>& train_ids, const std::vector<std::string>& val_ids,
           const TrainOptions& options, const EpochCallback& callback = nullptr);

}  // namespace depthfill
