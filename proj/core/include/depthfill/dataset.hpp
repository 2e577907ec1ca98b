#pragma once

#include "depthfill/image.hpp"
#include "depthfill/synth.hpp"
#include "depthfill/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace depthfill {

/// One dataset sample: paths are relative to the manifest directory so a
/// dataset directory can be relocated wholesale.
struct SceneRecord {
    std::string id;
    std::string rgb;
    std::string raw_depth;
    std::string gt_depth;
    std::string mask;
    CameraIntrinsics intrinsics;
    std::uint64_t seed = 0;
};

struct Manifest {
    std::filesystem::path root;  // directory holding manifest.jsonl
    std::vector<SceneRecord> records;

    const SceneRecord& find(const std::string& id) const;
};

/// Loads <dir>/manifest.jsonl (one JSON record per line).
Manifest load_manifest(const std::filesystem::path& dir);

/// Ids per split, read from <dir>/splits/<name>.txt.
std::vector<std::string> load_split(const std::filesystem::path& dir, const std::string& name);

struct DatasetOptions {
    int count = 400;
    double train_ratio = 0.8;
    double val_ratio = 0.1;
    double test_ratio = 0.1;
    std::uint64_t seed = 42;
    int height = 224;
    int width = 224;
    CorruptionConfig corruption;
};

/// Renders `count` seeded scenes into out_dir (PNG pairs + manifest +
/// disjoint split lists). Returns the written manifest.
Manifest generate_dataset(const std::filesystem::path& out_dir, const DatasetOptions& options);

/// A fully loaded sample.
struct Frame {
    ImageRGB rgb;
    DepthMap raw_depth;
    DepthMap gt_depth;
    ImageGray16 material_mask;
    CameraIntrinsics intrinsics;
};

Frame load_frame(const Manifest& manifest, const SceneRecord& record);

/// Packs frames into network inputs. Layouts: rgb (n,3,h,w) in [0,1],
/// sparse depth (n,1,h,w) meters, valid mask (n,1,h,w) 0/1, gt (n,1,h,w).
struct BatchTensors {
    Tensor rgb;
    Tensor sparse_depth;
    Tensor valid_mask;
    Tensor gt_depth;
};

BatchTensors pack_batch(const std::vector<const Frame*>& frames,
                        const std::vector<bool>& horizontal_flip);

}  // namespace depthfill
