#include "depthfill/dataset.hpp"

#include "depthfill/png_io.hpp"
#include "depthfill/threading.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace depthfill {

namespace {

using nlohmann::json;

std::uint64_t mix_scene_seed(std::uint64_t base, int index) {
    std::uint64_t x = base ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(index + 1));
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    return x;
}

std::string scene_id(int index) {
    std::ostringstream os;
    os << "scene_" << std::setfill('0') << std::setw(6) << index;
    return os.str();
}

}  // namespace

const SceneRecord& Manifest::find(const std::string& id) const {
    for (const SceneRecord& r : records) {
        if (r.id == id) return r;
    }
    throw std::runtime_error("manifest: unknown scene id '" + id + "'");
}

Manifest load_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.jsonl";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
    Manifest manifest;
    manifest.root = dir;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        SceneRecord r;
        r.id = j.at("id").get<std::string>();
        r.rgb = j.at("rgb").get<std::string>();
        r.raw_depth = j.at("raw_depth").get<std::string>();
        r.gt_depth = j.at("gt_depth").get<std::string>();
        r.mask = j.at("mask").get<std::string>();
        r.intrinsics.fx = j.at("fx").get<double>();
        r.intrinsics.fy = j.at("fy").get<double>();
        r.intrinsics.cx = j.at("cx").get<double>();
        r.intrinsics.cy = j.at("cy").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        manifest.records.push_back(std::move(r));
    }
    return manifest;
}

std::vector<std::string> load_split(const std::filesystem::path& dir, const std::string& name) {
    const auto path = dir / "splits" / (name + ".txt");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("split: cannot open " + path.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

Manifest generate_dataset(const std::filesystem::path& out_dir, const DatasetOptions& options) {
    if (options.count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
    const double ratio_sum = options.train_ratio + options.val_ratio + options.test_ratio;
    if (std::abs(ratio_sum - 1.0) > 1e-6) {
        throw std::invalid_argument("generate_dataset: split ratios must sum to 1");
    }
    std::filesystem::create_directories(out_dir / "scenes");
    std::filesystem::create_directories(out_dir / "splits");

    Manifest manifest;
    manifest.root = out_dir;
    manifest.records.resize(options.count);

    parallel_for(0, options.count, [&](std::int64_t index) {
        std::uint64_t scene_seed = mix_scene_seed(options.seed, static_cast<int>(index));
        SceneSpec spec;
        RenderResult rendered;
        // Re-roll until a transparent/reflective primitive is actually visible.
        for (int attempt = 0;; ++attempt) {
            spec = random_scene_spec(scene_seed, options.height, options.width);
            rendered = render_scene(spec);
            bool visible = false;
            for (std::uint16_t m : rendered.material_mask.pixels) {
                if (m != static_cast<std::uint16_t>(Material::opaque)) {
                    visible = true;
                    break;
                }
            }
            if (visible || attempt >= 8) break;
            scene_seed = mix_scene_seed(scene_seed, 7919);
        }
        const SparseDepthInput corrupted =
            corrupt_depth(rendered.gt_depth, rendered.material_mask, spec, scene_seed ^ 0xc0ffee,
                          options.corruption);

        const std::string id = scene_id(static_cast<int>(index));
        SceneRecord r;
        r.id = id;
        r.rgb = "scenes/" + id + "_rgb.png";
        r.raw_depth = "scenes/" + id + "_raw.png";
        r.gt_depth = "scenes/" + id + "_gt.png";
        r.mask = "scenes/" + id + "_mask.png";
        r.intrinsics = spec.intrinsics;
        r.seed = scene_seed;
        write_rgb_png8((out_dir / r.rgb).string(), rendered.rgb);
        write_depth_png16((out_dir / r.raw_depth).string(), corrupted.depth);
        write_depth_png16((out_dir / r.gt_depth).string(), rendered.gt_depth);
        write_gray_png16((out_dir / r.mask).string(), rendered.material_mask);
        manifest.records[index] = std::move(r);
    });

    {
        std::ofstream out(out_dir / "manifest.jsonl");
        if (!out) throw std::runtime_error("generate_dataset: cannot write manifest");
        for (const SceneRecord& r : manifest.records) {
            json j;
            j["id"] = r.id;
            j["rgb"] = r.rgb;
            j["raw_depth"] = r.raw_depth;
            j["gt_depth"] = r.gt_depth;
            j["mask"] = r.mask;
            j["fx"] = r.intrinsics.fx;
            j["fy"] = r.intrinsics.fy;
            j["cx"] = r.intrinsics.cx;
            j["cy"] = r.intrinsics.cy;
            j["seed"] = r.seed;
            out << j.dump() << "\n";
        }
    }

    const int n_train = static_cast<int>(std::lround(options.count * options.train_ratio));
    const int n_val = static_cast<int>(std::lround(options.count * options.val_ratio));
    const int n_train_c = std::min(n_train, options.count);
    const int n_val_c = std::min(n_val, options.count - n_train_c);
    auto write_split = [&](const std::string& name, int lo, int hi) {
        std::ofstream out(out_dir / "splits" / (name + ".txt"));
        for (int i = lo; i < hi; ++i) out << manifest.records[i].id << "\n";
    };
    write_split("train", 0, n_train_c);
    write_split("val", n_train_c, n_train_c + n_val_c);
    write_split("test", n_train_c + n_val_c, options.count);
    return manifest;
}

Frame load_frame(const Manifest& manifest, const SceneRecord& record) {
    Frame f;
    f.rgb = read_rgb_png8((manifest.root / record.rgb).string());
    f.raw_depth = read_depth_png16((manifest.root / record.raw_depth).string());
    f.gt_depth = read_depth_png16((manifest.root / record.gt_depth).string());
    f.material_mask = read_gray_png16((manifest.root / record.mask).string());
    f.intrinsics = record.intrinsics;
    if (f.rgb.height != f.raw_depth.height || f.rgb.width != f.raw_depth.width ||
        f.rgb.height != f.gt_depth.height || f.rgb.width != f.gt_depth.width) {
        throw std::runtime_error("frame: image dimensions differ for scene " + record.id);
    }
    return f;
}

BatchTensors pack_batch(const std::vector<const Frame*>& frames,
                        const std::vector<bool>& horizontal_flip) {
    if (frames.empty()) throw std::invalid_argument("pack_batch: empty batch");
    if (!horizontal_flip.empty() && horizontal_flip.size() != frames.size()) {
        throw std::invalid_argument("pack_batch: flip flags do not match batch size");
    }
    const int h = frames[0]->rgb.height;
    const int w = frames[0]->rgb.width;
    const int n = static_cast<int>(frames.size());
    BatchTensors batch;
    batch.rgb = Tensor::zeros({n, 3, h, w});
    batch.sparse_depth = Tensor::zeros({n, 1, h, w});
    batch.valid_mask = Tensor::zeros({n, 1, h, w});
    batch.gt_depth = Tensor::zeros({n, 1, h, w});
    for (int i = 0; i < n; ++i) {
        const Frame& f = *frames[i];
        if (f.rgb.height != h || f.rgb.width != w) {
            throw std::invalid_argument("pack_batch: mixed frame sizes");
        }
        const bool flip = !horizontal_flip.empty() && horizontal_flip[i];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int sx = flip ? w - 1 - x : x;
                const std::uint8_t* px = f.rgb.at(y, sx);
                batch.rgb.at(i, 0, y, x) = px[0] / 255.0f;
                batch.rgb.at(i, 1, y, x) = px[1] / 255.0f;
                batch.rgb.at(i, 2, y, x) = px[2] / 255.0f;
                const float raw = f.raw_depth.at(y, sx);
                batch.sparse_depth.at(i, 0, y, x) = raw;
                batch.valid_mask.at(i, 0, y, x) = raw > 0.0f ? 1.0f : 0.0f;
                batch.gt_depth.at(i, 0, y, x) = f.gt_depth.at(y, sx);
            }
        }
    }
    return batch;
}

}  // namespace depthfill
