#include "depthfill/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace depthfill {

namespace {

using nlohmann::json;

constexpr const char* kMagic = "DEPTHFILL-CKPT v1";

json config_to_json(const ModelConfig& c) {
    json j;
    j["stage_widths"] = c.stage_widths;
    j["input_height"] = c.input_height;
    j["input_width"] = c.input_width;
    j["use_cmfm"] = c.use_cmfm;
    j["use_refinement"] = c.use_refinement;
    j["kernels"] = c.schedule.kernels;
    j["total_steps"] = c.schedule.total_steps;
    j["snapshot_steps"] = c.schedule.snapshot_steps;
    j["depth_norm_max"] = c.depth_norm_max;
    j["seed"] = c.seed;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.stage_widths = j.at("stage_widths").get<std::vector<int>>();
    c.input_height = j.at("input_height").get<int>();
    c.input_width = j.at("input_width").get<int>();
    c.use_cmfm = j.at("use_cmfm").get<bool>();
    c.use_refinement = j.at("use_refinement").get<bool>();
    c.schedule.kernels = j.at("kernels").get<std::vector<int>>();
    c.schedule.total_steps = j.at("total_steps").get<int>();
    c.schedule.snapshot_steps = j.at("snapshot_steps").get<std::vector<int>>();
    c.depth_norm_max = j.at("depth_norm_max").get<float>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

void append_blob(std::vector<char>& blob, const float* data, std::size_t count) {
    const std::size_t old = blob.size();
    blob.resize(old + count * sizeof(float));
    std::memcpy(blob.data() + old, data, count * sizeof(float));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    const auto& params = state.model.parameters();
    json header;
    header["config"] = config_to_json(state.model.config());
    header["epoch"] = state.epoch;
    header["rng_seed"] = state.rng_seed;
    if (std::isfinite(state.best_val_rmse)) {
        header["best_val_rmse"] = state.best_val_rmse;
    } else {
        header["best_val_rmse"] = nullptr;
    }

    std::vector<char> blob;
    json tensors = json::array();
    json adam_steps = json::array();
    auto add_tensor = [&](const std::string& name, const Shape4& shape, const float* data,
                          std::size_t count) {
        json t;
        t["name"] = name;
        t["shape"] = {shape.n, shape.c, shape.h, shape.w};
        t["offset"] = blob.size();
        t["dtype"] = "f32";
        tensors.push_back(std::move(t));
        append_blob(blob, data, count);
    };
    for (const Parameter& p : params) {
        add_tensor(p.name, p.tensor.shape(), p.tensor.data(), p.tensor.numel());
        add_tensor(p.name + ".adam_m", p.tensor.shape(), p.adam_m.data(), p.adam_m.size());
        add_tensor(p.name + ".adam_v", p.tensor.shape(), p.adam_v.data(), p.adam_v.size());
        adam_steps.push_back(p.step);
    }
    header["tensors"] = std::move(tensors);
    header["adam_steps"] = std::move(adam_steps);
    header["blob_bytes"] = blob.size();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path.string());
    out << kMagic << "\n" << header.dump() << "\n";
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path.string());
    std::string magic, header_line;
    if (!std::getline(in, magic) || magic != kMagic) {
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    }
    if (!std::getline(in, header_line)) {
        throw std::runtime_error("checkpoint: missing header in " + path.string());
    }
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::exception& e) {
        throw std::runtime_error("checkpoint: corrupt header: " + std::string(e.what()));
    }

    const std::size_t blob_bytes = header.at("blob_bytes").get<std::size_t>();
    std::vector<char> blob(blob_bytes);
    in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
    if (static_cast<std::size_t>(in.gcount()) != blob_bytes || in.peek() != EOF) {
        throw std::runtime_error("checkpoint: blob length does not match header");
    }

    TrainState state = build_model(config_from_json(header.at("config")));
    state.epoch = header.at("epoch").get<int>();
    state.rng_seed = header.at("rng_seed").get<std::uint64_t>();
    if (header.at("best_val_rmse").is_null()) {
        state.best_val_rmse = std::numeric_limits<double>::infinity();
    } else {
        state.best_val_rmse = header.at("best_val_rmse").get<double>();
    }

    auto& params = state.model.parameters();
    const json& tensors = header.at("tensors");
    const json& adam_steps = header.at("adam_steps");
    if (tensors.size() != params.size() * 3 || adam_steps.size() != params.size()) {
        throw std::runtime_error("checkpoint: tensor directory does not match the model");
    }
    auto read_into = [&](const json& t, const std::string& want_name, float* dst,
                         std::size_t count, const Shape4& want_shape) {
        if (t.at("name").get<std::string>() != want_name) {
            throw std::runtime_error("checkpoint: expected tensor '" + want_name + "', found '" +
                                     t.at("name").get<std::string>() + "'");
        }
        if (t.at("dtype").get<std::string>() != "f32") {
            throw std::runtime_error("checkpoint: unsupported dtype for " + want_name);
        }
        const auto shape = t.at("shape").get<std::vector<int>>();
        if (shape.size() != 4 || shape[0] != want_shape.n || shape[1] != want_shape.c ||
            shape[2] != want_shape.h || shape[3] != want_shape.w) {
            throw std::runtime_error("checkpoint: shape mismatch for " + want_name +
                                     " versus the configured model");
        }
        const std::size_t offset = t.at("offset").get<std::size_t>();
        if (offset + count * sizeof(float) > blob.size()) {
            throw std::runtime_error("checkpoint: tensor " + want_name + " overruns the blob");
        }
        std::memcpy(dst, blob.data() + offset, count * sizeof(float));
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        read_into(tensors[3 * i], p.name, p.tensor.data(), p.tensor.numel(), p.tensor.shape());
        read_into(tensors[3 * i + 1], p.name + ".adam_m", p.adam_m.data(), p.adam_m.size(),
                  p.tensor.shape());
        read_into(tensors[3 * i + 2], p.name + ".adam_v", p.adam_v.data(), p.adam_v.size(),
                  p.tensor.shape());
        p.step = adam_steps[i].get<std::int64_t>();
    }
    return state;
}

}  // namespace depthfill
