#pragma once

#include "depthfill/image.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace depthfill {

/// Deterministic analytic RGB-D scene generator. The camera sits at the
/// origin looking down +z with y pointing down; depth maps store the
/// camera-space z of the first hit, which ray-primitive intersection gives
/// exactly. A tilted support plane and a fronto-parallel back wall guarantee
/// every ray hits something.

enum class Material : std::uint16_t { opaque = 0, transparent = 1, reflective = 2 };

struct Vec3d {
    double x = 0, y = 0, z = 0;
};

struct Primitive {
    enum class Kind { sphere, box, cylinder } kind = Kind::sphere;
    Material material = Material::opaque;
    Vec3d albedo{0.7, 0.7, 0.7};
    // sphere: center + radius. box: center, half extents, yaw about camera y.
    // cylinder: base center, unit axis, radius, length.
    Vec3d center;
    double radius = 0.1;
    Vec3d half_extents{0.05, 0.05, 0.05};
    double yaw = 0.0;
    Vec3d axis{0, -1, 0};
    double length = 0.1;
};

struct SceneSpec {
    int height = 224;
    int width = 224;
    CameraIntrinsics intrinsics;
    // Tilted table plane (opaque) and fronto-parallel back wall (opaque).
    Vec3d table_point{0, 0.25, 1.1};
    Vec3d table_normal{0, -0.94, -0.34};
    Vec3d table_albedo{0.55, 0.5, 0.45};
    double wall_z = 1.45;
    Vec3d wall_albedo{0.7, 0.72, 0.75};
    std::vector<Primitive> primitives;
    Vec3d light_dir{0.2, 0.7, 0.6};  // propagation direction, normalized at use
    std::uint64_t seed = 0;

    void validate() const;
};

struct RenderResult {
    ImageRGB rgb;
    DepthMap gt_depth;
    ImageGray16 material_mask;  // Material enum values per pixel
};

/// Exact per-pixel ray casting with Lambertian shading; transparent surfaces
/// are alpha-blended (alpha 0.35) over the first non-transparent hit behind.
RenderResult render_scene(const SceneSpec& spec);

/// Depth of the first non-transparent hit along the pixel ray (the
/// refraction-artifact source used by the corruption model).
double background_depth_at(const SceneSpec& spec, int y, int x);

struct CorruptionConfig {
    float transparent_drop = 0.85f;   // else replaced by background depth
    float reflective_drop = 0.5f;
    float reflective_noise = 0.05f;   // +-5% uniform, when noise is enabled
    float opaque_dropout = 0.01f;     // salt dropout
    float opaque_noise_sigma = 0.003f;  // multiplicative gaussian
    bool enable_noise = true;
};

/// Sensor simulation over the analytic ground truth. All draws are seeded;
/// the ground truth is never modified.
SparseDepthInput corrupt_depth(const DepthMap& gt, const ImageGray16& material_mask,
                               const SceneSpec& spec, std::uint64_t seed,
                               const CorruptionConfig& config = {});

/// Seeded random desk scene: 2-5 primitives resting on the table, at least
/// one transparent or reflective.
SceneSpec random_scene_spec(std::uint64_t seed, int height, int width);

}  // namespace depthfill
