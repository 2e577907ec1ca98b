#include "depthfill/synth.hpp"

#include "depthfill/threading.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace depthfill {

namespace {

Vec3d operator+(Vec3d a, Vec3d b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3d operator-(Vec3d a, Vec3d b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3d operator*(Vec3d a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(Vec3d a, Vec3d b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double length(Vec3d a) { return std::sqrt(dot(a, a)); }
Vec3d normalized(Vec3d a) {
    const double l = length(a);
    return l > 0 ? a * (1.0 / l) : Vec3d{0, 0, 1};
}

constexpr double kTMin = 1e-6;

struct Hit {
    double t = -1.0;  // camera-space depth (ray is p = t * v with v.z == 1)
    Vec3d normal;
    int primitive = -1;  // -1 none, -2 table, -3 wall
    bool valid() const { return t > 0.0; }
};

/// splitmix64; stable across platforms.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Small deterministic RNG for scene sampling and corruption draws.
struct Rng {
    std::uint64_t state;
    explicit Rng(std::uint64_t seed) : state(mix64(seed ^ 0xd1b54a32d192ed03ull)) {}
    std::uint64_t next_u64() {
        state = mix64(state);
        return state;
    }
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int lo, int hi) {  // inclusive
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }
    double gaussian() {
        // Box-Muller; consumes two uniforms.
        const double u1 = std::max(uniform(), 1e-12);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }
};

double plane_hit(Vec3d point, Vec3d normal, Vec3d v) {
    const double denom = dot(v, normal);
    if (std::abs(denom) < 1e-12) return -1.0;
    const double t = dot(point, normal) / denom;
    return t > kTMin ? t : -1.0;
}

double sphere_hit(const Primitive& p, Vec3d v, Vec3d* normal) {
    // |t v - c|^2 = r^2
    const double a = dot(v, v);
    const double b = -2.0 * dot(v, p.center);
    const double c = dot(p.center, p.center) - p.radius * p.radius;
    const double disc = b * b - 4 * a * c;
    if (disc < 0) return -1.0;
    const double sq = std::sqrt(disc);
    double t = (-b - sq) / (2 * a);
    if (t <= kTMin) t = (-b + sq) / (2 * a);
    if (t <= kTMin) return -1.0;
    *normal = normalized(v * t - p.center);
    return t;
}

Vec3d rotate_y(Vec3d v, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {c * v.x + s * v.z, v.y, -s * v.x + c * v.z};
}

double box_hit(const Primitive& p, Vec3d v, Vec3d* normal) {
    // Slab test in the box frame (yaw about camera y).
    const Vec3d o = rotate_y(Vec3d{0, 0, 0} - p.center, -p.yaw);
    const Vec3d d = rotate_y(v, -p.yaw);
    const double he[3] = {p.half_extents.x, p.half_extents.y, p.half_extents.z};
    const double ov[3] = {o.x, o.y, o.z};
    const double dv[3] = {d.x, d.y, d.z};
    double t_lo = kTMin, t_hi = 1e30;
    int axis_lo = -1;
    double sign_lo = 1.0;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dv[a]) < 1e-12) {
            if (std::abs(ov[a]) > he[a]) return -1.0;
            continue;
        }
        double t0 = (-he[a] - ov[a]) / dv[a];
        double t1 = (he[a] - ov[a]) / dv[a];
        double sgn = -1.0;
        if (t0 > t1) {
            std::swap(t0, t1);
            sgn = 1.0;
        }
        if (t0 > t_lo) {
            t_lo = t0;
            axis_lo = a;
            sign_lo = sgn;
        }
        t_hi = std::min(t_hi, t1);
        if (t_lo > t_hi) return -1.0;
    }
    if (axis_lo < 0) return -1.0;  // ray starts inside; not a surface we report
    Vec3d n{0, 0, 0};
    if (axis_lo == 0) n.x = sign_lo;
    if (axis_lo == 1) n.y = sign_lo;
    if (axis_lo == 2) n.z = sign_lo;
    *normal = rotate_y(n, p.yaw);
    return t_lo;
}

double cylinder_hit(const Primitive& p, Vec3d v, Vec3d* normal) {
    const Vec3d a = normalized(p.axis);
    const Vec3d base = p.center;
    // Lateral surface: |(tv - base) - ((tv - base).a) a|^2 = r^2
    const Vec3d w0 = Vec3d{0, 0, 0} - base;
    const Vec3d vp = v - a * dot(v, a);
    const Vec3d wp = w0 - a * dot(w0, a);
    const double qa = dot(vp, vp);
    const double qb = 2.0 * dot(vp, wp);
    const double qc = dot(wp, wp) - p.radius * p.radius;
    double best = -1.0;
    Vec3d best_n;
    if (qa > 1e-12) {
        const double disc = qb * qb - 4 * qa * qc;
        if (disc >= 0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa)}) {
                if (t <= kTMin) continue;
                const Vec3d hit = v * t;
                const double s = dot(hit - base, a);
                if (s < 0.0 || s > p.length) continue;
                if (best < 0 || t < best) {
                    best = t;
                    best_n = normalized(hit - base - a * s);
                }
            }
        }
    }
    // End caps.
    for (int cap = 0; cap < 2; ++cap) {
        const Vec3d cp = cap == 0 ? base : base + a * p.length;
        const Vec3d cn = cap == 0 ? a * -1.0 : a;
        const double denom = dot(v, cn);
        if (std::abs(denom) < 1e-12) continue;
        const double t = dot(cp, cn) / denom;
        if (t <= kTMin) continue;
        const Vec3d hit = v * t;
        if (length(hit - cp) > p.radius) continue;
        if (best < 0 || t < best) {
            best = t;
            best_n = cn;
        }
    }
    if (best > 0) *normal = best_n;
    return best;
}

Hit trace(const SceneSpec& spec, Vec3d v, bool skip_transparent) {
    Hit hit;
    const double tw = plane_hit(Vec3d{0, 0, spec.wall_z}, Vec3d{0, 0, -1}, v);
    if (tw > 0) {
        hit.t = tw;
        hit.normal = {0, 0, -1};
        hit.primitive = -3;
    }
    const double tt = plane_hit(spec.table_point, spec.table_normal, v);
    if (tt > 0 && (hit.t < 0 || tt < hit.t)) {
        hit.t = tt;
        hit.normal = normalized(spec.table_normal);
        hit.primitive = -2;
    }
    for (int i = 0; i < static_cast<int>(spec.primitives.size()); ++i) {
        const Primitive& p = spec.primitives[i];
        if (skip_transparent && p.material == Material::transparent) continue;
        Vec3d n;
        double t = -1.0;
        switch (p.kind) {
            case Primitive::Kind::sphere: t = sphere_hit(p, v, &n); break;
            case Primitive::Kind::box: t = box_hit(p, v, &n); break;
            case Primitive::Kind::cylinder: t = cylinder_hit(p, v, &n); break;
        }
        if (t > 0 && (hit.t < 0 || t < hit.t)) {
            hit.t = t;
            hit.normal = n;
            hit.primitive = i;
        }
    }
    return hit;
}

Vec3d shade(const SceneSpec& spec, const Hit& hit, Vec3d v) {
    Vec3d albedo;
    if (hit.primitive == -3) {
        albedo = spec.wall_albedo;
    } else if (hit.primitive == -2) {
        // Checker pattern on the table for texture cues.
        const Vec3d p = v * hit.t;
        const Vec3d n = normalized(spec.table_normal);
        const Vec3d u_axis = normalized(Vec3d{1, 0, 0} - n * n.x);
        const Vec3d v_axis = {n.y * u_axis.z - n.z * u_axis.y, n.z * u_axis.x - n.x * u_axis.z,
                              n.x * u_axis.y - n.y * u_axis.x};
        const double u = dot(p, u_axis);
        const double w = dot(p, v_axis);
        const bool dark =
            (static_cast<long long>(std::floor(u / 0.08)) +
             static_cast<long long>(std::floor(w / 0.08))) % 2 != 0;
        albedo = spec.table_albedo * (dark ? 0.65 : 1.0);
    } else {
        albedo = spec.primitives[hit.primitive].albedo;
    }
    const Vec3d l = normalized(spec.light_dir);
    const double lambert = std::max(0.0, dot(hit.normal, l * -1.0));
    Vec3d color = albedo * (0.25 + 0.75 * lambert);
    if (hit.primitive >= 0 &&
        spec.primitives[hit.primitive].material == Material::reflective) {
        // Blinn-Phong highlight for specular appearance.
        const Vec3d view = normalized(v) * -1.0;
        const Vec3d half = normalized(view + l * -1.0);
        const double spec_term = std::pow(std::max(0.0, dot(hit.normal, half)), 32.0);
        color = color + Vec3d{1, 1, 1} * (0.6 * spec_term);
    }
    return color;
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Vec3d pixel_dir(const CameraIntrinsics& k, int y, int x) {
    return {(x + 0.5 - k.cx) / k.fx, (y + 0.5 - k.cy) / k.fy, 1.0};
}

}  // namespace

void SceneSpec::validate() const {
    if (height < 8 || width < 8) throw std::invalid_argument("scene: image too small");
    if (intrinsics.fx <= 0 || intrinsics.fy <= 0) {
        throw std::invalid_argument("scene: focal lengths must be positive");
    }
    if (intrinsics.cx < 0 || intrinsics.cx > width || intrinsics.cy < 0 ||
        intrinsics.cy > height) {
        throw std::invalid_argument("scene: principal point outside image bounds");
    }
    if (wall_z <= 0) throw std::invalid_argument("scene: wall must be in front of the camera");
}

RenderResult render_scene(const SceneSpec& spec) {
    spec.validate();
    RenderResult result;
    result.rgb = ImageRGB(spec.height, spec.width);
    result.gt_depth = DepthMap(spec.height, spec.width);
    result.material_mask = ImageGray16(spec.height, spec.width);

    parallel_for(0, spec.height, [&](std::int64_t y) {
        for (int x = 0; x < spec.width; ++x) {
            const Vec3d v = pixel_dir(spec.intrinsics, static_cast<int>(y), x);
            const Hit hit = trace(spec, v, false);
            // The wall guarantees a hit for every ray.
            result.gt_depth.at(static_cast<int>(y), x) = static_cast<float>(hit.t);
            Material mat = Material::opaque;
            if (hit.primitive >= 0) mat = spec.primitives[hit.primitive].material;
            result.material_mask.at(static_cast<int>(y), x) =
                static_cast<std::uint16_t>(mat);
            Vec3d color = shade(spec, hit, v);
            if (mat == Material::transparent) {
                const Hit behind = trace(spec, v, true);
                const Vec3d back = shade(spec, behind, v);
                color = color * 0.35 + back * 0.65;
            }
            std::uint8_t* px = result.rgb.at(static_cast<int>(y), x);
            px[0] = to_byte(color.x);
            px[1] = to_byte(color.y);
            px[2] = to_byte(color.z);
        }
    });
    return result;
}

double background_depth_at(const SceneSpec& spec, int y, int x) {
    const Hit hit = trace(spec, pixel_dir(spec.intrinsics, y, x), true);
    return hit.t;
}

SparseDepthInput corrupt_depth(const DepthMap& gt, const ImageGray16& material_mask,
                               const SceneSpec& spec, std::uint64_t seed,
                               const CorruptionConfig& config) {
    if (gt.height != material_mask.height || gt.width != material_mask.width) {
        throw std::invalid_argument("corrupt_depth: mask dims do not match gt");
    }
    SparseDepthInput out;
    out.depth = DepthMap(gt.height, gt.width);
    out.mask = ValidityMask(gt.height, gt.width);
    Rng rng(seed);
    for (int y = 0; y < gt.height; ++y) {
        for (int x = 0; x < gt.width; ++x) {
            const float g = gt.at(y, x);
            if (g <= 0.0f) continue;  // gt hole stays a hole
            const auto mat = static_cast<Material>(material_mask.at(y, x));
            double value = 0.0;
            bool valid = false;
            switch (mat) {
                case Material::transparent: {
                    if (rng.uniform() < config.transparent_drop) break;
                    const double bg = background_depth_at(spec, y, x);
                    if (bg > 0) {
                        value = bg;
                        valid = true;
                    }
                    break;
                }
                case Material::reflective: {
                    if (rng.uniform() < config.reflective_drop) break;
                    value = g;
                    if (config.enable_noise) {
                        value *= 1.0 + rng.uniform(-config.reflective_noise,
                                                   config.reflective_noise);
                    }
                    valid = true;
                    break;
                }
                case Material::opaque: {
                    if (rng.uniform() < config.opaque_dropout) break;
                    value = g;
                    if (config.enable_noise) {
                        value *= 1.0 + config.opaque_noise_sigma * rng.gaussian();
                    }
                    valid = true;
                    break;
                }
            }
            if (valid && value > 0.0) {
                out.depth.at(y, x) = static_cast<float>(value);
                out.mask.set(y, x, true);
            }
        }
    }
    return out;
}

SceneSpec random_scene_spec(std::uint64_t seed, int height, int width) {
    Rng rng(seed);
    SceneSpec spec;
    spec.seed = seed;
    spec.height = height;
    spec.width = width;
    spec.intrinsics.fx = 0.7 * width;
    spec.intrinsics.fy = 0.7 * width;
    spec.intrinsics.cx = width / 2.0;
    spec.intrinsics.cy = height / 2.0;

    spec.wall_z = rng.uniform(1.35, 1.48);
    spec.wall_albedo = {rng.uniform(0.5, 0.85), rng.uniform(0.5, 0.85), rng.uniform(0.5, 0.85)};
    const double tilt = rng.uniform(0.3, 0.6);  // radians from vertical
    spec.table_normal = normalized({rng.uniform(-0.08, 0.08), -std::cos(tilt), -std::sin(tilt)});
    spec.table_point = {0, rng.uniform(0.18, 0.30), rng.uniform(0.95, 1.2)};
    spec.table_albedo = {rng.uniform(0.3, 0.8), rng.uniform(0.3, 0.8), rng.uniform(0.3, 0.8)};
    spec.light_dir = normalized({rng.uniform(-0.4, 0.4), rng.uniform(0.3, 0.9),
                                 rng.uniform(0.2, 0.8)});

    const int count = rng.uniform_int(2, 5);
    const Vec3d up = normalized(spec.table_normal) * -1.0;  // away from the table
    for (int i = 0; i < count; ++i) {
        Primitive p;
        const int kind = rng.uniform_int(0, 2);
        p.kind = kind == 0 ? Primitive::Kind::sphere
                           : (kind == 1 ? Primitive::Kind::box : Primitive::Kind::cylinder);
        if (i == 0) {
            p.material = rng.uniform() < 0.7 ? Material::transparent : Material::reflective;
        } else {
            const double u = rng.uniform();
            p.material = u < 0.5 ? Material::opaque
                                 : (u < 0.8 ? Material::transparent : Material::reflective);
        }
        p.albedo = {rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9)};
        // Anchor on the table inside the view frustum.
        const double px = rng.uniform(0.25, 0.75) * width;
        const double py = rng.uniform(0.4, 0.85) * height;
        const Vec3d v{(px - spec.intrinsics.cx) / spec.intrinsics.fx,
                      (py - spec.intrinsics.cy) / spec.intrinsics.fy, 1.0};
        const double t = plane_hit(spec.table_point, spec.table_normal, v);
        const Vec3d anchor = v * (t > 0 ? t : 1.0);
        switch (p.kind) {
            case Primitive::Kind::sphere:
                p.radius = rng.uniform(0.04, 0.10);
                p.center = anchor + up * p.radius;
                break;
            case Primitive::Kind::box:
                p.half_extents = {rng.uniform(0.03, 0.08), rng.uniform(0.03, 0.08),
                                  rng.uniform(0.03, 0.08)};
                p.yaw = rng.uniform(0.0, 3.14159);
                p.center = anchor + up * p.half_extents.y;
                break;
            case Primitive::Kind::cylinder:
                p.radius = rng.uniform(0.03, 0.06);
                p.length = rng.uniform(0.08, 0.20);
                p.axis = up;
                p.center = anchor;
                break;
        }
        spec.primitives.push_back(p);
    }
    return spec;
}

}  // namespace depthfill
