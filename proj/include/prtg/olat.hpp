// SPDX-License-Identifier: Apache-2.0
//
// Synthetic one-light-at-a-time capture: hemisphere-sampled cameras and
// directional lights over an analytic scene, ray traced with direct Lambertian
// shading and hard shadows.
#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "prtg/camera.hpp"
#include "prtg/error.hpp"
#include "prtg/image.hpp"
#include "prtg/parallel.hpp"
#include "prtg/scene_spec.hpp"

namespace prtg {

inline constexpr double kShadowEpsilon = 1e-4;

struct DirectionalLight {
    Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();  // unit, towards the light
    Eigen::Vector3d intensity = Eigen::Vector3d::Ones();
};

struct OlatDataset {
    std::vector<Camera> cameras;
    std::vector<DirectionalLight> lights;
    std::vector<Image> images;  // camera-major: images[cam * lights.size() + light]
    std::optional<SceneSpec> scene;

    [[nodiscard]] const Image& image(std::size_t cam, std::size_t light) const {
        return images[cam * lights.size() + light];
    }
    [[nodiscard]] Image& image(std::size_t cam, std::size_t light) { return images[cam * lights.size() + light]; }

    void validate() const {
        if (cameras.empty() || lights.empty()) throw InputError("dataset needs at least one camera and one light");
        if (images.size() != cameras.size() * lights.size()) throw InputError("dataset image grid size mismatch");
        for (const auto& l : lights) {
            if (std::abs(l.direction.norm() - 1.0) > 1e-4) throw InputError("light direction must be unit length");
            if (l.direction.z() < -1e-9) throw InputError("light directions must lie in the upper hemisphere");
        }
        for (std::size_t c = 0; c < cameras.size(); ++c) {
            cameras[c].validate();
            for (std::size_t l = 0; l < lights.size(); ++l) {
                const Image& img = image(c, l);
                if (img.width() != cameras[c].width || img.height() != cameras[c].height) {
                    throw InputError("dataset image size does not match its camera");
                }
            }
        }
    }
};

/// Fibonacci-spiral points on the upper unit hemisphere, scaled by `radius`.
/// Point i has z = 1 - i / count, so count = 1 yields the pole.
[[nodiscard]] inline std::vector<Eigen::Vector3d> sample_hemisphere(int count, double radius = 1.0) {
    if (count < 1) throw InputError("sample_hemisphere: count must be >= 1");
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Eigen::Vector3d> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double z = 1.0 - static_cast<double>(i) / count;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden_angle * i;
        out.emplace_back(radius * r * std::cos(phi), radius * r * std::sin(phi), radius * z);
    }
    return out;
}

/// Look-at cameras on the hemisphere of `radius` around `target`.
[[nodiscard]] inline std::vector<Camera> hemisphere_cameras(int count, double radius, const Eigen::Vector3d& target,
                                                            int width, int height, double focal) {
    std::vector<Camera> cams;
    for (const auto& p : sample_hemisphere(count, radius)) {
        Camera cam = Camera::look_at(target + p, target, Eigen::Vector3d::UnitZ(), width, height, focal);
        cam.near = std::max(1e-3, 0.01 * radius);
        cam.far = 10.0 * radius;
        cams.push_back(cam);
    }
    return cams;
}

/// Nearest hit per pixel centre; the light-independent half of an OLAT render.
struct PrimaryHits {
    int width = 0;
    int height = 0;
    std::vector<std::optional<Hit>> hits;
};

[[nodiscard]] inline PrimaryHits trace_primary(const SceneSpec& scene, const Camera& cam) {
    cam.validate();
    PrimaryHits out{cam.width, cam.height, std::vector<std::optional<Hit>>(static_cast<std::size_t>(cam.width) * cam.height)};
    const Eigen::Vector3d origin = cam.center();
    parallel_for(
        0, out.hits.size(),
        [&](std::size_t p) {
            const int x = static_cast<int>(p % cam.width);
            const int y = static_cast<int>(p / cam.width);
            out.hits[p] = intersect(scene, origin, cam.ray_direction(x + 0.5, y + 0.5));
        },
        256);
    return out;
}

/// Direct Lambertian shading of cached primary hits under one directional light.
[[nodiscard]] inline Image shade_hits(const SceneSpec& scene, const PrimaryHits& hits, const Eigen::Vector3d& light_dir,
                                      const Eigen::Vector3d& intensity) {
    Image img(hits.width, hits.height);
    auto values = img.values();
    parallel_for(
        0, hits.hits.size(),
        [&](std::size_t p) {
            const auto& h = hits.hits[p];
            if (!h) return;
            const double cosine = h->normal.dot(light_dir);
            if (cosine <= 0.0) return;
            if (occluded(scene, h->point + kShadowEpsilon * h->normal, light_dir)) return;
            for (int c = 0; c < 3; ++c) values[p * 3 + c] = static_cast<float>(intensity[c] * h->albedo[c] * cosine);
        },
        256);
    return img;
}

/// One primary ray per pixel centre, one shadow ray per hit. Misses are black.
[[nodiscard]] inline Image raytrace_olat(const SceneSpec& scene, const Camera& cam, const Eigen::Vector3d& light_dir,
                                         const Eigen::Vector3d& intensity) {
    scene.validate();
    if (std::abs(light_dir.norm() - 1.0) > 1e-6) throw InputError("raytrace_olat: light direction must be unit");
    return shade_hits(scene, trace_primary(scene, cam), light_dir, intensity);
}

struct SynthConfig {
    int cameras = 25;
    int lights = 200;
    int resolution = 128;
    double camera_radius = 0.0;  // 0: three times the scene bounding radius
    Eigen::Vector3d intensity = Eigen::Vector3d::Ones();
};

/// Camera rig used by synth_dataset: hemisphere look-at cameras whose field of
/// view frames the scene's bounding sphere.
[[nodiscard]] inline std::vector<Camera> synth_cameras(const SceneSpec& scene, const SynthConfig& cfg) {
    if (cfg.cameras < 1 || cfg.lights < 1 || cfg.resolution < 1) throw InputError("synth: counts must be >= 1");
    const auto [center, bound] = scene.bounds();
    const double radius = cfg.camera_radius > 0.0 ? cfg.camera_radius : 3.0 * bound;
    const double half_angle = std::asin(std::min(0.95, 1.05 * bound / radius));
    const double focal = 0.5 * cfg.resolution / std::tan(half_angle);
    return hemisphere_cameras(cfg.cameras, radius, center, cfg.resolution, cfg.resolution, focal);
}

[[nodiscard]] inline OlatDataset synth_dataset(const SceneSpec& scene, const SynthConfig& cfg) {
    scene.validate();
    OlatDataset ds;
    ds.scene = scene;
    ds.cameras = synth_cameras(scene, cfg);
    for (const auto& d : sample_hemisphere(cfg.lights)) ds.lights.push_back({d, cfg.intensity});
    ds.images.resize(ds.cameras.size() * ds.lights.size());
    for (std::size_t c = 0; c < ds.cameras.size(); ++c) {
        const PrimaryHits hits = trace_primary(scene, ds.cameras[c]);
        for (std::size_t l = 0; l < ds.lights.size(); ++l) {
            ds.image(c, l) = shade_hits(scene, hits, ds.lights[l].direction, ds.lights[l].intensity);
        }
    }
    return ds;
}

/// Per-camera pixel-wise mean over lights. Empty index lists select everything.
[[nodiscard]] inline std::vector<std::pair<Camera, Image>> average_uniform(const OlatDataset& ds,
                                                                           std::vector<int> cameras = {},
                                                                           std::vector<int> lights = {}) {
    if (ds.cameras.empty() || ds.lights.empty()) throw InputError("average_uniform: empty dataset");
    if (cameras.empty())
        for (int c = 0; c < static_cast<int>(ds.cameras.size()); ++c) cameras.push_back(c);
    if (lights.empty())
        for (int l = 0; l < static_cast<int>(ds.lights.size()); ++l) lights.push_back(l);
    std::vector<std::pair<Camera, Image>> out;
    for (int c : cameras) {
        const Camera& cam = ds.cameras.at(static_cast<std::size_t>(c));
        std::vector<double> acc(static_cast<std::size_t>(cam.width) * cam.height * 3, 0.0);
        for (int l : lights) {
            const auto v = ds.image(static_cast<std::size_t>(c), static_cast<std::size_t>(l)).values();
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
        }
        Image mean(cam.width, cam.height);
        auto mv = mean.values();
        for (std::size_t i = 0; i < acc.size(); ++i) mv[i] = static_cast<float>(acc[i] / lights.size());
        out.emplace_back(cam, std::move(mean));
    }
    return out;
}

}  // namespace prtg
