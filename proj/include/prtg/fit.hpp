// SPDX-License-Identifier: Apache-2.0
//
// Two-stage fitting of relightable Gaussians to OLAT captures.
//
// Stage 1 places Gaussians (surface samples, an external point cloud or a
// random cube for ablations) and refines opacity, scale and albedo against the
// light-averaged images. Stage 2 fits per-Gaussian transfer and albedo against
// the OLAT images, either by Adam on the image loss or by an exact linear
// least-squares solve over the compositing weights.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "prtg/camera.hpp"
#include "prtg/error.hpp"
#include "prtg/gaussian.hpp"
#include "prtg/image.hpp"
#include "prtg/metrics.hpp"
#include "prtg/olat.hpp"
#include "prtg/parallel.hpp"
#include "prtg/prt_oracle.hpp"
#include "prtg/raster.hpp"
#include "prtg/scene_spec.hpp"
#include "prtg/sh.hpp"

namespace prtg {

/// DC entry of the unoccluded clamped-cosine transfer, sqrt(pi) / 2.
inline const double kUnoccludedDc = std::sqrt(std::numbers::pi) / 2.0;
inline constexpr double kAlbedoMin = 1e-4;
inline constexpr double kAlbedoMax = 1.0 - 1e-4;

// ---------------------------------------------------------------------------
// Train / held-out split
// ---------------------------------------------------------------------------

struct DataSplit {
    std::vector<int> train_cameras;
    std::vector<int> heldout_cameras;
    std::vector<int> train_lights;
    std::vector<int> heldout_lights;
};

namespace detail {

inline void split_indices(int n, double fraction, std::mt19937_64& rng, std::vector<int>& train,
                          std::vector<int>& heldout) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(uniform01(rng) * (i + 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(std::min(j, i))]);
    }
    int held = n >= 2 ? std::clamp(static_cast<int>(std::lround(fraction * n)), 1, n - 1) : 0;
    if (fraction <= 0.0) held = 0;
    heldout.assign(idx.begin(), idx.begin() + held);
    train.assign(idx.begin() + held, idx.end());
    std::sort(heldout.begin(), heldout.end());
    std::sort(train.begin(), train.end());
}

}  // namespace detail

/// Disjoint camera and light subsets. Training uses train_cameras x train_lights;
/// held-out evaluation uses heldout_cameras x heldout_lights.
[[nodiscard]] inline DataSplit make_split(int cameras, int lights, double heldout_fraction, std::uint64_t seed) {
    if (cameras < 1 || lights < 1) throw InputError("split: dataset is empty");
    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
    DataSplit s;
    detail::split_indices(cameras, heldout_fraction, rng, s.train_cameras, s.heldout_cameras);
    detail::split_indices(lights, heldout_fraction, rng, s.train_lights, s.heldout_lights);
    return s;
}

[[nodiscard]] inline std::vector<LightSH> project_lights(const std::vector<DirectionalLight>& lights, int order) {
    std::vector<LightSH> out;
    out.reserve(lights.size());
    for (const auto& l : lights) out.push_back(project_delta_light(l.direction, l.intensity, order));
    return out;
}

/// Mean SH lighting over the selected lights: the lighting of a light-averaged image.
[[nodiscard]] inline LightSH average_light(const std::vector<DirectionalLight>& lights, const std::vector<int>& subset,
                                           int order) {
    LightSH acc = LightSH::zeros(order);
    if (subset.empty()) return acc;
    for (int l : subset) acc += project_delta_light(lights.at(static_cast<std::size_t>(l)).direction,
                                                    lights.at(static_cast<std::size_t>(l)).intensity, order);
    acc *= 1.0 / static_cast<double>(subset.size());
    return acc;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class Adam {
public:
    Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-15)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

    void step(std::span<double> params, std::span<const double> grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    int t_ = 0;
};

// ---------------------------------------------------------------------------
// Stage 1: geometry initialization
// ---------------------------------------------------------------------------

enum class InitSource { scene_surface, point_cloud_file, random_cube };

struct InitConfig {
    InitSource source = InitSource::scene_surface;
    std::size_t target_count = 10000;
    std::string point_cloud_path;
    int sh_order = 9;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    // Random-cube bounds; defaults to the scene's bounding box when unset.
    std::optional<std::pair<Eigen::Vector3d, Eigen::Vector3d>> cube;
    // Multiplies the nearest-neighbour scale; `normal_flatten` further scales the
    // axis along a known surface normal.
    double scale_factor = 0.6;
    double normal_flatten = 0.2;
    int refine_iterations = 200;
    double lambda = 0.2;
    double lr_opacity = 0.05;
    double lr_scale = 0.005;
    double lr_albedo = 0.01;
    std::uint64_t seed = 0;
};

struct InitPoint {
    Eigen::Vector3d position;
    std::optional<Eigen::Vector3d> normal;
};

/// Whitespace-separated "x y z" or "x y z nx ny nz" per line; '#' starts a comment.
[[nodiscard]] inline std::vector<InitPoint> read_point_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open point cloud '" + path + "'");
    std::vector<InitPoint> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ss(line);
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        if (v.empty()) continue;
        if (v.size() != 3 && v.size() != 6) {
            throw IoError("point cloud '" + path + "' line " + std::to_string(line_no) + ": expected 3 or 6 values");
        }
        InitPoint p{{v[0], v[1], v[2]}, std::nullopt};
        if (v.size() == 6) {
            const Eigen::Vector3d n(v[3], v[4], v[5]);
            if (n.norm() > 1e-12) p.normal = n.normalized();
        }
        out.push_back(p);
    }
    return out;
}

/// Mean distance to the (up to) three nearest neighbours of each point.
[[nodiscard]] inline std::vector<double> mean_neighbor_distance(const std::vector<Eigen::Vector3d>& pts,
                                                                double fallback) {
    const std::size_t n = pts.size();
    std::vector<double> out(n, fallback);
    if (n < 2) return out;
    Eigen::Vector3d lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
    const int res = std::clamp(static_cast<int>(std::cbrt(static_cast<double>(n) / 2.0)), 1, 256);
    const double cell = extent / res + 1e-12;
    auto cell_of = [&](const Eigen::Vector3d& p) {
        Eigen::Vector3i c;
        for (int a = 0; a < 3; ++a) c[a] = std::clamp(static_cast<int>((p[a] - lo[a]) / cell), 0, res - 1);
        return c;
    };
    auto key = [&](const Eigen::Vector3i& c) { return (static_cast<std::size_t>(c.z()) * res + c.y()) * res + c.x(); };
    std::vector<std::vector<std::uint32_t>> grid(static_cast<std::size_t>(res) * res * res);
    for (std::uint32_t i = 0; i < n; ++i) grid[key(cell_of(pts[i]))].push_back(i);

    parallel_for(0, n, [&](std::size_t i) {
        const Eigen::Vector3i c = cell_of(pts[i]);
        std::array<double, 3> best{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                                   std::numeric_limits<double>::infinity()};
        for (int ring = 0; ring < res; ++ring) {
            for (int dz = -ring; dz <= ring; ++dz)
                for (int dy = -ring; dy <= ring; ++dy)
                    for (int dx = -ring; dx <= ring; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                        const Eigen::Vector3i cc = c + Eigen::Vector3i(dx, dy, dz);
                        if ((cc.array() < 0).any() || (cc.array() >= res).any()) continue;
                        for (std::uint32_t j : grid[key(cc)]) {
                            if (j == i) continue;
                            const double d = (pts[j] - pts[i]).norm();
                            if (d < best[2]) {
                                best[2] = d;
                                std::sort(best.begin(), best.end());
                            }
                        }
                    }
            // Points in unvisited cells are at least ring * cell away.
            if (best[2] <= ring * cell) break;
        }
        double sum = 0.0;
        int count = 0;
        for (double b : best) {
            if (std::isfinite(b)) {
                sum += b;
                ++count;
            }
        }
        if (count > 0 && sum > 0.0) out[i] = sum / count;
    }, 64);
    return out;
}

namespace detail {

/// Colour of each Gaussian from views where it is (approximately) front-most,
/// divided by the predicted shading under `light`.
inline void init_albedo_from_views(GaussianModel& model, const std::vector<std::pair<Camera, Image>>& views,
                                   const LightSH& light) {
    const std::size_t n = model.size();
    std::vector<Eigen::Vector3d> sum(n, Eigen::Vector3d::Zero());
    std::vector<int> count(n, 0);
    for (const auto& [cam, img] : views) {
        std::vector<double> zbuf(static_cast<std::size_t>(cam.width) * cam.height,
                                 std::numeric_limits<double>::infinity());
        std::vector<std::optional<std::pair<int, int>>> pix(n);
        std::vector<double> depth(n, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            const Eigen::Vector3d t = cam.to_camera(model.gaussians[k].position);
            if (!(t.z() > cam.near && t.z() < cam.far)) continue;
            const int x = static_cast<int>(std::floor(cam.fx * t.x() / t.z() + cam.cx));
            const int y = static_cast<int>(std::floor(cam.fy * t.y() / t.z() + cam.cy));
            if (x < 0 || y < 0 || x >= cam.width || y >= cam.height) continue;
            pix[k] = {x, y};
            depth[k] = t.z();
            // Splat the point's footprint into the depth buffer.
            const double r_px = std::max(0.5, 2.0 * model.gaussians[k].scale().maxCoeff() * cam.fx / t.z());
            const int r = std::min(8, static_cast<int>(std::ceil(r_px)));
            for (int yy = std::max(0, y - r); yy <= std::min(cam.height - 1, y + r); ++yy)
                for (int xx = std::max(0, x - r); xx <= std::min(cam.width - 1, x + r); ++xx) {
                    double& z = zbuf[static_cast<std::size_t>(yy) * cam.width + xx];
                    z = std::min(z, t.z());
                }
        }
        for (std::size_t k = 0; k < n; ++k) {
            if (!pix[k]) continue;
            const auto [x, y] = *pix[k];
            const double tol = 3.0 * model.gaussians[k].scale().maxCoeff();
            if (depth[k] > zbuf[static_cast<std::size_t>(y) * cam.width + x] + tol) continue;
            const float* px = img.pixel(x, y);
            sum[k] += Eigen::Vector3d(px[0], px[1], px[2]);
            ++count[k];
        }
    }
    for (std::size_t k = 0; k < n; ++k) {
        Gaussian& g = model.gaussians[k];
        Eigen::Vector3d rho = Eigen::Vector3d::Constant(0.5);
        if (count[k] > 0) {
            const Eigen::Vector3d mean = sum[k] / count[k];
            for (int c = 0; c < 3; ++c) {
                const double shading = light.channels[c].coeffs.dot(g.transfer);
                if (shading > 1e-6) rho[c] = std::clamp(mean[c] / shading, 0.02, 0.98);
            }
        }
        g.set_albedo(rho);
    }
}

}  // namespace detail

struct RefineStats {
    double psnr_before = 0.0;
    double psnr_after = 0.0;
};

/// Mean PSNR of the model re-rendered under `light` against the given views.
[[nodiscard]] inline double views_psnr(const GaussianModel& model, const std::vector<std::pair<Camera, Image>>& views,
                                       const LightSH& light) {
    if (views.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& [cam, img] : views) acc += std::min(psnr(render<float>(model, cam, light), img), 100.0);
    return acc / static_cast<double>(views.size());
}

/// Adam on opacity, scale and albedo against light-averaged images, with
/// colours given by the model's transfer under `light`.
inline RefineStats refine_photometric(GaussianModel& model, const std::vector<std::pair<Camera, Image>>& views,
                                      const LightSH& light, const InitConfig& cfg) {
    RefineStats stats;
    if (cfg.refine_iterations <= 0 || views.empty() || model.empty()) return stats;
    const std::size_t n = model.size();
    Adam adam_opacity(n, cfg.lr_opacity), adam_scale(n * 3, cfg.lr_scale), adam_albedo(n * 3, cfg.lr_albedo);
    std::vector<double> p_opacity(n), p_scale(n * 3), p_albedo(n * 3);
    std::vector<double> g_opacity(n), g_scale(n * 3), g_albedo(n * 3);
    std::mt19937_64 rng(cfg.seed + 17);

    std::vector<Eigen::Vector3d> irradiance(n);  // <l^c, T> per channel
    for (std::size_t k = 0; k < n; ++k)
        for (int c = 0; c < 3; ++c) irradiance[k][c] = light.channels[c].coeffs.dot(model.gaussians[k].transfer);

    stats.psnr_before = views_psnr(model, views, light);
    for (int it = 0; it < cfg.refine_iterations; ++it) {
        const auto& [cam, target] = views[static_cast<std::size_t>(detail::uniform01(rng) * views.size()) % views.size()];
        std::vector<Eigen::Vector3d> colors(n);
        for (std::size_t k = 0; k < n; ++k) colors[k] = model.gaussians[k].albedo().cwiseProduct(irradiance[k]).cwiseMax(0.0);
        const Frame<double> frame = prepare_frame<double>(model, cam);
        const BasicImage<double> rendered = composite(frame, std::span<const Eigen::Vector3d>(colors), model.background);
        BasicImage<double> d_image;
        loss_terms(rendered, target, cfg.lambda, &d_image);
        const RasterGradients grads = composite_backward(model, cam, frame, colors, d_image);
        for (std::size_t k = 0; k < n; ++k) {
            const Gaussian& g = model.gaussians[k];
            p_opacity[k] = g.opacity_logit;
            g_opacity[k] = grads.d_opacity_logit[k];
            const Eigen::Vector3d rho = g.albedo();
            for (int a = 0; a < 3; ++a) {
                p_scale[k * 3 + a] = g.log_scale[a];
                g_scale[k * 3 + a] = grads.d_log_scale[k][a];
                p_albedo[k * 3 + a] = g.albedo_logit[a];
                const double pre = rho[a] * irradiance[k][a];
                g_albedo[k * 3 + a] = pre > 0.0 ? grads.d_color[k][a] * irradiance[k][a] * rho[a] * (1.0 - rho[a]) : 0.0;
            }
        }
        adam_opacity.step(p_opacity, g_opacity);
        adam_scale.step(p_scale, g_scale);
        adam_albedo.step(p_albedo, g_albedo);
        for (std::size_t k = 0; k < n; ++k) {
            Gaussian& g = model.gaussians[k];
            g.opacity_logit = p_opacity[k];
            for (int a = 0; a < 3; ++a) {
                g.log_scale[a] = p_scale[k * 3 + a];
                g.albedo_logit[a] = p_albedo[k * 3 + a];
            }
            g.normalize_rotation();
        }
    }
    stats.psnr_after = views_psnr(model, views, light);
    return stats;
}

/// Places Gaussians and initializes their attributes from light-averaged views.
/// `uniform_light` is the SH lighting those views were captured under.
[[nodiscard]] inline GaussianModel init_geometry(const std::vector<std::pair<Camera, Image>>& uniform_views,
                                                 const LightSH& uniform_light, const InitConfig& cfg,
                                                 const SceneSpec* scene = nullptr,
                                                 RefineStats* refine_stats = nullptr) {
    check_sh_order(cfg.sh_order);
    if (uniform_light.order() != cfg.sh_order) throw InputError("init_geometry: light order does not match sh_order");
    if (cfg.refine_iterations > 0 && uniform_views.empty()) {
        throw InputError("init_geometry: photometric refinement needs at least one view");
    }
    if (!(cfg.scale_factor > 0.0) || !(cfg.normal_flatten > 0.0)) {
        throw InputError("init_geometry: scale_factor and normal_flatten must be positive");
    }

    std::vector<InitPoint> points;
    double fallback_scale = 0.01;
    switch (cfg.source) {
        case InitSource::scene_surface: {
            if (!scene) throw InputError("init_geometry: scene_surface source requires a scene");
            if (cfg.target_count == 0) throw InputError("init_geometry: target_count must be positive");
            for (const auto& s : sample_surface(*scene, cfg.target_count, cfg.seed)) points.push_back({s.position, s.normal});
            fallback_scale = 0.01 * scene->bounds().second;
            break;
        }
        case InitSource::point_cloud_file:
            points = read_point_cloud(cfg.point_cloud_path);
            if (points.empty()) throw IoError("point cloud '" + cfg.point_cloud_path + "' has no points");
            break;
        case InitSource::random_cube: {
            std::pair<Eigen::Vector3d, Eigen::Vector3d> box;
            if (cfg.cube) {
                box = *cfg.cube;
            } else if (scene) {
                const auto [c, r] = scene->bounds();
                box = {c - Eigen::Vector3d::Constant(r / std::sqrt(3.0)), c + Eigen::Vector3d::Constant(r / std::sqrt(3.0))};
            } else {
                throw InputError("init_geometry: random_cube source needs bounds or a scene");
            }
            std::mt19937_64 rng(cfg.seed);
            for (std::size_t i = 0; i < cfg.target_count; ++i) {
                Eigen::Vector3d p;
                for (int a = 0; a < 3; ++a) p[a] = box.first[a] + (box.second[a] - box.first[a]) * detail::uniform01(rng);
                points.push_back({p, std::nullopt});
            }
            fallback_scale = 0.01 * (box.second - box.first).norm();
            break;
        }
    }

    std::vector<Eigen::Vector3d> positions;
    positions.reserve(points.size());
    for (const auto& p : points) positions.push_back(p.position);
    const std::vector<double> scales = mean_neighbor_distance(positions, fallback_scale);

    GaussianModel model;
    model.sh_order = cfg.sh_order;
    model.background = cfg.background;
    const int n = sh_count(cfg.sh_order);
    const ShVector lobe = clamped_cosine_coeffs(cfg.sh_order);
    model.gaussians.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        Eigen::VectorXd transfer = Eigen::VectorXd::Zero(n);
        // Local z follows the normal so refinement can flatten along it.
        Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
        Eigen::Vector3d scale = Eigen::Vector3d::Constant(scales[i] * cfg.scale_factor);
        if (points[i].normal) {
            transfer = rotate_zonal(lobe, *points[i].normal).coeffs;
            rotation = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), *points[i].normal);
            scale.z() *= cfg.normal_flatten;
        } else {
            transfer[0] = kUnoccludedDc;
        }
        model.gaussians.push_back(Gaussian::make(points[i].position, rotation, scale, 0.5,
                                                 Eigen::Vector3d::Constant(0.5), std::move(transfer)));
    }
    if (!uniform_views.empty()) detail::init_albedo_from_views(model, uniform_views, uniform_light);
    const RefineStats stats = refine_photometric(model, uniform_views, uniform_light, cfg);
    if (refine_stats) *refine_stats = stats;
    return model;
}

// ---------------------------------------------------------------------------
// Stage 2: transfer fitting
// ---------------------------------------------------------------------------

enum class Backend { gradient, least_squares };

struct FitConfig {
    int sh_order = 9;
    double lambda = 0.2;
    int iterations = 2000;
    double lr_transfer = 1e-2;
    double lr_albedo = 5e-3;
    double lr_opacity = 0.05;
    double lr_scale = 0.005;
    Backend backend = Backend::least_squares;
    int batch_cameras = 2;
    int batch_lights = 4;
    std::uint64_t seed = 0;
    double heldout_fraction = 0.1;
    bool refine_geometry = false;  // unfreezes opacity and scale (gradient backend only)
    double tikhonov = 0.1;  // relative to the mean Gram diagonal
    double time_budget_seconds = 0.0;  // gradient backend: stop early once exceeded (0 = off)
    int eval_train_pairs = 32;
};

struct FitReport {
    std::vector<double> loss_curve;
    std::vector<double> psnr_curve;
    double train_psnr = 0.0;
    double train_ssim = 0.0;
    double heldout_psnr = std::numeric_limits<double>::quiet_NaN();
    double heldout_ssim = std::numeric_limits<double>::quiet_NaN();
    std::size_t heldout_pairs = 0;
    double duration_seconds = 0.0;
    std::size_t gaussian_count = 0;
    std::size_t gauge_flagged = 0;
    FitConfig config;
    DataSplit split;
};

struct FitResult {
    GaussianModel model;
    FitReport report;
};

struct EvalResult {
    double psnr = std::numeric_limits<double>::quiet_NaN();
    double ssim = std::numeric_limits<double>::quiet_NaN();
    double loss = std::numeric_limits<double>::quiet_NaN();
    std::size_t pairs = 0;
};

/// Mean per-image PSNR / SSIM / loss over cameras x lights (values clipped to [0, 1]
/// for PSNR and SSIM). PSNR of exact matches is capped at 100 dB for averaging.
[[nodiscard]] inline EvalResult evaluate(const GaussianModel& model, const OlatDataset& ds,
                                         const std::vector<int>& cameras, const std::vector<int>& lights,
                                         double lambda = 0.2) {
    EvalResult r;
    if (cameras.empty() || lights.empty()) return r;
    const auto light_sh = project_lights(ds.lights, model.sh_order);
    double p = 0.0, s = 0.0, l = 0.0;
    for (int c : cameras) {
        const Frame<float> frame = prepare_frame<float>(model, ds.cameras.at(static_cast<std::size_t>(c)));
        for (int li : lights) {
            const auto colors = shade_all(model, light_sh.at(static_cast<std::size_t>(li)));
            const Image img = composite(frame, std::span<const Eigen::Vector3d>(colors), model.background);
            const Image& target = ds.image(static_cast<std::size_t>(c), static_cast<std::size_t>(li));
            p += std::min(psnr(img, target), 100.0);
            s += ssim(img, target);
            l += loss(img, target, lambda);
            ++r.pairs;
        }
    }
    r.psnr = p / r.pairs;
    r.ssim = s / r.pairs;
    r.loss = l / r.pairs;
    return r;
}

/// Fixes the albedo/transfer scale gauge: each transfer is rescaled so its DC
/// entry is sqrt(pi)/2 with the factor moved into the albedo. Albedo outside
/// the representable range is clamped, pushing the excess back into the
/// transfer. Returns the number of Gaussians whose gauge could not be fixed.
inline std::size_t normalize_gauge(GaussianModel& model) {
    std::size_t flagged = 0;
    for (Gaussian& g : model.gaussians) {
        const double dc = g.transfer[0];
        Eigen::Vector3d rho = g.albedo();
        if (!(dc > 0.0)) {
            ++flagged;
            continue;
        }
        const double a = dc / kUnoccludedDc;
        g.transfer /= a;
        rho *= a;
        const double peak = rho.maxCoeff();
        if (peak > kAlbedoMax) {
            g.transfer *= peak / kAlbedoMax;
            rho *= kAlbedoMax / peak;
            ++flagged;
        }
        g.set_albedo(rho.cwiseMax(kAlbedoMin).cwiseMin(kAlbedoMax));
    }
    return flagged;
}

namespace detail {

/// Loss and dL/d(transfer, albedo_logit) for one (camera, light) pair with frozen weights.
template <class Real>
double transfer_loss_gradient(const GaussianModel& model, const PixelWeights<Real>& weights, const Image& target,
                              const LightSH& light, double lambda, std::vector<double>& d_transfer,
                              std::vector<double>& d_albedo, double scale, double* psnr_out) {
    const std::size_t k_count = model.size();
    const int n = sh_count(model.sh_order);
    std::vector<Eigen::Vector3d> irr(k_count), colors(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
        const Gaussian& g = model.gaussians[k];
        for (int c = 0; c < 3; ++c) irr[k][c] = light.channels[c].coeffs.dot(g.transfer);
        colors[k] = g.albedo().cwiseProduct(irr[k]).cwiseMax(0.0);
    }
    const BasicImage<double> rendered =
        composite_weights<double>(weights, std::span<const Eigen::Vector3d>(colors), model.background);
    BasicImage<double> d_image;
    const LossTerms terms = loss_terms(rendered, target, lambda, &d_image);
    if (psnr_out) *psnr_out = std::min(psnr(rendered, target), 100.0);
    std::vector<Eigen::Vector3d> d_color(k_count, Eigen::Vector3d::Zero());
    accumulate_color_gradient(weights, d_image, std::span<Eigen::Vector3d>(d_color));
    for (std::size_t k = 0; k < k_count; ++k) {
        const Gaussian& g = model.gaussians[k];
        const Eigen::Vector3d rho = g.albedo();
        for (int c = 0; c < 3; ++c) {
            if (!(rho[c] * irr[k][c] > 0.0) || d_color[k][c] == 0.0) continue;
            const double gc = scale * d_color[k][c];
            Eigen::Map<Eigen::VectorXd>(d_transfer.data() + k * n, n) += gc * rho[c] * light.channels[c].coeffs;
            d_albedo[k * 3 + c] += gc * irr[k][c] * rho[c] * (1.0 - rho[c]);
        }
    }
    return terms.total;
}

inline void fit_gradient(GaussianModel& model, const OlatDataset& ds, const FitConfig& cfg, const DataSplit& split,
                         const std::vector<LightSH>& light_sh, FitReport& report) {
    const std::size_t k_count = model.size();
    const int n = sh_count(model.sh_order);
    const auto start = std::chrono::steady_clock::now();

    std::vector<PixelWeights<float>> weights;
    if (!cfg.refine_geometry) {
        weights.resize(split.train_cameras.size());
        parallel_for(0, weights.size(), [&](std::size_t i) {
            weights[i] = render_weights<float>(model, ds.cameras[static_cast<std::size_t>(split.train_cameras[i])]);
        });
    }

    Adam adam_t(k_count * n, cfg.lr_transfer), adam_a(k_count * 3, cfg.lr_albedo);
    Adam adam_o(k_count, cfg.lr_opacity), adam_s(k_count * 3, cfg.lr_scale);
    std::vector<double> p_t(k_count * n), p_a(k_count * 3), p_o(k_count), p_s(k_count * 3);
    std::vector<double> g_t(k_count * n), g_a(k_count * 3), g_o(k_count), g_s(k_count * 3);
    std::mt19937_64 rng(cfg.seed + 101);
    const int bc = std::max(1, std::min<int>(cfg.batch_cameras, static_cast<int>(split.train_cameras.size())));
    const int bl = std::max(1, std::min<int>(cfg.batch_lights, static_cast<int>(split.train_lights.size())));
    const double scale = 1.0 / (bc * bl);

    for (int it = 0; it < cfg.iterations; ++it) {
        std::fill(g_t.begin(), g_t.end(), 0.0);
        std::fill(g_a.begin(), g_a.end(), 0.0);
        std::fill(g_o.begin(), g_o.end(), 0.0);
        std::fill(g_s.begin(), g_s.end(), 0.0);
        double batch_loss = 0.0, batch_psnr = 0.0;
        for (int b = 0; b < bc; ++b) {
            const std::size_t ci = static_cast<std::size_t>(uniform01(rng) * split.train_cameras.size()) %
                                   split.train_cameras.size();
            const std::size_t cam = static_cast<std::size_t>(split.train_cameras[ci]);
            std::optional<Frame<double>> frame;
            if (cfg.refine_geometry) frame = prepare_frame<double>(model, ds.cameras[cam]);
            for (int l = 0; l < bl; ++l) {
                const std::size_t li = static_cast<std::size_t>(uniform01(rng) * split.train_lights.size()) %
                                       split.train_lights.size();
                const std::size_t light = static_cast<std::size_t>(split.train_lights[li]);
                const Image& target = ds.image(cam, light);
                double pair_psnr = 0.0;
                if (!cfg.refine_geometry) {
                    batch_loss += transfer_loss_gradient(model, weights[ci], target, light_sh[light], cfg.lambda, g_t,
                                                         g_a, scale, &pair_psnr);
                } else {
                    const LightSH& lsh = light_sh[light];
                    std::vector<Eigen::Vector3d> irr(k_count), colors(k_count);
                    for (std::size_t k = 0; k < k_count; ++k) {
                        for (int c = 0; c < 3; ++c) irr[k][c] = lsh.channels[c].coeffs.dot(model.gaussians[k].transfer);
                        colors[k] = model.gaussians[k].albedo().cwiseProduct(irr[k]).cwiseMax(0.0);
                    }
                    const BasicImage<double> rendered =
                        composite(*frame, std::span<const Eigen::Vector3d>(colors), model.background);
                    BasicImage<double> d_image;
                    batch_loss += loss_terms(rendered, target, cfg.lambda, &d_image).total;
                    pair_psnr = std::min(psnr(rendered, target), 100.0);
                    const RasterGradients rg = composite_backward(model, ds.cameras[cam], *frame, colors, d_image);
                    for (std::size_t k = 0; k < k_count; ++k) {
                        const Eigen::Vector3d rho = model.gaussians[k].albedo();
                        g_o[k] += scale * rg.d_opacity_logit[k];
                        for (int c = 0; c < 3; ++c) {
                            g_s[k * 3 + c] += scale * rg.d_log_scale[k][c];
                            if (!(rho[c] * irr[k][c] > 0.0)) continue;
                            const double gc = scale * rg.d_color[k][c];
                            Eigen::Map<Eigen::VectorXd>(g_t.data() + k * n, n) += gc * rho[c] * lsh.channels[c].coeffs;
                            g_a[k * 3 + c] += gc * irr[k][c] * rho[c] * (1.0 - rho[c]);
                        }
                    }
                }
                batch_psnr += pair_psnr;
            }
        }
        report.loss_curve.push_back(batch_loss * scale);
        report.psnr_curve.push_back(batch_psnr * scale);

        for (std::size_t k = 0; k < k_count; ++k) {
            const Gaussian& g = model.gaussians[k];
            std::copy_n(g.transfer.data(), n, p_t.data() + k * n);
            for (int c = 0; c < 3; ++c) {
                p_a[k * 3 + c] = g.albedo_logit[c];
                p_s[k * 3 + c] = g.log_scale[c];
            }
            p_o[k] = g.opacity_logit;
        }
        adam_t.step(p_t, g_t);
        adam_a.step(p_a, g_a);
        if (cfg.refine_geometry) {
            adam_o.step(p_o, g_o);
            adam_s.step(p_s, g_s);
        }
        for (std::size_t k = 0; k < k_count; ++k) {
            Gaussian& g = model.gaussians[k];
            std::copy_n(p_t.data() + k * n, n, g.transfer.data());
            for (int c = 0; c < 3; ++c) {
                g.albedo_logit[c] = p_a[k * 3 + c];
                g.log_scale[c] = p_s[k * 3 + c];
            }
            g.opacity_logit = p_o[k];
            g.normalize_rotation();
        }
        if (cfg.time_budget_seconds > 0.0) {
            const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (elapsed > cfg.time_budget_seconds) break;
        }
    }
}

/// Above this Gaussian count the Gram matrix is factored sparsely instead of densely.
inline constexpr std::size_t kDenseSolveLimit = 12000;

/// Solves min sum_pixels (y - sum_k w_k <l, P_k>)^2 per channel for the products
/// P_k = rho_k T_k, then factors them into albedo and transfer.

inline void fit_least_squares(GaussianModel& model, const OlatDataset& ds, const FitConfig& cfg,
                              const DataSplit& split, FitReport& report) {
    using SpMat = Eigen::SparseMatrix<double>;
    const std::size_t k_count = model.size();
    const int order = model.sh_order;
    const int n = sh_count(order);
    const std::size_t nl = split.train_lights.size();

    // Light design matrices per channel: rows are intensity_c * Y(direction).
    std::array<Eigen::MatrixXd, 3> light_mat;
    for (auto& m : light_mat) m.resize(static_cast<Eigen::Index>(nl), n);
    for (std::size_t i = 0; i < nl; ++i) {
        const DirectionalLight& l = ds.lights[static_cast<std::size_t>(split.train_lights[i])];
        const ShVector y = sh_basis(l.direction, order);
        for (int c = 0; c < 3; ++c) light_mat[c].row(static_cast<Eigen::Index>(i)) = l.intensity[c] * y.coeffs.transpose();
    }
    if (light_mat[0].isZero() && light_mat[1].isZero() && light_mat[2].isZero()) return;  // nothing to fit

    SpMat gram(static_cast<Eigen::Index>(k_count), static_cast<Eigen::Index>(k_count));
    std::array<Eigen::MatrixXd, 3> rhs;
    for (auto& r : rhs) r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k_count), n);

    for (int cam_index : split.train_cameras) {
        const std::size_t cam = static_cast<std::size_t>(cam_index);
        const PixelWeights<float> pw = render_weights<float>(model, ds.cameras[cam]);
        const std::size_t pixels = pw.pixel_count();
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(pw.weight.size());
        for (std::size_t p = 0; p < pixels; ++p)
            for (std::size_t e = pw.begin(p); e < pw.end(p); ++e)
                trip.emplace_back(static_cast<int>(p), static_cast<int>(pw.gaussian[e]), pw.weight[e]);
        SpMat a(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(k_count));
        a.setFromTriplets(trip.begin(), trip.end());
        gram += SpMat(a.transpose() * a);

        Eigen::VectorXd residual_bg(static_cast<Eigen::Index>(pixels));
        for (std::size_t p = 0; p < pixels; ++p) residual_bg[static_cast<Eigen::Index>(p)] = 1.0 - pw.coverage(p);
        for (int c = 0; c < 3; ++c) {
            Eigen::MatrixXd y(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(nl));
            for (std::size_t i = 0; i < nl; ++i) {
                const auto v = ds.image(cam, static_cast<std::size_t>(split.train_lights[i])).values();
                for (std::size_t p = 0; p < pixels; ++p)
                    y(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) =
                        v[p * 3 + static_cast<std::size_t>(c)] - model.background[c] * residual_bg[static_cast<Eigen::Index>(p)];
            }
            const Eigen::MatrixXd z = y * light_mat[c];
            rhs[c] += a.transpose() * z;
        }
    }

    double diag_mean = 0.0;
    for (Eigen::Index k = 0; k < gram.rows(); ++k) diag_mean += gram.coeff(k, k);
    diag_mean = std::max(diag_mean / std::max<Eigen::Index>(1, gram.rows()), 1e-300);
    const double tau = cfg.tikhonov * diag_mean;

    // Ridge (L^T L + mu I) (x) (W + tau I) on the step from the initial products
    // X0_c = rho_c T: one Gaussian-side factorization serves every channel and
    // light mode. dX_c = (W + tau I)^-1 (RHS_c - W X0_c G_c) (G_c + mu_c I)^-1.
    std::array<Eigen::MatrixXd, 3> light_gram, prior;
    for (int c = 0; c < 3; ++c) {
        light_gram[c] = light_mat[c].transpose() * light_mat[c];
        prior[c].resize(static_cast<Eigen::Index>(k_count), n);
        for (std::size_t k = 0; k < k_count; ++k) {
            const Gaussian& g = model.gaussians[k];
            prior[c].row(static_cast<Eigen::Index>(k)) = g.albedo()[c] * g.transfer.transpose();
        }
    }
    Eigen::MatrixXd stacked(static_cast<Eigen::Index>(k_count), 3 * n);
    for (int c = 0; c < 3; ++c) {
        stacked.middleCols(static_cast<Eigen::Index>(c) * n, n) = rhs[c] - gram * (prior[c] * light_gram[c]);
    }
    Eigen::MatrixXd gauss_solved;
    if (k_count <= kDenseSolveLimit) {
        Eigen::MatrixXd dense = Eigen::MatrixXd(gram);
        dense.diagonal().array() += tau;
        const Eigen::LLT<Eigen::MatrixXd> llt(dense);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("least squares: Gram factorization failed (" + std::to_string(k_count) +
                                 " Gaussians, ridge " + std::to_string(tau) + ")");
        }
        gauss_solved = llt.solve(stacked);
    } else {
        SpMat identity(gram.rows(), gram.cols());
        identity.setIdentity();
        const Eigen::SimplicialLDLT<SpMat> ldlt(SpMat(gram + tau * identity));
        if (ldlt.info() != Eigen::Success) {
            throw NumericalError("least squares: sparse Gram factorization failed (" + std::to_string(k_count) +
                                 " Gaussians, ridge " + std::to_string(tau) + ")");
        }
        gauss_solved = ldlt.solve(stacked);
    }
    if (!gauss_solved.allFinite()) throw NumericalError("least squares: non-finite Gaussian-side solution");

    std::array<Eigen::MatrixXd, 3> products;
    for (int c = 0; c < 3; ++c) {
        const double mu = cfg.tikhonov * std::max(light_gram[c].diagonal().maxCoeff(), 1e-300);
        Eigen::MatrixXd reg = light_gram[c];
        reg.diagonal().array() += mu;
        const Eigen::LLT<Eigen::MatrixXd> llt(reg);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("least squares: light Gram factorization failed for channel " + std::to_string(c));
        }
        // X (reg) = B  <=>  reg X^T = B^T since reg is symmetric.
        products[c] =
            prior[c] + llt.solve(gauss_solved.middleCols(static_cast<Eigen::Index>(c) * n, n).transpose()).transpose();
    }

    // Factor P^c = rho_c T with T sharing the channel-summed direction.
    for (std::size_t k = 0; k < k_count; ++k) {
        Gaussian& g = model.gaussians[k];
        const auto kk = static_cast<Eigen::Index>(k);
        const Eigen::VectorXd sum = products[0].row(kk) + products[1].row(kk) + products[2].row(kk);
        if (sum[0] > 0.0) {
            const Eigen::VectorXd t = sum * (kUnoccludedDc / sum[0]);
            Eigen::Vector3d rho;
            for (int c = 0; c < 3; ++c) rho[c] = products[c].row(kk).dot(t) / t.squaredNorm();
            const double peak = rho.maxCoeff();
            g.transfer = t;
            if (peak > kAlbedoMax) {
                g.transfer *= peak / kAlbedoMax;
                rho *= kAlbedoMax / peak;
            }
            g.set_albedo(rho.cwiseMax(kAlbedoMin).cwiseMin(kAlbedoMax));
        } else {
            const Eigen::Vector3d rho = g.albedo();
            Eigen::VectorXd t = Eigen::VectorXd::Zero(n);
            for (int c = 0; c < 3; ++c) t += rho[c] * products[c].row(kk).transpose();
            g.transfer = t / rho.squaredNorm();
        }
    }
    (void)report;
}

}  // namespace detail

/// Stage 2. Fits transfer and albedo of `model` to the training pairs of `data`.
[[nodiscard]] inline FitResult fit_transfer(GaussianModel model, const OlatDataset& data, const FitConfig& cfg,
                                            const DataSplit& split) {
    const auto start = std::chrono::steady_clock::now();
    if (cfg.iterations < 1) throw InputError("fit: iterations must be >= 1");
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw InputError("fit: lambda must lie in [0, 1]");
    if (model.empty()) throw InputError("fit: model is empty");
    if (model.sh_order != cfg.sh_order) throw InputError("fit: model SH order does not match the configuration");
    if (split.train_cameras.empty() || split.train_lights.empty()) throw InputError("fit: no training pairs");
    model.validate();

    FitResult result;
    FitReport& report = result.report;
    report.config = cfg;
    report.split = split;
    const auto light_sh = project_lights(data.lights, model.sh_order);

    bool any_light = false;
    for (int l : split.train_lights) any_light |= data.lights[static_cast<std::size_t>(l)].intensity.maxCoeff() > 0.0;

    if (cfg.backend == Backend::gradient) {
        detail::fit_gradient(model, data, cfg, split, light_sh, report);
    } else {
        detail::fit_least_squares(model, data, cfg, split, report);
    }
    if (any_light) report.gauge_flagged = normalize_gauge(model);

    // Training metrics on an evenly spaced subset of training pairs.
    {
        std::vector<std::pair<int, int>> pairs;
        for (int c : split.train_cameras)
            for (int l : split.train_lights) pairs.emplace_back(c, l);
        const std::size_t want = std::min<std::size_t>(pairs.size(), static_cast<std::size_t>(std::max(1, cfg.eval_train_pairs)));
        double p = 0.0, s = 0.0, lsum = 0.0;
        for (std::size_t i = 0; i < want; ++i) {
            const auto [c, l] = pairs[i * pairs.size() / want];
            const EvalResult e = evaluate(model, data, {c}, {l}, cfg.lambda);
            p += e.psnr;
            s += e.ssim;
            lsum += e.loss;
        }
        report.train_psnr = p / want;
        report.train_ssim = s / want;
        if (cfg.backend == Backend::least_squares) {
            report.loss_curve.push_back(lsum / want);
            report.psnr_curve.push_back(report.train_psnr);
        }
    }
    const EvalResult held = evaluate(model, data, split.heldout_cameras, split.heldout_lights, cfg.lambda);
    report.heldout_psnr = held.psnr;
    report.heldout_ssim = held.ssim;
    report.heldout_pairs = held.pairs;
    report.gaussian_count = model.size();
    report.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.model = std::move(model);
    return result;
}

}  // namespace prtg
