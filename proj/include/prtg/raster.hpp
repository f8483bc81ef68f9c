// SPDX-License-Identifier: Apache-2.0
//
// Tile-based software splatting: EWA projection of 3D Gaussians, a global
// front-to-back depth sort, 16x16 tile binning and front-to-back alpha
// compositing. The same per-pixel traversal backs the image renderer, the
// light-independent compositing weights and the backward pass.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "prtg/camera.hpp"
#include "prtg/gaussian.hpp"
#include "prtg/image.hpp"
#include "prtg/parallel.hpp"
#include "prtg/sh.hpp"

namespace prtg {

inline constexpr int kTileSize = 16;
inline constexpr double kCovarianceDilation = 0.3;  // pixel^2 added to the 2D covariance diagonal
inline constexpr double kAlphaClip = 0.99;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kTransmittanceCutoff = 1e-4;
// sqrt of the 99% quantile of a 2-dof chi-square: the 99%-mass ellipse.
inline constexpr double kMassRadius = 3.0348542587702925;

template <class Real>
struct Splat2D {
    std::uint32_t gaussian = 0;
    Real mean_x = 0, mean_y = 0;
    Real cov_xx = 0, cov_xy = 0, cov_yy = 0;
    Real conic_xx = 0, conic_xy = 0, conic_yy = 0;  // inverse of cov
    Real depth = 0;
    Real alpha_peak = 0;
    // Exponents below this give alpha < kMinAlpha; lowered by a margin so the
    // test only skips pixels the exact check would also reject.
    Real power_floor = 0;
    // Pixel bounding box of the 99%-mass ellipse.
    Real extent_x = 0, extent_y = 0;
};

/// Jacobian-related quantities kept for the backward pass.
struct ProjectionDetail {
    Eigen::Matrix<double, 2, 3> jw;  // J * W
    Eigen::Matrix2d cov2d;           // dilated
    Eigen::Matrix2d conic;
    Eigen::Vector3d camera_space;
};

/// Projects one Gaussian. Returns nullopt when culled: depth outside (near, far)
/// or the 99%-mass ellipse entirely outside the image.
template <class Real = double>
[[nodiscard]] std::optional<Splat2D<Real>> project_gaussian(const Gaussian& g, const Camera& cam,
                                                            ProjectionDetail* detail = nullptr) {
    const Eigen::Vector3d t = cam.to_camera(g.position);
    const double z = t.z();
    if (!(z > cam.near && z < cam.far)) return std::nullopt;

    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / z, 0.0, -cam.fx * t.x() / (z * z),
           0.0, cam.fy / z, -cam.fy * t.y() / (z * z);
    const Eigen::Matrix<double, 2, 3> jw = jac * cam.rotation;
    Eigen::Matrix2d cov = jw * covariance3d(g) * jw.transpose();
    cov(0, 0) += kCovarianceDilation;
    cov(1, 1) += kCovarianceDilation;
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    const double det = cov.determinant();
    if (!(det > 0.0)) return std::nullopt;

    const double mx = cam.fx * t.x() / z + cam.cx;
    const double my = cam.fy * t.y() / z + cam.cy;
    const double ex = kMassRadius * std::sqrt(cov(0, 0));
    const double ey = kMassRadius * std::sqrt(cov(1, 1));
    if (mx + ex < 0.0 || mx - ex > cam.width || my + ey < 0.0 || my - ey > cam.height) return std::nullopt;

    const Eigen::Matrix2d conic = cov.inverse();
    Splat2D<Real> s;
    s.mean_x = static_cast<Real>(mx);
    s.mean_y = static_cast<Real>(my);
    s.cov_xx = static_cast<Real>(cov(0, 0));
    s.cov_xy = static_cast<Real>(cov(0, 1));
    s.cov_yy = static_cast<Real>(cov(1, 1));
    s.conic_xx = static_cast<Real>(conic(0, 0));
    s.conic_xy = static_cast<Real>(conic(0, 1));
    s.conic_yy = static_cast<Real>(conic(1, 1));
    s.depth = static_cast<Real>(z);
    s.alpha_peak = static_cast<Real>(g.opacity());
    s.power_floor = s.alpha_peak > Real(kMinAlpha)
                        ? static_cast<Real>(std::log(kMinAlpha / static_cast<double>(s.alpha_peak)) - 1e-3)
                        : Real(1);
    s.extent_x = static_cast<Real>(ex);
    s.extent_y = static_cast<Real>(ey);
    if (detail) *detail = {jw, cov, conic, t};
    return s;
}

/// A camera's visible splats in front-to-back order plus the tile bins.
template <class Real>
struct Frame {
    int width = 0;
    int height = 0;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<Splat2D<Real>> splats;
    std::vector<std::size_t> tile_offsets;
    std::vector<std::uint32_t> tile_entries;

    [[nodiscard]] std::size_t tile_count() const noexcept {
        return static_cast<std::size_t>(tiles_x) * static_cast<std::size_t>(tiles_y);
    }
    [[nodiscard]] std::span<const std::uint32_t> tile(std::size_t t) const noexcept {
        return {tile_entries.data() + tile_offsets[t], tile_offsets[t + 1] - tile_offsets[t]};
    }
};

template <class Real = float>
[[nodiscard]] Frame<Real> prepare_frame(const GaussianModel& model, const Camera& cam) {
    cam.validate();
    Frame<Real> f;
    f.width = cam.width;
    f.height = cam.height;
    f.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    f.tiles_y = (cam.height + kTileSize - 1) / kTileSize;

    std::vector<std::optional<Splat2D<Real>>> projected(model.size());
    parallel_for(
        0, model.size(),
        [&](std::size_t k) {
            projected[k] = project_gaussian<Real>(model.gaussians[k], cam);
            if (projected[k]) projected[k]->gaussian = static_cast<std::uint32_t>(k);
        },
        1024);
    // Sort on the full-precision depth so reduced-precision splats keep a
    // permutation-independent order.
    std::vector<std::pair<double, std::uint32_t>> order;
    order.reserve(model.size());
    for (std::uint32_t k = 0; k < projected.size(); ++k) {
        if (projected[k]) order.emplace_back(cam.to_camera(model.gaussians[k].position).z(), k);
    }
    std::sort(order.begin(), order.end());
    f.splats.reserve(order.size());
    for (const auto& [depth, k] : order) f.splats.push_back(*projected[k]);

    auto tile_range = [&](const Splat2D<Real>& s) {
        const int x0 = std::max(0, static_cast<int>(std::floor((s.mean_x - s.extent_x) / kTileSize)));
        const int x1 = std::min(f.tiles_x - 1, static_cast<int>(std::floor((s.mean_x + s.extent_x) / kTileSize)));
        const int y0 = std::max(0, static_cast<int>(std::floor((s.mean_y - s.extent_y) / kTileSize)));
        const int y1 = std::min(f.tiles_y - 1, static_cast<int>(std::floor((s.mean_y + s.extent_y) / kTileSize)));
        return std::array<int, 4>{x0, x1, y0, y1};
    };

    std::vector<std::size_t> counts(f.tile_count() + 1, 0);
    for (const auto& s : f.splats) {
        const auto [x0, x1, y0, y1] = tile_range(s);
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx) ++counts[static_cast<std::size_t>(ty) * f.tiles_x + tx];
    }
    f.tile_offsets.assign(f.tile_count() + 1, 0);
    for (std::size_t t = 0; t < f.tile_count(); ++t) f.tile_offsets[t + 1] = f.tile_offsets[t] + counts[t];
    f.tile_entries.resize(f.tile_offsets.back());
    std::vector<std::size_t> cursor(f.tile_offsets.begin(), f.tile_offsets.end() - 1);
    for (std::uint32_t i = 0; i < f.splats.size(); ++i) {
        const auto [x0, x1, y0, y1] = tile_range(f.splats[i]);
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx) f.tile_entries[cursor[static_cast<std::size_t>(ty) * f.tiles_x + tx]++] = i;
    }
    return f;
}

/// Front-to-back traversal of one pixel. Calls visit(list_position, splat_index,
/// alpha, transmittance_before) for every contributing splat; its compositing
/// weight is alpha * transmittance_before.
/// Returns the residual transmittance.
template <class Real, class Visit>
Real traverse_pixel(const Frame<Real>& f, std::span<const std::uint32_t> list, Real px, Real py, Visit&& visit) {
    Real transmittance = 1;
    for (std::size_t i = 0; i < list.size(); ++i) {
        const Splat2D<Real>& s = f.splats[list[i]];
        const Real dx = px - s.mean_x;
        const Real dy = py - s.mean_y;
        const Real power = Real(-0.5) * (s.conic_xx * dx * dx + s.conic_yy * dy * dy) - s.conic_xy * dx * dy;
        if (power > Real(0) || power < s.power_floor) continue;
        const Real alpha = std::min(Real(kAlphaClip), s.alpha_peak * std::exp(power));
        if (alpha < Real(kMinAlpha)) continue;
        visit(i, list[i], alpha, transmittance);
        transmittance *= Real(1) - alpha;
        if (transmittance < Real(kTransmittanceCutoff)) break;
    }
    return transmittance;
}

template <class Body>
void for_each_tile_pixel(int tx, int ty, int width, int height, Body&& body) {
    const int x_end = std::min(width, (tx + 1) * kTileSize);
    const int y_end = std::min(height, (ty + 1) * kTileSize);
    for (int y = ty * kTileSize; y < y_end; ++y)
        for (int x = tx * kTileSize; x < x_end; ++x) body(x, y);
}

/// Region where a splat can reach alpha >= kMinAlpha, solved from
/// 0.5 a dx^2 + b dx dy + 0.5 c dy^2 + floor <= 0 with slack on floor.
/// Conservative: the exact per-pixel test still decides.
struct SplatReach {
    double mean_x = 0.0, mean_y = 0.0;
    double a = 0.0, b = 0.0;
    double det = 0.0;    // a c - b^2
    double bound = 0.0;  // -2 (floor - slack)
    double half_height = -1.0;

    template <class Real>
    explicit SplatReach(const Splat2D<Real>& s)
        : mean_x(static_cast<double>(s.mean_x)),
          mean_y(static_cast<double>(s.mean_y)),
          a(static_cast<double>(s.conic_xx)),
          b(static_cast<double>(s.conic_xy)),
          det(a * static_cast<double>(s.conic_yy) - b * b),
          bound(-2.0 * (static_cast<double>(s.power_floor) - 1e-3)) {
        if (a > 0.0 && det > 0.0 && bound > 0.0) half_height = std::sqrt(a * bound / det);
    }

    /// Pixel rows [y0, y1) intersecting the region, clipped to [y_begin, y_end).
    [[nodiscard]] std::pair<int, int> rows(int y_begin, int y_end) const {
        if (half_height < 0.0) return {0, 0};
        // Pixel y has its centre at y + 0.5.
        const int y0 = std::max(y_begin, static_cast<int>(std::floor(mean_y - half_height - 0.5)));
        const int y1 = std::min(y_end, static_cast<int>(std::ceil(mean_y + half_height - 0.5)) + 1);
        return {y0, std::max(y0, y1)};
    }

    /// Pixel columns [x0, x1) of the row with centre `py`, clipped to [x_begin, x_end).
    [[nodiscard]] std::pair<int, int> columns(double py, int x_begin, int x_end) const {
        const double dy = py - mean_y;
        const double disc = a * bound - det * dy * dy;
        if (!(disc >= 0.0)) return {0, 0};
        const double root = std::sqrt(disc);
        const double lo = mean_x + (-b * dy - root) / a;
        const double hi = mean_x + (-b * dy + root) / a;
        const int x0 = std::max(x_begin, static_cast<int>(std::floor(lo - 0.5)));
        const int x1 = std::min(x_end, static_cast<int>(std::ceil(hi - 0.5)) + 1);
        return {x0, std::max(x0, x1)};
    }
};

/// Composites per-Gaussian colours (indexed by Gaussian) over `background`.
/// Splat-major within each tile; per pixel this performs the same operations
/// in the same order as traverse_pixel.
template <class Real = float>
[[nodiscard]] BasicImage<Real> composite(const Frame<Real>& f, std::span<const Eigen::Vector3d> colors,
                                         const Eigen::Vector3d& background) {
    BasicImage<Real> img(f.width, f.height);
    std::vector<std::array<Real, 3>> splat_color(f.splats.size());
    for (std::size_t i = 0; i < f.splats.size(); ++i) {
        const Eigen::Vector3d& c = colors[f.splats[i].gaussian];
        splat_color[i] = {static_cast<Real>(c[0]), static_cast<Real>(c[1]), static_cast<Real>(c[2])};
    }
    const std::array<Real, 3> bg{static_cast<Real>(background[0]), static_cast<Real>(background[1]),
                                 static_cast<Real>(background[2])};
    parallel_for(0, f.tile_count(), [&](std::size_t t) {
        const int tx = static_cast<int>(t % f.tiles_x);
        const int ty = static_cast<int>(t / f.tiles_x);
        const int x_begin = tx * kTileSize, x_end = std::min(f.width, x_begin + kTileSize);
        const int y_begin = ty * kTileSize, y_end = std::min(f.height, y_begin + kTileSize);
        constexpr int kPixels = kTileSize * kTileSize;
        std::array<Real, kPixels> transmittance;
        std::array<std::array<Real, 3>, kPixels> acc{};
        transmittance.fill(Real(1));
        int live = (x_end - x_begin) * (y_end - y_begin);
        std::array<int, kTileSize> row_live{};
        row_live.fill(x_end - x_begin);
        for (const std::uint32_t si : f.tile(t)) {
            const Splat2D<Real>& s = f.splats[si];
            const SplatReach reach(s);
            const auto [ry0, ry1] = reach.rows(y_begin, y_end);
            for (int y = ry0; y < ry1; ++y) {
                if (row_live[static_cast<std::size_t>(y - y_begin)] == 0) continue;
                const Real py = Real(y) + Real(0.5);
                const auto [x0, x1] = reach.columns(static_cast<double>(py), x_begin, x_end);
                for (int x = x0; x < x1; ++x) {
                    const int p = (y - y_begin) * kTileSize + (x - x_begin);
                    Real& tr = transmittance[static_cast<std::size_t>(p)];
                    if (tr < Real(kTransmittanceCutoff)) continue;
                    const Real dx = Real(x) + Real(0.5) - s.mean_x;
                    const Real dy = py - s.mean_y;
                    const Real power = Real(-0.5) * (s.conic_xx * dx * dx + s.conic_yy * dy * dy) - s.conic_xy * dx * dy;
                    if (power > Real(0) || power < s.power_floor) continue;
                    const Real alpha = std::min(Real(kAlphaClip), s.alpha_peak * std::exp(power));
                    if (alpha < Real(kMinAlpha)) continue;
                    const Real w = alpha * tr;
                    auto& a = acc[static_cast<std::size_t>(p)];
                    a[0] += w * splat_color[si][0];
                    a[1] += w * splat_color[si][1];
                    a[2] += w * splat_color[si][2];
                    tr *= Real(1) - alpha;
                    if (tr < Real(kTransmittanceCutoff)) {
                        --live;
                        --row_live[static_cast<std::size_t>(y - y_begin)];
                    }
                }
            }
            if (live == 0) break;
        }
        for (int y = y_begin; y < y_end; ++y)
            for (int x = x_begin; x < x_end; ++x) {
                const auto p = static_cast<std::size_t>((y - y_begin) * kTileSize + (x - x_begin));
                Real* px = img.pixel(x, y);
                for (int c = 0; c < 3; ++c) px[c] = acc[p][c] + bg[c] * transmittance[p];
            }
    });
    return img;
}

template <class Real = float>
[[nodiscard]] BasicImage<Real> render(const GaussianModel& model, const Camera& cam, const LightSH& light) {
    const auto colors = shade_all(model, light);
    return composite(prepare_frame<Real>(model, cam), std::span<const Eigen::Vector3d>(colors), model.background);
}

/// Light-independent compositing weights: pixel = sum_k w_k c_k + bg (1 - sum_k w_k).
template <class Real = float>
struct PixelWeights {
    int width = 0;
    int height = 0;
    std::vector<std::size_t> offsets;  // pixel_count + 1, row-major pixels
    std::vector<std::uint32_t> gaussian;
    std::vector<Real> weight;

    [[nodiscard]] std::size_t pixel_count() const noexcept {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    [[nodiscard]] std::size_t begin(std::size_t p) const noexcept { return offsets[p]; }
    [[nodiscard]] std::size_t end(std::size_t p) const noexcept { return offsets[p + 1]; }
    [[nodiscard]] Real coverage(std::size_t p) const noexcept {
        Real s = 0;
        for (std::size_t e = offsets[p]; e < offsets[p + 1]; ++e) s += weight[e];
        return s;
    }
};

template <class Real = float>
[[nodiscard]] PixelWeights<Real> frame_weights(const Frame<Real>& f) {
    struct TileBuffer {
        std::vector<std::uint32_t> count;  // per tile pixel, scan order
        std::vector<std::uint32_t> gaussian;
        std::vector<Real> weight;
    };
    std::vector<TileBuffer> buffers(f.tile_count());
    parallel_for(0, f.tile_count(), [&](std::size_t t) {
        const int tx = static_cast<int>(t % f.tiles_x);
        const int ty = static_cast<int>(t / f.tiles_x);
        const auto list = f.tile(t);
        TileBuffer& buf = buffers[t];
        for_each_tile_pixel(tx, ty, f.width, f.height, [&](int x, int y) {
            std::uint32_t n = 0;
            traverse_pixel(f, list, Real(x) + Real(0.5), Real(y) + Real(0.5),
                           [&](std::size_t, std::uint32_t s, Real a, Real tr) {
                               buf.gaussian.push_back(f.splats[s].gaussian);
                               buf.weight.push_back(a * tr);
                               ++n;
                           });
            buf.count.push_back(n);
        });
    });

    PixelWeights<Real> out;
    out.width = f.width;
    out.height = f.height;
    out.offsets.assign(out.pixel_count() + 1, 0);
    std::vector<std::size_t> tile_start(f.tile_count(), 0);  // position in the tile buffer per pixel
    for (std::size_t t = 0; t < f.tile_count(); ++t) {
        const int tx = static_cast<int>(t % f.tiles_x);
        const int ty = static_cast<int>(t / f.tiles_x);
        std::size_t i = 0;
        for_each_tile_pixel(tx, ty, f.width, f.height, [&](int x, int y) {
            out.offsets[static_cast<std::size_t>(y) * f.width + x + 1] = buffers[t].count[i++];
        });
    }
    for (std::size_t p = 0; p < out.pixel_count(); ++p) out.offsets[p + 1] += out.offsets[p];
    out.gaussian.resize(out.offsets.back());
    out.weight.resize(out.offsets.back());
    parallel_for(0, f.tile_count(), [&](std::size_t t) {
        const int tx = static_cast<int>(t % f.tiles_x);
        const int ty = static_cast<int>(t / f.tiles_x);
        const TileBuffer& buf = buffers[t];
        std::size_t i = 0;
        std::size_t src = 0;
        for_each_tile_pixel(tx, ty, f.width, f.height, [&](int x, int y) {
            const std::size_t dst = out.offsets[static_cast<std::size_t>(y) * f.width + x];
            const std::uint32_t n = buf.count[i++];
            std::copy_n(buf.gaussian.begin() + static_cast<std::ptrdiff_t>(src), n,
                        out.gaussian.begin() + static_cast<std::ptrdiff_t>(dst));
            std::copy_n(buf.weight.begin() + static_cast<std::ptrdiff_t>(src), n,
                        out.weight.begin() + static_cast<std::ptrdiff_t>(dst));
            src += n;
        });
    });
    return out;
}

template <class Real = float>
[[nodiscard]] PixelWeights<Real> render_weights(const GaussianModel& model, const Camera& cam) {
    return frame_weights(prepare_frame<Real>(model, cam));
}

/// Image from precomputed weights and per-Gaussian colours.
template <class Out = double, class Real>
[[nodiscard]] BasicImage<Out> composite_weights(const PixelWeights<Real>& pw, std::span<const Eigen::Vector3d> colors,
                                                const Eigen::Vector3d& background) {
    BasicImage<Out> img(pw.width, pw.height);
    auto values = img.values();
    parallel_for(
        0, pw.pixel_count(),
        [&](std::size_t p) {
            double acc[3] = {0, 0, 0};
            double cover = 0;
            for (std::size_t e = pw.begin(p); e < pw.end(p); ++e) {
                const double w = pw.weight[e];
                const Eigen::Vector3d& c = colors[pw.gaussian[e]];
                acc[0] += w * c[0];
                acc[1] += w * c[1];
                acc[2] += w * c[2];
                cover += w;
            }
            for (int c = 0; c < 3; ++c) values[p * 3 + c] = static_cast<Out>(acc[c] + background[c] * (1.0 - cover));
        },
        256);
    return img;
}

/// Per-Gaussian gradient of a scalar loss w.r.t. colours, given dL/dpixel.
template <class Real, class G>
void accumulate_color_gradient(const PixelWeights<Real>& pw, const BasicImage<G>& d_image,
                               std::span<Eigen::Vector3d> d_colors) {
    const auto g = d_image.values();
    for (std::size_t p = 0; p < pw.pixel_count(); ++p) {
        const double gx = g[p * 3], gy = g[p * 3 + 1], gz = g[p * 3 + 2];
        if (gx == 0.0 && gy == 0.0 && gz == 0.0) continue;
        for (std::size_t e = pw.begin(p); e < pw.end(p); ++e) {
            const double w = pw.weight[e];
            d_colors[pw.gaussian[e]] += w * Eigen::Vector3d(gx, gy, gz);
        }
    }
}

/// Gradients of a scalar loss through the full compositing path.
struct RasterGradients {
    std::vector<Eigen::Vector3d> d_color;
    std::vector<double> d_opacity_logit;
    std::vector<Eigen::Vector3d> d_log_scale;
};

/// Backward pass of composite(prepare_frame(model, cam), colors, background)
/// given dL/dpixel. Differentiates colours, opacity and scale; positions and
/// rotations are treated as constants, as is the set of contributing splats.
template <class Real>
[[nodiscard]] RasterGradients composite_backward(const GaussianModel& model, const Camera& cam,
                                                 const Frame<Real>& f, std::span<const Eigen::Vector3d> colors,
                                                 const BasicImage<double>& d_image) {
    // Per tile-entry partials: d_color(3), d_peak, d_conic_xx, d_conic_xy, d_conic_yy.
    constexpr int kStride = 7;
    std::vector<double> entry_grad(f.tile_entries.size() * kStride, 0.0);
    const Eigen::Vector3d bg = model.background;

    parallel_for(0, f.tile_count(), [&](std::size_t t) {
        const int tx = static_cast<int>(t % f.tiles_x);
        const int ty = static_cast<int>(t / f.tiles_x);
        const auto list = f.tile(t);
        double* tile_grad = entry_grad.data() + f.tile_offsets[t] * kStride;
        struct Step {
            std::size_t pos;
            std::uint32_t splat;
            double alpha;
            double t_before;
        };
        std::vector<Step> steps;
        for_each_tile_pixel(tx, ty, f.width, f.height, [&](int x, int y) {
            const double* g = d_image.pixel(x, y);
            if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0) return;
            steps.clear();
            const double px = x + 0.5;
            const double py = y + 0.5;
            const double residual = traverse_pixel(f, list, Real(px), Real(py),
                                                   [&](std::size_t pos, std::uint32_t s, Real a, Real tr) {
                                                       steps.push_back({pos, s, double(a), double(tr)});
                                                   });
            Eigen::Vector3d suffix = bg * residual;
            for (std::size_t i = steps.size(); i-- > 0;) {
                const Step& st = steps[i];
                const Splat2D<Real>& s = f.splats[st.splat];
                const Eigen::Vector3d& c = colors[s.gaussian];
                const double w = st.alpha * st.t_before;
                double* eg = tile_grad + st.pos * kStride;
                eg[0] += w * g[0];
                eg[1] += w * g[1];
                eg[2] += w * g[2];
                const Eigen::Vector3d d_c_d_alpha = c * st.t_before - suffix / (1.0 - st.alpha);
                const double d_alpha = g[0] * d_c_d_alpha[0] + g[1] * d_c_d_alpha[1] + g[2] * d_c_d_alpha[2];
                suffix += c * w;
                if (st.alpha >= kAlphaClip) continue;  // clipped: no gradient through alpha
                const double dx = px - double(s.mean_x);
                const double dy = py - double(s.mean_y);
                const double gauss = st.alpha / double(s.alpha_peak);
                eg[3] += d_alpha * gauss;
                // alpha = peak * exp(power), power = -0.5 (a dx^2 + c dy^2) - b dx dy
                eg[4] += d_alpha * st.alpha * (-0.5 * dx * dx);
                eg[5] += d_alpha * st.alpha * (-dx * dy);
                eg[6] += d_alpha * st.alpha * (-0.5 * dy * dy);
            }
        });
    });

    // Reduce entries to splats in fixed tile order.
    std::vector<std::array<double, kStride>> splat_grad(f.splats.size(), std::array<double, kStride>{});
    for (std::size_t e = 0; e < f.tile_entries.size(); ++e) {
        auto& dst = splat_grad[f.tile_entries[e]];
        for (int i = 0; i < kStride; ++i) dst[i] += entry_grad[e * kStride + i];
    }

    RasterGradients out;
    out.d_color.assign(model.size(), Eigen::Vector3d::Zero());
    out.d_opacity_logit.assign(model.size(), 0.0);
    out.d_log_scale.assign(model.size(), Eigen::Vector3d::Zero());
    for (std::size_t i = 0; i < f.splats.size(); ++i) {
        const auto& sg = splat_grad[i];
        const std::uint32_t k = f.splats[i].gaussian;
        const Gaussian& gs = model.gaussians[k];
        out.d_color[k] += Eigen::Vector3d(sg[0], sg[1], sg[2]);
        const double sigma = gs.opacity();
        out.d_opacity_logit[k] += sg[3] * sigma * (1.0 - sigma);

        ProjectionDetail det;
        if (!project_gaussian<double>(gs, cam, &det)) continue;
        // Symmetric dL/dA with the off-diagonal split across both entries.
        Eigen::Matrix2d d_conic;
        d_conic << sg[4], 0.5 * sg[5], 0.5 * sg[5], sg[6];
        const Eigen::Matrix2d d_cov2d = -det.conic * d_conic * det.conic;
        const Eigen::Matrix3d d_cov3d = det.jw.transpose() * d_cov2d * det.jw;
        const Eigen::Matrix3d r = gs.rotation.normalized().toRotationMatrix();
        const Eigen::Matrix3d local = r.transpose() * d_cov3d * r;
        const Eigen::Vector3d s2 = gs.scale().array().square();
        for (int a = 0; a < 3; ++a) out.d_log_scale[k][a] += 2.0 * s2[a] * local(a, a);
    }
    return out;
}

}  // namespace prtg
