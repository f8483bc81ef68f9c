// SPDX-License-Identifier: Apache-2.0
//
// Reference radiance transfer: exact clamped-cosine coefficients, Monte Carlo
// baking of visibility x cosine transfer against an analytic scene, and the
// SH-limited reference renderer built on it.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "prtg/camera.hpp"
#include "prtg/image.hpp"
#include "prtg/olat.hpp"
#include "prtg/parallel.hpp"
#include "prtg/scene_spec.hpp"
#include "prtg/sh.hpp"

namespace prtg {

inline constexpr std::uint64_t kDefaultBakeSeed = 0x5EED;

struct BakedSurfel {
    Eigen::Vector3d position;
    Eigen::Vector3d normal;
    Eigen::Vector3d albedo;
    ShVector transfer;
};

namespace detail {

/// Gauss-Legendre nodes and weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
    std::vector<double> x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        x[static_cast<std::size_t>(i)] = z;
        w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    return {x, w};
}

}  // namespace detail

/// SH coefficients of max(0, i_z), integrated over the polar angle with
/// Gauss-Legendre quadrature (exact for these polynomial integrands).
[[nodiscard]] inline ShVector clamped_cosine_coeffs(int order) {
    check_sh_order(order);
    ShVector out = ShVector::zeros(order);
    const auto [nodes, weights] = detail::gauss_legendre(64);
    std::vector<double> basis(static_cast<std::size_t>(sh_count(order)));
    for (std::size_t q = 0; q < nodes.size(); ++q) {
        const double mu = 0.5 * (nodes[q] + 1.0);  // cos(theta) in [0, 1]
        const double wq = 0.5 * weights[q];
        sh_basis_unchecked(std::sqrt(1.0 - mu * mu), 0.0, mu, order, basis.data());
        for (int l = 0; l < order; ++l) {
            out[sh_index(l, 0)] += 2.0 * std::numbers::pi * wq * basis[static_cast<std::size_t>(sh_index(l, 0))] * mu;
        }
    }
    return out;
}

/// Rotates a zonal (m = 0 about +z) function so its axis points along `axis`.
[[nodiscard]] inline ShVector rotate_zonal(const ShVector& zonal, const Eigen::Vector3d& axis) {
    const ShVector y = sh_basis(axis.normalized(), zonal.order);
    ShVector out = ShVector::zeros(zonal.order);
    for (int l = 0; l < zonal.order; ++l) {
        const double scale = std::sqrt(4.0 * std::numbers::pi / (2.0 * l + 1.0)) * zonal[sh_index(l, 0)];
        for (int m = -l; m <= l; ++m) out[sh_index(l, m)] = scale * y[sh_index(l, m)];
    }
    return out;
}

/// Unoccluded transfer of a surface with normal `normal`.
[[nodiscard]] inline ShVector unoccluded_transfer(const Eigen::Vector3d& normal, int order) {
    return rotate_zonal(clamped_cosine_coeffs(order), normal);
}

/// A fixed set of uniformly distributed sphere directions with their SH values.
/// Directions are jittered inside an equal-area (z, phi) grid; any samples not
/// filling the grid are drawn uniformly over the whole sphere.
struct SphereSamples {
    int order = 1;
    std::vector<Eigen::Vector3d> directions;
    std::vector<double> basis;  // directions.size() x order^2, row-major

    [[nodiscard]] std::size_t size() const noexcept { return directions.size(); }
    [[nodiscard]] const double* basis_row(std::size_t i) const noexcept {
        return basis.data() + i * static_cast<std::size_t>(sh_count(order));
    }
};

[[nodiscard]] inline SphereSamples make_sphere_samples(int samples, int order, std::uint64_t seed) {
    check_sh_order(order);
    if (samples < 1) throw InputError("bake: sample count must be positive");
    SphereSamples s;
    s.order = order;
    s.directions.reserve(static_cast<std::size_t>(samples));
    std::mt19937_64 rng(seed);
    auto push = [&](double z, double phi) {
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        s.directions.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    };
    const int rows = std::max(1, static_cast<int>(std::sqrt(samples / 2.0)));
    const int cols = samples / rows;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const double z = -1.0 + 2.0 * (i + detail::uniform01(rng)) / rows;
            const double phi = 2.0 * std::numbers::pi * (j + detail::uniform01(rng)) / cols;
            push(z, phi);
        }
    }
    while (static_cast<int>(s.directions.size()) < samples) {
        const double z = -1.0 + 2.0 * detail::uniform01(rng);
        push(z, 2.0 * std::numbers::pi * detail::uniform01(rng));
    }
    const int n = sh_count(order);
    s.basis.resize(s.directions.size() * static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < s.directions.size(); ++i) {
        const auto& d = s.directions[i];
        sh_basis_unchecked(d.x(), d.y(), d.z(), order, s.basis.data() + i * n);
    }
    return s;
}

/// T_j = (4 pi / N) sum_i Y_j(w_i) V(w_i) max(0, n . w_i) with shadow rays from
/// `point` offset along `normal`.
[[nodiscard]] inline ShVector bake_transfer(const SceneSpec& scene, const Eigen::Vector3d& point,
                                            const Eigen::Vector3d& normal, const SphereSamples& samples) {
    check_unit(normal, 1e-6);
    const int n = sh_count(samples.order);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
    const Eigen::Vector3d origin = point + kShadowEpsilon * normal;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Eigen::Vector3d& d = samples.directions[i];
        const double cosine = normal.dot(d);
        if (cosine <= 0.0) continue;
        if (occluded(scene, origin, d)) continue;
        acc += cosine * Eigen::Map<const Eigen::VectorXd>(samples.basis_row(i), n);
    }
    acc *= 4.0 * std::numbers::pi / static_cast<double>(samples.size());
    return {samples.order, std::move(acc)};
}

[[nodiscard]] inline ShVector bake_transfer(const SceneSpec& scene, const Eigen::Vector3d& point,
                                            const Eigen::Vector3d& normal, int order, int samples,
                                            std::uint64_t seed = kDefaultBakeSeed) {
    return bake_transfer(scene, point, normal, make_sphere_samples(samples, order, seed));
}

/// Baked transfer for every pixel of a view (nullopt where the primary ray misses).
struct BakedView {
    int width = 0;
    int height = 0;
    std::vector<std::optional<BakedSurfel>> surfels;
};

[[nodiscard]] inline BakedView bake_view(const SceneSpec& scene, const Camera& cam, int order, int samples,
                                         std::uint64_t seed = kDefaultBakeSeed) {
    scene.validate();
    const SphereSamples dirs = make_sphere_samples(samples, order, seed);
    const PrimaryHits hits = trace_primary(scene, cam);
    BakedView out{hits.width, hits.height, std::vector<std::optional<BakedSurfel>>(hits.hits.size())};
    parallel_for(0, hits.hits.size(), [&](std::size_t p) {
        const auto& h = hits.hits[p];
        if (!h) return;
        out.surfels[p] = BakedSurfel{h->point, h->normal, h->albedo, bake_transfer(scene, h->point, h->normal, dirs)};
    }, 16);
    return out;
}

/// rho * <light, T> per channel, clamped at zero; black where nothing was hit.
[[nodiscard]] inline Image shade_baked(const BakedView& view, const LightSH& light) {
    Image img(view.width, view.height);
    auto values = img.values();
    for (std::size_t p = 0; p < view.surfels.size(); ++p) {
        const auto& s = view.surfels[p];
        if (!s) continue;
        for (int c = 0; c < 3; ++c) {
            const double v = s->albedo[c] * sh_dot(light.channels[c], s->transfer);
            values[p * 3 + c] = static_cast<float>(std::max(0.0, v));
        }
    }
    return img;
}

/// The best image any order-n transfer method can produce under `light`:
/// exact baked transfer at each visible point, shaded with SH lighting.
[[nodiscard]] inline Image render_sh_reference(const SceneSpec& scene, const Camera& cam, const LightSH& light,
                                               int order, int samples = 4096,
                                               std::uint64_t seed = kDefaultBakeSeed) {
    if (light.order() != order) throw InputError("render_sh_reference: light order mismatch");
    return shade_baked(bake_view(scene, cam, order, samples, seed), light);
}

}  // namespace prtg
