// SPDX-License-Identifier: Apache-2.0
//
// Real spherical harmonics, orthonormal over the unit sphere, without the
// Condon-Shortley phase (Y_1,-1 = +c*y, Y_1,0 = +c*z, Y_1,1 = +c*x).
// Coefficients are band-major: index(l, m) = l*l + l + m.
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "prtg/error.hpp"
#include "prtg/image.hpp"

namespace prtg {

inline constexpr int kMaxShOrder = 16;

[[nodiscard]] constexpr int sh_count(int order) noexcept { return order * order; }
[[nodiscard]] constexpr int sh_index(int l, int m) noexcept { return l * l + l + m; }

inline void check_sh_order(int order) {
    if (order < 1 || order > kMaxShOrder) {
        throw InputError("SH order must be in [1, 16], got " + std::to_string(order));
    }
}

struct ShVector {
    int order = 1;
    Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(1);

    ShVector() = default;
    ShVector(int order_, Eigen::VectorXd coeffs_) : order(order_), coeffs(std::move(coeffs_)) {
        check_sh_order(order);
        if (coeffs.size() != sh_count(order)) throw InputError("ShVector length must equal order^2");
    }

    [[nodiscard]] static ShVector zeros(int order) {
        check_sh_order(order);
        return {order, Eigen::VectorXd::Zero(sh_count(order))};
    }

    [[nodiscard]] double operator[](int j) const { return coeffs[j]; }
    [[nodiscard]] double& operator[](int j) { return coeffs[j]; }
    [[nodiscard]] int size() const noexcept { return static_cast<int>(coeffs.size()); }
};

/// Per-channel light coefficients sharing one order.
struct LightSH {
    std::array<ShVector, 3> channels;

    [[nodiscard]] static LightSH zeros(int order) {
        return {{ShVector::zeros(order), ShVector::zeros(order), ShVector::zeros(order)}};
    }
    [[nodiscard]] int order() const noexcept { return channels[0].order; }

    LightSH& operator+=(const LightSH& other) {
        for (int c = 0; c < 3; ++c) channels[c].coeffs += other.channels[c].coeffs;
        return *this;
    }
    LightSH& operator*=(double s) {
        for (auto& ch : channels) ch.coeffs *= s;
        return *this;
    }
};

namespace detail {

// Recurrence constants for the normalized associated Legendre polynomials
// a_lm = N_lm * P_l^m(z) / sin^m(theta).
struct ShRecurrence {
    std::array<double, kMaxShOrder> diag{};                          // a_mm
    std::array<std::array<double, kMaxShOrder>, kMaxShOrder> alpha{};  // [l][m]
    std::array<std::array<double, kMaxShOrder>, kMaxShOrder> beta{};

    ShRecurrence() {
        diag[0] = 0.5 / std::sqrt(std::numbers::pi);
        for (int m = 1; m < kMaxShOrder; ++m) {
            diag[m] = diag[m - 1] * std::sqrt((2.0 * m + 1.0) / (2.0 * m));
        }
        for (int m = 0; m < kMaxShOrder; ++m) {
            for (int l = m + 2; l < kMaxShOrder; ++l) {
                const double l2 = double(l) * l;
                const double m2 = double(m) * m;
                const double lm1 = double(l - 1);
                alpha[l][m] = std::sqrt((4.0 * l2 - 1.0) / (l2 - m2));
                beta[l][m] = std::sqrt((lm1 * lm1 - m2) / (4.0 * lm1 * lm1 - 1.0));
            }
        }
    }
};

inline const ShRecurrence& sh_recurrence() {
    static const ShRecurrence table;
    return table;
}

}  // namespace detail

/// Fills `out[0 .. order^2)` with Y_j(x, y, z). No validation; (x, y, z) must be unit length.
template <class Real>
void sh_basis_unchecked(double x, double y, double z, int order, Real* out) {
    const auto& rec = detail::sh_recurrence();
    constexpr double sqrt2 = std::numbers::sqrt2;
    double cm = 1.0;  // Re (x + iy)^m
    double sm = 0.0;  // Im (x + iy)^m
    for (int m = 0; m < order; ++m) {
        double prev2 = 0.0;
        double prev1 = rec.diag[m];
        for (int l = m; l < order; ++l) {
            double a;
            if (l == m) {
                a = rec.diag[m];
            } else if (l == m + 1) {
                a = z * std::sqrt(2.0 * m + 3.0) * rec.diag[m];
                prev2 = prev1;
                prev1 = a;
            } else {
                a = rec.alpha[l][m] * (z * prev1 - rec.beta[l][m] * prev2);
                prev2 = prev1;
                prev1 = a;
            }
            if (m == 0) {
                out[sh_index(l, 0)] = static_cast<Real>(a);
            } else {
                out[sh_index(l, m)] = static_cast<Real>(sqrt2 * a * cm);
                out[sh_index(l, -m)] = static_cast<Real>(sqrt2 * a * sm);
            }
        }
        const double c_next = x * cm - y * sm;
        sm = x * sm + y * cm;
        cm = c_next;
    }
}

inline void check_unit(const Eigen::Vector3d& dir, double tol = 1e-6) {
    if (!dir.allFinite() || std::abs(dir.norm() - 1.0) > tol) {
        throw InputError("direction must be unit length");
    }
}

[[nodiscard]] inline ShVector sh_basis(const Eigen::Vector3d& direction, int order) {
    check_sh_order(order);
    check_unit(direction);
    ShVector out = ShVector::zeros(order);
    sh_basis_unchecked(direction.x(), direction.y(), direction.z(), order, out.coeffs.data());
    return out;
}

[[nodiscard]] inline double sh_dot(const ShVector& a, const ShVector& b) {
    if (a.order != b.order || a.coeffs.size() != b.coeffs.size()) {
        throw InputError("sh_dot: order mismatch");
    }
    return a.coeffs.dot(b.coeffs);
}

/// SH projection of a directional emitter: l_j = intensity * Y_j(direction).
[[nodiscard]] inline LightSH project_delta_light(const Eigen::Vector3d& direction,
                                                 const Eigen::Vector3d& intensity, int order) {
    if (!intensity.allFinite() || (intensity.array() < 0.0).any()) {
        throw InputError("light intensity must be finite and non-negative");
    }
    const ShVector basis = sh_basis(direction, order);
    LightSH out;
    for (int c = 0; c < 3; ++c) out.channels[c] = ShVector(order, basis.coeffs * intensity[c]);
    return out;
}

/// Direction of the texel centre (col, row) of a width x height equirectangular map.
/// Row 0 is theta = 0 (+z); columns sweep phi from 0 to 2*pi starting at +x.
[[nodiscard]] inline Eigen::Vector3d equirect_direction(int col, int row, int width, int height) {
    const double theta = (row + 0.5) / height * std::numbers::pi;
    const double phi = (col + 0.5) / width * 2.0 * std::numbers::pi;
    return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

/// Quadrature weights in cos(theta) for the row midpoints theta_k = (k + 0.5) pi / h.
/// Fejer's first rule: tends to sin(theta) d_theta as h grows and integrates
/// polynomials in cos(theta) of degree < h exactly.
[[nodiscard]] inline std::vector<double> equirect_row_weights(int h) {
    std::vector<double> w(static_cast<std::size_t>(h));
    for (int k = 0; k < h; ++k) {
        const double theta = (k + 0.5) * std::numbers::pi / h;
        double s = 0.0;
        for (int j = 1; j <= h / 2; ++j) s += std::cos(2.0 * j * theta) / (4.0 * j * j - 1.0);
        w[static_cast<std::size_t>(k)] = 2.0 / h * (1.0 - 2.0 * s);
    }
    return w;
}

/// Midpoint-grid projection of an equirectangular radiance map onto the SH basis.
[[nodiscard]] inline LightSH project_envmap(const Image& envmap, int order) {
    check_sh_order(order);
    if (envmap.empty()) throw InputError("project_envmap: empty image");
    const int w = envmap.width();
    const int h = envmap.height();
    if (w < 2 * h) throw InputError("project_envmap: equirectangular map needs width >= 2*height");

    const int n = sh_count(order);
    const double d_phi = 2.0 * std::numbers::pi / w;
    const std::vector<double> row_weight = equirect_row_weights(h);
    std::array<Eigen::VectorXd, 3> acc{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n),
                                       Eigen::VectorXd::Zero(n)};
    Eigen::VectorXd basis(n);
    std::array<Eigen::VectorXd, 3> row_acc{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (int row = 0; row < h; ++row) {
        const double weight = row_weight[static_cast<std::size_t>(row)] * d_phi;
        for (auto& r : row_acc) r.setZero();
        for (int col = 0; col < w; ++col) {
            const float* px = envmap.pixel(col, row);
            if (!std::isfinite(px[0]) || !std::isfinite(px[1]) || !std::isfinite(px[2]) || px[0] < 0.f ||
                px[1] < 0.f || px[2] < 0.f) {
                throw InputError("project_envmap: pixel values must be finite and non-negative");
            }
            if (px[0] == 0.f && px[1] == 0.f && px[2] == 0.f) continue;
            const Eigen::Vector3d d = equirect_direction(col, row, w, h);
            sh_basis_unchecked(d.x(), d.y(), d.z(), order, basis.data());
            for (int c = 0; c < 3; ++c) row_acc[c] += double(px[c]) * basis;
        }
        for (int c = 0; c < 3; ++c) acc[c] += weight * row_acc[c];
    }
    LightSH out;
    for (int c = 0; c < 3; ++c) out.channels[c] = ShVector(order, std::move(acc[c]));
    return out;
}

}  // namespace prtg
