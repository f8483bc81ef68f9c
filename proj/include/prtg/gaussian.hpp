// SPDX-License-Identifier: Apache-2.0
//
// Relightable Gaussian splats. Constrained attributes are stored unconstrained
// (log-scale, logit opacity and albedo) so optimizers can update them freely;
// accessors expose the constrained values.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "prtg/error.hpp"
#include "prtg/sh.hpp"

namespace prtg {

[[nodiscard]] inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }
[[nodiscard]] inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

struct Gaussian {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
    double opacity_logit = 0.0;
    Eigen::Vector3d albedo_logit = Eigen::Vector3d::Zero();
    Eigen::VectorXd transfer = Eigen::VectorXd::Zero(1);

    [[nodiscard]] static Gaussian make(const Eigen::Vector3d& position, const Eigen::Quaterniond& rotation,
                                       const Eigen::Vector3d& scale, double opacity,
                                       const Eigen::Vector3d& albedo, Eigen::VectorXd transfer) {
        Gaussian g;
        g.position = position;
        g.rotation = rotation;
        g.set_scale(scale);
        g.set_opacity(opacity);
        g.set_albedo(albedo);
        g.transfer = std::move(transfer);
        return g;
    }

    [[nodiscard]] Eigen::Vector3d scale() const { return log_scale.array().exp(); }
    [[nodiscard]] double opacity() const { return sigmoid(opacity_logit); }
    [[nodiscard]] Eigen::Vector3d albedo() const {
        return {sigmoid(albedo_logit.x()), sigmoid(albedo_logit.y()), sigmoid(albedo_logit.z())};
    }

    void set_scale(const Eigen::Vector3d& s) {
        if (!((s.array() > 0.0).all())) throw InputError("Gaussian scales must be strictly positive");
        log_scale = s.array().log();
    }
    void set_opacity(double sigma) {
        if (!(sigma >= 0.0 && sigma <= 1.0)) throw InputError("opacity must lie in [0, 1]");
        opacity_logit = logit(sigma);
    }
    void set_albedo(const Eigen::Vector3d& rho) {
        for (int c = 0; c < 3; ++c) {
            if (!(rho[c] >= 0.0 && rho[c] <= 1.0)) throw InputError("albedo must lie in [0, 1]");
            albedo_logit[c] = logit(rho[c]);
        }
    }
    void normalize_rotation() { rotation.normalize(); }
};

struct GaussianModel {
    std::vector<Gaussian> gaussians;
    int sh_order = 9;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();

    [[nodiscard]] std::size_t size() const noexcept { return gaussians.size(); }
    [[nodiscard]] bool empty() const noexcept { return gaussians.empty(); }

    void validate() const {
        check_sh_order(sh_order);
        for (std::size_t i = 0; i < gaussians.size(); ++i) {
            if (gaussians[i].transfer.size() != sh_count(sh_order)) {
                throw InputError("Gaussian " + std::to_string(i) + " transfer length does not match sh_order^2");
            }
        }
    }
};

/// Sigma = R diag(s)^2 R^T.
[[nodiscard]] inline Eigen::Matrix3d covariance3d(const Gaussian& g) {
    const Eigen::Matrix3d r = g.rotation.normalized().toRotationMatrix();
    const Eigen::Vector3d s2 = g.scale().array().square();
    return r * s2.asDiagonal() * r.transpose();
}

/// rho_c * <l^c, T> per channel before the non-negativity clamp.
[[nodiscard]] inline Eigen::Vector3d shade_unclamped(const Gaussian& g, const LightSH& light) {
    if (light.order() < 1 || g.transfer.size() != light.channels[0].coeffs.size()) {
        throw InputError("shade: light order does not match transfer order");
    }
    const Eigen::Vector3d rho = g.albedo();
    return {rho[0] * light.channels[0].coeffs.dot(g.transfer), rho[1] * light.channels[1].coeffs.dot(g.transfer),
            rho[2] * light.channels[2].coeffs.dot(g.transfer)};
}

[[nodiscard]] inline Eigen::Vector3d shade(const Gaussian& g, const LightSH& light) {
    return shade_unclamped(g, light).cwiseMax(0.0);
}

/// Colours for every Gaussian of the model under `light`.
[[nodiscard]] inline std::vector<Eigen::Vector3d> shade_all(const GaussianModel& model, const LightSH& light) {
    if (light.order() != model.sh_order) throw InputError("shade: light order does not match model order");
    std::vector<Eigen::Vector3d> colors(model.size());
    for (std::size_t k = 0; k < model.size(); ++k) colors[k] = shade(model.gaussians[k], light);
    return colors;
}

}  // namespace prtg
