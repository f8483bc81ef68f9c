// SPDX-License-Identifier: Apache-2.0
#include "prtg/gaussian.hpp"

#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "test_models.hpp"

TEST(Covariance, Examples) {
    auto g = prtg::Gaussian::make(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Ones(),
                                  0.5, Eigen::Vector3d::Constant(0.5), Eigen::VectorXd::Zero(1));
    EXPECT_TRUE(prtg::covariance3d(g).isApprox(Eigen::Matrix3d::Identity(), 1e-12));

    g.set_scale(Eigen::Vector3d(2, 1, 1));
    EXPECT_TRUE(prtg::covariance3d(g).isApprox(Eigen::Vector3d(4, 1, 1).asDiagonal().toDenseMatrix(), 1e-12));

    g.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ()));
    const Eigen::Matrix3d c = prtg::covariance3d(g);
    EXPECT_LT((c - Eigen::Vector3d(1, 4, 1).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Covariance, SymmetricPsdWithScaleEigenvalues) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.01, 3.0);
    for (int i = 0; i < 200; ++i) {
        const Eigen::Vector3d s(u(rng), u(rng), u(rng));
        const auto g = prtg::Gaussian::make(Eigen::Vector3d::Zero(), prtg::testing::random_rotation(rng), s, 0.5,
                                            Eigen::Vector3d::Constant(0.5), Eigen::VectorXd::Zero(1));
        const Eigen::Matrix3d c = prtg::covariance3d(g);
        EXPECT_LT((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-7);
        Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(c).eigenvalues();
        Eigen::Vector3d s2 = s.array().square();
        std::sort(s2.data(), s2.data() + 3);
        EXPECT_GE(ev.minCoeff(), s2.minCoeff() * (1 - 1e-6));
        EXPECT_LT((ev - s2).cwiseAbs().maxCoeff(), 1e-9 * s2.maxCoeff());
    }
}

TEST(Gaussian, ConstrainedAccessors) {
    const auto g = prtg::Gaussian::make(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(),
                                        Eigen::Vector3d(0.1, 0.2, 0.3), 0.25, Eigen::Vector3d(0.1, 0.5, 0.9),
                                        Eigen::VectorXd::Zero(4));
    EXPECT_NEAR(g.opacity(), 0.25, 1e-15);
    EXPECT_TRUE(g.scale().isApprox(Eigen::Vector3d(0.1, 0.2, 0.3), 1e-14));
    EXPECT_TRUE(g.albedo().isApprox(Eigen::Vector3d(0.1, 0.5, 0.9), 1e-14));
    prtg::Gaussian h = g;
    EXPECT_THROW(h.set_scale(Eigen::Vector3d(0.0, 1.0, 1.0)), prtg::InputError);
    EXPECT_THROW(h.set_opacity(1.5), prtg::InputError);
    EXPECT_THROW(h.set_albedo(Eigen::Vector3d(-0.1, 0.0, 0.0)), prtg::InputError);
    // Any unconstrained value maps into the valid ranges.
    h.opacity_logit = 40.0;
    h.albedo_logit = Eigen::Vector3d(-50.0, 0.0, 50.0);
    EXPECT_LE(h.opacity(), 1.0);
    EXPECT_GE(h.albedo().minCoeff(), 0.0);
    EXPECT_LE(h.albedo().maxCoeff(), 1.0);
}

TEST(Shade, Examples) {
    const int order = 3;
    auto g = prtg::Gaussian::make(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Ones(),
                                  0.5, Eigen::Vector3d::Ones(), Eigen::VectorXd::Zero(9));
    prtg::LightSH light = prtg::LightSH::zeros(order);
    for (auto& ch : light.channels) ch[0] = 2.0 * std::sqrt(std::numbers::pi);
    EXPECT_TRUE(prtg::shade(g, light).isZero(0.0));

    g.transfer[0] = std::sqrt(std::numbers::pi) / 2.0;
    const Eigen::Vector3d c = prtg::shade(g, light);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(c[k], std::numbers::pi, 1e-12);

    EXPECT_THROW((void)prtg::shade(g, prtg::LightSH::zeros(2)), prtg::InputError);
}

TEST(Shade, ClampsNegativeIrradiance) {
    auto g = prtg::Gaussian::make(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Ones(),
                                  0.5, Eigen::Vector3d::Constant(0.5), Eigen::VectorXd::Zero(4));
    g.transfer[0] = -1.0;
    const auto light = prtg::project_delta_light(Eigen::Vector3d::UnitZ(), Eigen::Vector3d::Ones(), 2);
    EXPECT_LT(prtg::shade_unclamped(g, light).maxCoeff(), 0.0);
    EXPECT_TRUE(prtg::shade(g, light).isZero(0.0));
}

TEST(Shade, LinearHomogeneousAndGaugeInvariant) {
    std::mt19937_64 rng(2);
    const auto model = prtg::testing::random_model(rng, 50, 5);
    for (const auto& g : model.gaussians) {
        const auto l1 = prtg::testing::random_light(rng, 5);
        const auto l2 = prtg::testing::random_light(rng, 5);
        prtg::LightSH sum = l1;
        sum += l2;
        const Eigen::Vector3d a = prtg::shade_unclamped(g, l1), b = prtg::shade_unclamped(g, l2);
        EXPECT_TRUE(prtg::shade_unclamped(g, sum).isApprox(a + b, 1e-12));
        if ((a.array() >= 0).all() && (b.array() >= 0).all()) {
            EXPECT_TRUE(prtg::shade(g, sum).isApprox(prtg::shade(g, l1) + prtg::shade(g, l2), 1e-12));
        }
        prtg::LightSH scaled = l1;
        scaled *= 2.5;
        EXPECT_TRUE(prtg::shade_unclamped(g, scaled).isApprox(2.5 * a, 1e-12));

        // T -> a T, rho -> rho / a.
        prtg::Gaussian h = g;
        const double k = 1.7;
        h.transfer *= k;
        h.set_albedo(g.albedo() / k);
        EXPECT_LT((prtg::shade(h, l1) - prtg::shade(g, l1)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(GaussianModel, ValidateChecksTransferLength) {
    prtg::GaussianModel m;
    m.sh_order = 3;
    m.gaussians.push_back(prtg::Gaussian{});
    EXPECT_THROW(m.validate(), prtg::InputError);
    m.gaussians[0].transfer = Eigen::VectorXd::Zero(9);
    EXPECT_NO_THROW(m.validate());
}
