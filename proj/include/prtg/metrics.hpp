// SPDX-License-Identifier: Apache-2.0
//
// Image losses and quality metrics. SSIM uses an 11x11 Gaussian window
// (std 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, zero padding at the
// border, evaluated per channel and averaged over pixels and channels.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "prtg/error.hpp"
#include "prtg/image.hpp"

namespace prtg {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

inline const std::vector<double>& ssim_kernel() {
    static const std::vector<double> kernel = [] {
        std::vector<double> k(kSsimWindow);
        const int half = kSsimWindow / 2;
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double x = i - half;
            k[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
            sum += k[static_cast<std::size_t>(i)];
        }
        for (auto& v : k) v /= sum;
        return k;
    }();
    return kernel;
}

/// Separable Gaussian blur of a single-channel plane with zero padding.
inline std::vector<double> blur(const std::vector<double>& src, int w, int h) {
    const auto& k = ssim_kernel();
    const int half = kSsimWindow / 2;
    std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -half; i <= half; ++i) {
                const int xx = x + i;
                if (xx < 0 || xx >= w) continue;
                acc += k[static_cast<std::size_t>(i + half)] * src[static_cast<std::size_t>(y) * w + xx];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -half; i <= half; ++i) {
                const int yy = y + i;
                if (yy < 0 || yy >= h) continue;
                acc += k[static_cast<std::size_t>(i + half)] * tmp[static_cast<std::size_t>(yy) * w + x];
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    return out;
}

template <class A>
std::vector<double> channel_plane(const BasicImage<A>& img, int c, bool clip) {
    std::vector<double> out(img.pixel_count());
    const auto v = img.values();
    for (std::size_t p = 0; p < out.size(); ++p) {
        double x = static_cast<double>(v[p * 3 + static_cast<std::size_t>(c)]);
        out[p] = clip ? std::clamp(x, 0.0, 1.0) : x;
    }
    return out;
}

template <class A, class B>
void check_same_size(const BasicImage<A>& a, const BasicImage<B>& b) {
    if (a.width() != b.width() || a.height() != b.height()) throw InputError("image dimensions differ");
    if (a.empty()) throw InputError("images are empty");
}

/// Mean SSIM of one channel and, optionally, its gradient w.r.t. x.
inline double ssim_channel(const std::vector<double>& x, const std::vector<double>& y, int w, int h,
                           std::vector<double>* grad_x) {
    const std::size_t n = x.size();
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mu_x = blur(x, w, h);
    const auto mu_y = blur(y, w, h);
    const auto e_xx = blur(xx, w, h);
    const auto e_yy = blur(yy, w, h);
    const auto e_xy = blur(xy, w, h);

    double total = 0.0;
    std::vector<double> d_mu, d_exx, d_exy;
    if (grad_x) {
        d_mu.resize(n);
        d_exx.resize(n);
        d_exy.resize(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double mx = mu_x[i], my = mu_y[i];
        const double vx = e_xx[i] - mx * mx;
        const double vy = e_yy[i] - my * my;
        const double cxy = e_xy[i] - mx * my;
        const double n1 = 2.0 * mx * my + kSsimC1;
        const double n2 = 2.0 * cxy + kSsimC2;
        const double d1 = mx * mx + my * my + kSsimC1;
        const double d2 = vx + vy + kSsimC2;
        const double s = (n1 * n2) / (d1 * d2);
        total += s;
        if (grad_x) {
            // Partials holding mu_y, E[yy] fixed: n2 and d2 depend on mu_x through the variances.
            const double dn1 = 2.0 * my, dn2 = -2.0 * my, dd1 = 2.0 * mx, dd2 = -2.0 * mx;
            d_mu[i] = (dn1 * n2 + n1 * dn2) / (d1 * d2) - s * (dd1 * d2 + d1 * dd2) / (d1 * d2);
            d_exx[i] = -s / d2;
            d_exy[i] = 2.0 * n1 / (d1 * d2);
        }
    }
    if (grad_x) {
        const auto g_mu = blur(d_mu, w, h);
        const auto g_exx = blur(d_exx, w, h);
        const auto g_exy = blur(d_exy, w, h);
        grad_x->resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            (*grad_x)[i] = (g_mu[i] + 2.0 * x[i] * g_exx[i] + y[i] * g_exy[i]) / static_cast<double>(n);
        }
    }
    return total / static_cast<double>(n);
}

}  // namespace detail

/// Mean SSIM over pixels and channels on values clipped to [0, 1].
template <class A, class B>
[[nodiscard]] double ssim(const BasicImage<A>& a, const BasicImage<B>& b) {
    detail::check_same_size(a, b);
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        total += detail::ssim_channel(detail::channel_plane(a, c, true), detail::channel_plane(b, c, true), a.width(),
                                      a.height(), nullptr);
    }
    return total / 3.0;
}

template <class A, class B>
[[nodiscard]] double mse(const BasicImage<A>& a, const BasicImage<B>& b, bool clip = true) {
    detail::check_same_size(a, b);
    const auto va = a.values();
    const auto vb = b.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) {
        double x = static_cast<double>(va[i]);
        double y = static_cast<double>(vb[i]);
        if (clip) {
            x = std::clamp(x, 0.0, 1.0);
            y = std::clamp(y, 0.0, 1.0);
        }
        acc += (x - y) * (x - y);
    }
    return acc / static_cast<double>(va.size());
}

/// 10 log10(1 / MSE) on values clipped to [0, 1]; +inf for identical images.
template <class A, class B>
[[nodiscard]] double psnr(const BasicImage<A>& a, const BasicImage<B>& b) {
    const double e = mse(a, b, true);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / e);
}

struct LossTerms {
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
};

/// (1 - lambda) L1 + lambda (1 - SSIM) / 2 on unclipped values. When `gradient`
/// is non-null it receives dL/drendered.
template <class A, class B>
LossTerms loss_terms(const BasicImage<A>& rendered, const BasicImage<B>& target, double lambda,
                     BasicImage<double>* gradient = nullptr) {
    detail::check_same_size(rendered, target);
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("loss: lambda must lie in [0, 1]");
    const auto vr = rendered.values();
    const auto vt = target.values();
    const double count = static_cast<double>(vr.size());
    LossTerms out;
    if (gradient) *gradient = BasicImage<double>(rendered.width(), rendered.height());
    double l1 = 0.0;
    for (std::size_t i = 0; i < vr.size(); ++i) {
        const double d = static_cast<double>(vr[i]) - static_cast<double>(vt[i]);
        l1 += std::abs(d);
        if (gradient) gradient->values()[i] = (1.0 - lambda) * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / count;
    }
    out.l1 = l1 / count;
    double ssim_sum = 0.0;
    if (lambda > 0.0) {
        std::vector<double> g;
        for (int c = 0; c < 3; ++c) {
            ssim_sum += detail::ssim_channel(detail::channel_plane(rendered, c, false),
                                             detail::channel_plane(target, c, false), rendered.width(),
                                             rendered.height(), gradient ? &g : nullptr);
            if (gradient) {
                auto gv = gradient->values();
                // d[(1 - mean_c SSIM_c) / 2] = -dSSIM_c / 6
                for (std::size_t p = 0; p < g.size(); ++p) gv[p * 3 + static_cast<std::size_t>(c)] -= lambda * g[p] / 6.0;
            }
        }
        out.dssim = (1.0 - ssim_sum / 3.0) / 2.0;
    }
    out.total = (1.0 - lambda) * out.l1 + lambda * out.dssim;
    return out;
}

template <class A, class B>
[[nodiscard]] double loss(const BasicImage<A>& rendered, const BasicImage<B>& target, double lambda) {
    return loss_terms(rendered, target, lambda).total;
}

}  // namespace prtg
