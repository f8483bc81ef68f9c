// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "prtg/error.hpp"

namespace prtg {

/// Linear RGB image, row-major from the top row, channels interleaved.
template <class Real>
class BasicImage {
public:
    BasicImage() = default;
    BasicImage(int width, int height, Real fill = Real(0))
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(checked(width)) * static_cast<std::size_t>(checked(height)) * 3, fill) {}

    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] std::size_t pixel_count() const noexcept {
        return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
    }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] Real* pixel(int x, int y) noexcept { return &data_[index(x, y)]; }
    [[nodiscard]] const Real* pixel(int x, int y) const noexcept { return &data_[index(x, y)]; }
    [[nodiscard]] Real& at(int x, int y, int c) noexcept { return data_[index(x, y) + static_cast<std::size_t>(c)]; }
    [[nodiscard]] Real at(int x, int y, int c) const noexcept {
        return data_[index(x, y) + static_cast<std::size_t>(c)];
    }

    [[nodiscard]] std::span<Real> values() noexcept { return data_; }
    [[nodiscard]] std::span<const Real> values() const noexcept { return data_; }

    [[nodiscard]] bool same_size(const BasicImage& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }

    template <class Other>
    [[nodiscard]] BasicImage<Other> cast() const {
        BasicImage<Other> out(width_, height_);
        auto dst = out.values();
        for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<Other>(data_[i]);
        return out;
    }

    friend bool operator==(const BasicImage&, const BasicImage&) = default;

private:
    static int checked(int v) {
        if (v < 0) throw InputError("image dimensions must be non-negative");
        return v;
    }
    [[nodiscard]] std::size_t index(int x, int y) const noexcept {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<Real> data_;
};

using Image = BasicImage<float>;

}  // namespace prtg
