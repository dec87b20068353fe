#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stereoscale
{
// Row-major 2D grid, (u, v) = (column, row).
template <typename T>
class Grid
{
public:
        Grid() = default;

        Grid(int width, int height, T fill = T{})
                : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill)
        {
        }

        int width() const noexcept
        {
                return width_;
        }

        int height() const noexcept
        {
                return height_;
        }

        std::size_t size() const noexcept
        {
                return data_.size();
        }

        T& operator()(int u, int v)
        {
                return data_[static_cast<std::size_t>(v) * width_ + u];
        }

        const T& operator()(int u, int v) const
        {
                return data_[static_cast<std::size_t>(v) * width_ + u];
        }

        std::span<T> values() noexcept
        {
                return data_;
        }

        std::span<const T> values() const noexcept
        {
                return data_;
        }

        // Mirror about the vertical image axis: column u <-> width-1-u.
        Grid flipped_horizontally() const
        {
                Grid out(width_, height_);
                for (int v = 0; v < height_; ++v)
                {
                        for (int u = 0; u < width_; ++u)
                        {
                                out(width_ - 1 - u, v) = (*this)(u, v);
                        }
                }
                return out;
        }

        bool operator==(const Grid&) const = default;

private:
        int width_ = 0;
        int height_ = 0;
        std::vector<T> data_;
};
}
