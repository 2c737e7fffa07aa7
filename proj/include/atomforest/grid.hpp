#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace atomforest {

/// Column-major sample matrix: one column per variable, all of equal length.
class Samples {
public:
    Samples() = default;
    explicit Samples(std::vector<std::vector<double>> columns);
    static Samples single(std::vector<double> column);

    std::size_t rows() const { return rows_; }
    std::size_t variables() const { return columns_.size(); }
    std::span<const double> column(std::size_t j) const { return columns_.at(j); }
    const std::vector<std::vector<double>>& columns() const { return columns_; }

    /// Rows selected by index, in the given order.
    Samples subset(std::span<const std::size_t> rows) const;

private:
    std::vector<std::vector<double>> columns_;
    std::size_t rows_ = 0;
};

/// Strictly increasing one-dimensional sample grid.
class Grid {
public:
    /// Validates: at least two points, all finite, strictly increasing.
    explicit Grid(std::vector<double> points);

    /// n points uniformly spaced on the left-open interval (lo, hi].
    static Grid uniform(double lo, double hi, std::size_t n);
    /// n points uniformly spaced on the closed interval [lo, hi].
    static Grid closed(double lo, double hi, std::size_t n);
    /// Independent verification grid: same cardinality, domain shrunk inward
    /// by 5% on each side, points at cell midpoints so no point coincides
    /// with the uniform(lo, hi, n) layout.
    static Grid holdout_for(const Grid& build);

    std::span<const double> points() const { return points_; }
    std::size_t size() const { return points_.size(); }
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    Samples samples() const { return Samples::single(points_); }

private:
    std::vector<double> points_;
    double lo_ = 0.0;
    double hi_ = 0.0;
};

/// 256 points on (0.1, 3.0]: ln, 1/x and rational powers are all finite there.
inline Grid default_grid() { return Grid::uniform(0.1, 3.0, 256); }

}  // namespace atomforest
