#include "atomforest/grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace atomforest {

Samples::Samples(std::vector<std::vector<double>> columns) : columns_(std::move(columns)) {
    rows_ = columns_.empty() ? 0 : columns_.front().size();
    for (const auto& c : columns_) {
        if (c.size() != rows_) throw std::invalid_argument("sample columns differ in length");
    }
}

Samples Samples::single(std::vector<double> column) {
    std::vector<std::vector<double>> cols;
    cols.push_back(std::move(column));
    return Samples(std::move(cols));
}

Samples Samples::subset(std::span<const std::size_t> rows) const {
    std::vector<std::vector<double>> cols(columns_.size());
    for (std::size_t j = 0; j < columns_.size(); ++j) {
        cols[j].reserve(rows.size());
        for (std::size_t r : rows) cols[j].push_back(columns_[j].at(r));
    }
    return Samples(std::move(cols));
}

Grid::Grid(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw std::invalid_argument("grid needs at least two points");
    for (std::size_t i = 0; i < points_.size(); ++i) {
        if (!std::isfinite(points_[i])) {
            throw std::invalid_argument("grid point " + std::to_string(i) + " is not finite");
        }
        if (i > 0 && !(points_[i] > points_[i - 1])) {
            throw std::invalid_argument("grid points must be strictly increasing (index " +
                                        std::to_string(i) + ")");
        }
    }
    lo_ = points_.front();
    hi_ = points_.back();
}

Grid Grid::uniform(double lo, double hi, std::size_t n) {
    if (!(hi > lo) || n < 2) throw std::invalid_argument("uniform grid needs hi > lo and n >= 2");
    std::vector<double> pts(n);
    double step = (hi - lo) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = lo + step * static_cast<double>(i + 1);
    pts.back() = hi;
    Grid g(std::move(pts));
    g.lo_ = lo;
    return g;
}

Grid Grid::closed(double lo, double hi, std::size_t n) {
    if (!(hi > lo) || n < 2) throw std::invalid_argument("closed grid needs hi > lo and n >= 2");
    std::vector<double> pts(n);
    double step = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) pts[i] = lo + step * static_cast<double>(i);
    pts.back() = hi;
    return Grid(std::move(pts));
}

Grid Grid::holdout_for(const Grid& build) {
    double width = build.hi() - build.lo();
    double lo = build.lo() + 0.05 * width;
    double hi = build.hi() - 0.05 * width;
    std::size_t n = build.size();
    std::vector<double> pts(n);
    double step = (hi - lo) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = lo + step * (static_cast<double>(i) + 0.5);
    return Grid(std::move(pts));
}

}  // namespace atomforest
