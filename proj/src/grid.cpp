#include "dedtwin/grid.hpp"

#include <algorithm>
#include <cmath>

#include "dedtwin/error.hpp"

namespace dedtwin {

std::vector<double> graded_axis(int cells, double length, double ratio) {
    std::vector<double> axis(static_cast<std::size_t>(cells) + 1, 0.0);
    double total = 0.0;
    double w = 1.0;
    std::vector<double> widths(static_cast<std::size_t>(cells));
    for (auto& width : widths) {
        width = w;
        total += w;
        w *= ratio;
    }
    for (int i = 0; i < cells; ++i) axis[i + 1] = axis[i] + widths[i] * length / total;
    axis.back() = length;
    return axis;
}

StructuredGrid::StructuredGrid(const GridSpec& spec) : spec_(spec) {
    if (spec.nx < 2 || spec.ny < 2 || spec.nz < 2) throw InvalidInput("grid needs at least 2 cells per axis");
    if (!(spec.lx > 0 && spec.ly > 0 && spec.lz > 0)) throw InvalidInput("grid extents must be positive");
    if (!(spec.grading_y > 0 && spec.grading_z > 0)) throw InvalidInput("grading ratios must be positive");
    x_ = graded_axis(spec.nx, spec.lx, 1.0);
    z_ = graded_axis(spec.nz, spec.lz, spec.grading_z);
    const auto half = graded_axis(spec.ny, spec.ly, spec.grading_y);
    if (spec.full_width) {
        cells_y_ = 2 * spec.ny;
        y_.clear();
        for (auto it = half.rbegin(); it != half.rend(); ++it) y_.push_back(-*it);
        y_.insert(y_.end(), half.begin() + 1, half.end());
        y_[static_cast<std::size_t>(spec.ny)] = 0.0;
    } else {
        cells_y_ = spec.ny;
        y_ = half;
    }
}

std::array<int, 3> StructuredGrid::node_ijk(std::size_t n) const noexcept {
    const auto nxn = static_cast<std::size_t>(nodes_x());
    const auto nyn = static_cast<std::size_t>(nodes_y());
    return {static_cast<int>(n % nxn), static_cast<int>((n / nxn) % nyn), static_cast<int>(n / (nxn * nyn))};
}

std::array<double, 3> StructuredGrid::position(std::size_t n) const noexcept {
    const auto [i, j, k] = node_ijk(n);
    return {x_[i], y_[j], z_[k]};
}

std::array<double, 2> StructuredGrid::dual_extent(const std::vector<double>& axis, int i) noexcept {
    const auto n = static_cast<int>(axis.size());
    const double lo = i > 0 ? 0.5 * (axis[i - 1] + axis[i]) : axis[i];
    const double hi = i + 1 < n ? 0.5 * (axis[i] + axis[i + 1]) : axis[i];
    return {lo, hi};
}

std::size_t StructuredGrid::nearest_node(const std::array<double, 3>& p) const noexcept {
    auto closest = [](const std::vector<double>& axis, double v) {
        int best = 0;
        for (int i = 1; i < static_cast<int>(axis.size()); ++i) {
            if (std::abs(axis[i] - v) < std::abs(axis[best] - v)) best = i;
        }
        return best;
    };
    return node(closest(x_, p[0]), closest(y_, p[1]), closest(z_, p[2]));
}

}  // namespace dedtwin
