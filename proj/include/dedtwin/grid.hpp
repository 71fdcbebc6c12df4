#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace dedtwin {

/// Axis convention: x runs along the track, y is lateral with the symmetry
/// plane at y = 0, z is depth measured downward from the heated top face.
struct GridSpec {
    int nx = 50;
    int ny = 10;
    int nz = 10;
    double lx = 0.05;
    double ly = 0.01;
    double lz = 0.01;
    /// Geometric ratio between consecutive cell widths moving away from y = 0 and z = 0.
    double grading_y = 1.0;
    double grading_z = 1.0;
    /// Mirror the y axis to cover [-ly, ly]; used to check the half-model symmetry reduction.
    bool full_width = false;

    bool operator==(const GridSpec&) const = default;
};

class StructuredGrid {
public:
    explicit StructuredGrid(const GridSpec& spec);

    const GridSpec& spec() const noexcept { return spec_; }
    int nx() const noexcept { return spec_.nx; }
    int ny() const noexcept { return cells_y_; }
    int nz() const noexcept { return spec_.nz; }
    int nodes_x() const noexcept { return spec_.nx + 1; }
    int nodes_y() const noexcept { return cells_y_ + 1; }
    int nodes_z() const noexcept { return spec_.nz + 1; }
    std::size_t node_count() const noexcept {
        return static_cast<std::size_t>(nodes_x()) * nodes_y() * nodes_z();
    }
    std::size_t cell_count() const noexcept { return static_cast<std::size_t>(nx()) * ny() * nz(); }

    std::size_t node(int i, int j, int k) const noexcept {
        return (static_cast<std::size_t>(k) * nodes_y() + j) * nodes_x() + i;
    }
    std::array<int, 3> node_ijk(std::size_t n) const noexcept;
    std::array<double, 3> position(std::size_t n) const noexcept;

    const std::vector<double>& x() const noexcept { return x_; }
    const std::vector<double>& y() const noexcept { return y_; }
    const std::vector<double>& z() const noexcept { return z_; }

    /// Extent of the node-centred control volume along one axis: [left edge, right edge].
    static std::array<double, 2> dual_extent(const std::vector<double>& axis, int i) noexcept;

    /// Closest node to a physical point.
    std::size_t nearest_node(const std::array<double, 3>& p) const noexcept;

private:
    GridSpec spec_;
    int cells_y_;
    std::vector<double> x_, y_, z_;
};

std::vector<double> graded_axis(int cells, double length, double ratio);

}  // namespace dedtwin
