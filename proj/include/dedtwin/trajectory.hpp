#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dedtwin/grid.hpp"

namespace dedtwin {

using Snapshots = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FieldKind : std::uint32_t {
    temperature = 0,
    stress = 1,   // 6 Voigt components per point: 11, 22, 33, 23, 13, 12
    sampled = 2,  // single-component field on a read-out point subset
    heat_source = 3,
};

/// Time-indexed field snapshots. Row t of `data` holds all points of time t,
/// point-major with `components` values per point.
struct FieldTrajectory {
    FieldKind kind = FieldKind::temperature;
    GridSpec grid;
    std::vector<double> times;
    int components = 1;
    /// Grid node ids of the stored points; empty means every grid node in order.
    std::vector<std::int64_t> points;
    Snapshots data;

    std::size_t time_count() const noexcept { return times.size(); }
    std::size_t point_count() const noexcept {
        return components > 0 ? static_cast<std::size_t>(data.cols()) / components : 0;
    }
    double at(std::size_t t, std::size_t point, int component = 0) const {
        return data(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(point * components + component));
    }
    /// Single-component view of a multi-component trajectory.
    FieldTrajectory component(int c) const;
    /// Restriction to a set of grid nodes (requires a full-grid trajectory).
    FieldTrajectory sample(const std::vector<std::int64_t>& node_ids) const;
};

constexpr std::uint32_t kDtrjVersion = 1;

void write_dtrj(std::ostream& out, const FieldTrajectory& traj);
FieldTrajectory read_dtrj(std::istream& in);
void write_dtrj(const std::filesystem::path& path, const FieldTrajectory& traj);
FieldTrajectory read_dtrj(const std::filesystem::path& path);

/// One snapshot as CSV: node id, x, y, z, then one column per component.
void export_snapshot_csv(const std::filesystem::path& path, const FieldTrajectory& traj, std::size_t time_index);

}  // namespace dedtwin
