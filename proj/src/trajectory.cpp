#include "dedtwin/trajectory.hpp"

#include <fstream>
#include <iomanip>

#include "dedtwin/binary_io.hpp"
#include "dedtwin/error.hpp"

namespace dedtwin {

FieldTrajectory FieldTrajectory::component(int c) const {
    if (c < 0 || c >= components) throw InvalidInput("component index out of range");
    FieldTrajectory out;
    out.kind = kind;
    out.grid = grid;
    out.times = times;
    out.points = points;
    out.components = 1;
    const auto np = static_cast<Eigen::Index>(point_count());
    out.data.resize(data.rows(), np);
    for (Eigen::Index t = 0; t < data.rows(); ++t) {
        for (Eigen::Index p = 0; p < np; ++p) out.data(t, p) = data(t, p * components + c);
    }
    return out;
}

FieldTrajectory FieldTrajectory::sample(const std::vector<std::int64_t>& node_ids) const {
    if (!points.empty()) throw InvalidInput("sample() needs a full-grid trajectory");
    FieldTrajectory out;
    out.kind = kind;
    out.grid = grid;
    out.times = times;
    out.components = components;
    out.points = node_ids;
    out.data.resize(data.rows(), static_cast<Eigen::Index>(node_ids.size()) * components);
    const auto np = static_cast<std::int64_t>(point_count());
    for (std::size_t p = 0; p < node_ids.size(); ++p) {
        if (node_ids[p] < 0 || node_ids[p] >= np) throw InvalidInput("sample point outside the grid");
        for (int c = 0; c < components; ++c) {
            out.data.col(static_cast<Eigen::Index>(p) * components + c) =
                data.col(static_cast<Eigen::Index>(node_ids[p]) * components + c);
        }
    }
    return out;
}

void write_dtrj(std::ostream& out, const FieldTrajectory& traj) {
    if (static_cast<std::size_t>(traj.data.rows()) != traj.times.size()) {
        throw InvalidInput("trajectory row count does not match time count");
    }
    bin::put_magic(out, "DTRJ");
    bin::put<std::uint32_t>(out, kDtrjVersion);
    bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(traj.kind));
    bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(traj.grid.nx));
    bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(traj.grid.ny));
    bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(traj.grid.nz));
    bin::put<double>(out, traj.grid.lx);
    bin::put<double>(out, traj.grid.ly);
    bin::put<double>(out, traj.grid.lz);
    bin::put<double>(out, traj.grid.grading_y);
    bin::put<double>(out, traj.grid.grading_z);
    bin::put<std::uint32_t>(out, traj.grid.full_width ? 1u : 0u);
    bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(traj.components));
    bin::put<std::uint64_t>(out, traj.point_count());
    bin::put<std::uint64_t>(out, traj.times.size());
    bin::put<std::uint64_t>(out, traj.points.size());
    for (auto id : traj.points) bin::put<std::int64_t>(out, id);
    bin::put_doubles(out, traj.times);
    for (Eigen::Index t = 0; t < traj.data.rows(); ++t) {
        for (Eigen::Index c = 0; c < traj.data.cols(); ++c) bin::put<double>(out, traj.data(t, c));
    }
    if (!out) throw InvalidInput("failed writing DTRJ stream");
}

FieldTrajectory read_dtrj(std::istream& in) {
    bin::expect_magic(in, "DTRJ");
    const auto version = bin::get<std::uint32_t>(in);
    if (version != kDtrjVersion) throw FormatError("unsupported DTRJ version " + std::to_string(version));
    FieldTrajectory traj;
    traj.kind = static_cast<FieldKind>(bin::get<std::uint32_t>(in));
    traj.grid.nx = static_cast<int>(bin::get<std::uint32_t>(in));
    traj.grid.ny = static_cast<int>(bin::get<std::uint32_t>(in));
    traj.grid.nz = static_cast<int>(bin::get<std::uint32_t>(in));
    traj.grid.lx = bin::get<double>(in);
    traj.grid.ly = bin::get<double>(in);
    traj.grid.lz = bin::get<double>(in);
    traj.grid.grading_y = bin::get<double>(in);
    traj.grid.grading_z = bin::get<double>(in);
    traj.grid.full_width = bin::get<std::uint32_t>(in) != 0;
    traj.components = static_cast<int>(bin::get<std::uint32_t>(in));
    const auto n_points = bin::get<std::uint64_t>(in);
    const auto n_times = bin::get<std::uint64_t>(in);
    const auto n_ids = bin::get<std::uint64_t>(in);
    if (traj.components < 1 || (n_ids != 0 && n_ids != n_points)) throw FormatError("inconsistent DTRJ header");
    traj.points.resize(n_ids);
    for (auto& id : traj.points) id = bin::get<std::int64_t>(in);
    traj.times.resize(n_times);
    for (auto& t : traj.times) t = bin::get<double>(in);
    traj.data.resize(static_cast<Eigen::Index>(n_times), static_cast<Eigen::Index>(n_points) * traj.components);
    for (Eigen::Index t = 0; t < traj.data.rows(); ++t) {
        for (Eigen::Index c = 0; c < traj.data.cols(); ++c) traj.data(t, c) = bin::get<double>(in);
    }
    return traj;
}

void write_dtrj(const std::filesystem::path& path, const FieldTrajectory& traj) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    write_dtrj(out, traj);
}

FieldTrajectory read_dtrj(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("cannot open trajectory " + path.string());
    return read_dtrj(in);
}

void export_snapshot_csv(const std::filesystem::path& path, const FieldTrajectory& traj, std::size_t time_index) {
    if (time_index >= traj.time_count()) throw InvalidInput("time index out of range");
    const StructuredGrid grid(traj.grid);
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << "node,x,y,z";
    for (int c = 0; c < traj.components; ++c) out << ",v" << c;
    out << '\n' << std::setprecision(12);
    for (std::size_t p = 0; p < traj.point_count(); ++p) {
        const auto node = traj.points.empty() ? p : static_cast<std::size_t>(traj.points[p]);
        const auto pos = grid.position(node);
        out << node << ',' << pos[0] << ',' << pos[1] << ',' << pos[2];
        for (int c = 0; c < traj.components; ++c) out << ',' << traj.at(time_index, p, c);
        out << '\n';
    }
}

}  // namespace dedtwin
