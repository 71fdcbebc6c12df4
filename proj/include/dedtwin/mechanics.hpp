#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "dedtwin/constitutive.hpp"
#include "dedtwin/grid.hpp"
#include "dedtwin/material.hpp"
#include "dedtwin/trajectory.hpp"

namespace dedtwin {

enum class Face { x_min, x_max, y_min, y_max, z_min, z_max };

struct DofConstraint {
    std::size_t node;
    int component;  // 0 = x, 1 = y, 2 = z
};

/// Homogeneous displacement constraints.
struct MechBoundary {
    std::vector<std::pair<Face, int>> faces;
    std::vector<DofConstraint> points;

    /// Roller on the fixture plane, u_y = 0 on the symmetry plane, one corner of the
    /// fixture plane fully fixed. `roller_on_top` selects z = 0 as the fixture plane.
    static MechBoundary fixture(const StructuredGrid& grid, bool roller_on_top = false);
    /// 3-2-1 pinning that removes rigid-body motion only.
    static MechBoundary pinned(const StructuredGrid& grid);
};

struct MechConfig {
    double t_ref = 293.15;
    double newton_rel_tol = 1e-8;
    double newton_abs_tol = 1e-9;  // N
    int newton_max_iters = 25;
    double linear_tol = 1e-10;
    int linear_max_iters = 400;
    /// Refactor the preconditioner once a tangent solve needed more PCG iterations than this.
    int refactor_cg_iterations = 30;
    bool roller_on_top = false;
};

/// Per-integration-point state; eight Gauss points per element, element-major.
struct MechState {
    Eigen::VectorXd u;                          // 3 per node
    Eigen::Matrix<double, 6, Eigen::Dynamic> sigma;   // stress Voigt per point
    Eigen::Matrix<double, 6, Eigen::Dynamic> eps_pl;  // plastic strain, engineering-shear Voigt
    Eigen::VectorXd eps_pe;

    std::size_t point_count() const noexcept { return static_cast<std::size_t>(eps_pe.size()); }
};

struct NewtonStats {
    int iterations = 0;
    double residual = 0.0;
    double tolerance = 0.0;
    int plastic_points = 0;
    int linear_iterations = 0;
};

/// Small-strain trilinear-hexahedron solve of div(sigma) = 0 with thermal and
/// plastic eigenstrains; radial return at every 2x2x2 Gauss point.
class MechanicalSolver {
public:
    MechanicalSolver(const StructuredGrid& grid, const MaterialModel& material, MechConfig cfg, MechBoundary bc);
    MechanicalSolver(const StructuredGrid& grid, const MaterialModel& material, MechConfig cfg);
    ~MechanicalSolver();
    MechanicalSolver(const MechanicalSolver&) = delete;
    MechanicalSolver& operator=(const MechanicalSolver&) = delete;

    MechState initial_state() const;
    MechState solve_step(const Eigen::VectorXd& nodal_temperature, const MechState& prev,
                         NewtonStats* stats = nullptr) const;

    /// Internal nodal forces of a committed state (3 per node).
    Eigen::VectorXd internal_forces(const MechState& state) const;
    const std::vector<char>& constrained() const noexcept { return constrained_; }

    /// Nodal average of the Gauss-point stress nearest to each node, 6 Voigt components per node.
    Eigen::VectorXd nodal_stress(const MechState& state) const;

    const StructuredGrid& grid() const noexcept { return grid_; }
    std::size_t gauss_point_count() const noexcept { return grid_.cell_count() * 8; }
    int factorizations() const noexcept { return factorizations_; }

private:
    struct ElementGeometry;
    struct Assembly;
    struct GpMaterial;

    std::array<std::size_t, 8> element_nodes(std::size_t e) const;
    const ElementGeometry& geometry(std::size_t e) const;
    double assemble(const Eigen::VectorXd& u, const MechState& prev, MechState& trial, Eigen::VectorXd& residual,
                    bool with_tangent, int* plastic_points) const;
    void refactor() const;
    Eigen::VectorXd solve_tangent(const Eigen::VectorXd& rhs, NewtonStats& st) const;

    const StructuredGrid& grid_;
    const MaterialModel& material_;
    MechConfig cfg_;
    std::vector<char> constrained_;
    std::vector<ElementGeometry> geometries_;
    std::vector<std::size_t> element_geometry_;
    std::unique_ptr<Assembly> assembly_;
    mutable std::vector<GpMaterial> gp_material_;  // per-step material at each Gauss point
    mutable int factorizations_ = 0;
};

MechState solve_quasistatic_step(const Eigen::VectorXd& nodal_temperature, const MechState& prev,
                                 const StructuredGrid& grid, const MaterialModel& material,
                                 const MechConfig& cfg = {});

using MechObserver = std::function<void(std::size_t index, double time, const MechState&, const NewtonStats&)>;

struct MechanicalRun {
    FieldTrajectory stress;          // nodal, 6 components
    Eigen::VectorXd final_eps_pe;    // per Gauss point
    bool eps_pe_monotone = true;
};

MechanicalRun run_mechanical(const FieldTrajectory& temperature, const StructuredGrid& grid,
                             const MaterialModel& material, const MechConfig& cfg = {},
                             const MechObserver& observer = {});
MechanicalRun run_mechanical(const FieldTrajectory& temperature, const StructuredGrid& grid,
                             const MaterialModel& material, const MechConfig& cfg, const MechBoundary& bc,
                             const MechObserver& observer = {});

}  // namespace dedtwin
