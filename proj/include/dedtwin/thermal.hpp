#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <optional>

#include "dedtwin/grid.hpp"
#include "dedtwin/material.hpp"
#include "dedtwin/trajectory.hpp"

namespace dedtwin {

struct ThermalConfig {
    // Goldak double-ellipsoid source
    double power = 1000.0;        // W
    double velocity = 0.015;      // m/s
    double efficiency = 0.4;
    double a_front = 0.003;       // m
    double a_rear = 0.008;
    double b = 0.003;
    double c = 0.003;
    double f_front = 0.67;
    double f_rear = 1.33;
    double x_start = 0.0;         // source centre at t = 0
    /// Source switches off once its centre passes this x; negative means the block length.
    double track_end = -1.0;

    double h_conv = 10.0;         // W/(m^2 K)
    double t_amb = 293.15;        // K
    bool radiation = true;

    double t_end = 20.0;
    double dt_readout = 0.1;
    double dt_solver = 0.02;
    double picard_tol = 1e-3;     // K
    int picard_max_iters = 60;
    double linear_tol = 1e-9;

    void validate() const;
};

/// Centre of the source along x at time t.
double source_center(const ThermalConfig& cfg, double t);
bool source_active(const ThermalConfig& cfg, double t, double block_length);

/// Goldak power density in W/m^3 at a point, assuming the source is switched on.
double goldak_power_density(const std::array<double, 3>& pos, double t, const ThermalConfig& cfg);

/// Net convective plus radiative flux into the body, W/m^2.
double boundary_flux(double t_surf, const MaterialModel& material, const ThermalConfig& cfg);

struct StepStats {
    int picard_iterations = 0;
    double last_change = 0.0;
    int linear_iterations = 0;
};

/// Node-centred finite-volume discretisation of the transient heat equation.
/// Control volumes are the dual boxes of the structured grid; the plane y = 0
/// is adiabatic unless the grid is full width.
class ThermalSolver {
public:
    ThermalSolver(const StructuredGrid& grid, const MaterialModel& material, ThermalConfig cfg);

    const StructuredGrid& grid() const noexcept { return grid_; }
    const ThermalConfig& config() const noexcept { return cfg_; }
    const MaterialModel& material() const noexcept { return material_; }

    Eigen::VectorXd ambient_field() const;
    /// Control-volume power in W from the source at time t (exact integral over each dual box).
    Eigen::VectorXd source_power(double t) const;
    /// Point values of the power density at the nodes, W/m^3.
    Eigen::VectorXd source_density_at_nodes(double t) const;
    /// Total boundary heat inflow in W for a nodal field.
    double boundary_power(const Eigen::VectorXd& temperature) const;

    /// One backward-Euler step from t to t + dt.
    Eigen::VectorXd advance(const Eigen::VectorXd& t_old, double t, double dt, StepStats* stats = nullptr) const;

    const Eigen::VectorXd& volumes() const noexcept { return volume_; }
    const Eigen::VectorXd& boundary_areas() const noexcept { return boundary_area_; }

private:
    struct Link {
        std::size_t a, b;
        double geometric;  // face area / centre distance
    };

    const StructuredGrid& grid_;
    const MaterialModel& material_;
    ThermalConfig cfg_;
    double block_length_;
    Eigen::VectorXd volume_;
    Eigen::VectorXd boundary_area_;
    std::vector<Link> links_;
    // Per-axis Gaussian integrals of the dual boxes used by source_power.
    std::vector<std::array<double, 2>> dual_x_, dual_y_, dual_z_;
};

Eigen::VectorXd advance_step(const Eigen::VectorXd& t_old, double t, double dt, const StructuredGrid& grid,
                             const MaterialModel& material, const ThermalConfig& cfg);

using ThermalObserver = std::function<void(std::size_t readout_index, double time, const Eigen::VectorXd&)>;

/// Integrates from a uniform ambient field and records every dt_readout.
FieldTrajectory simulate_thermal(const StructuredGrid& grid, const MaterialModel& material, const ThermalConfig& cfg,
                                 const ThermalObserver& observer = {});

/// Sensible energy relative to ambient: sum of rho c_p (T - T_amb) V over control volumes.
double total_energy(const Eigen::VectorXd& temperature, const StructuredGrid& grid, const MaterialModel& material,
                    double t_amb);
/// Volumetric enthalpy (latent heat included) integrated over the control volumes.
double total_enthalpy(const Eigen::VectorXd& temperature, const StructuredGrid& grid, const MaterialModel& material);

Eigen::VectorXd control_volumes(const StructuredGrid& grid);

}  // namespace dedtwin
