#include "dedtwin/thermal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dedtwin/error.hpp"
#include "dedtwin/linear_solvers.hpp"

namespace dedtwin {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;

// Integral of exp(-3 u^2 / a^2) over [u0, u1].
double gauss_segment(double u0, double u1, double a) {
    const double s = kSqrt3 / a;
    return 0.5 * a * std::sqrt(std::numbers::pi / 3.0) * (std::erf(s * u1) - std::erf(s * u0));
}

}  // namespace

void ThermalConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw InvalidInput(std::string(name) + " must be positive");
    };
    positive(velocity, "thermal.velocity");
    positive(efficiency, "thermal.efficiency");
    positive(a_front, "thermal.a_front");
    positive(a_rear, "thermal.a_rear");
    positive(b, "thermal.b");
    positive(c, "thermal.c");
    positive(f_front, "thermal.f_front");
    positive(f_rear, "thermal.f_rear");
    positive(t_amb, "thermal.t_amb");
    positive(t_end, "thermal.t_end");
    positive(dt_readout, "thermal.dt_readout");
    positive(dt_solver, "thermal.dt_solver");
    positive(picard_tol, "thermal.picard_tol");
    positive(linear_tol, "thermal.linear_tol");
    if (power < 0.0) throw InvalidInput("thermal.power must be non-negative");
    if (h_conv < 0.0) throw InvalidInput("thermal.h_conv must be non-negative");
    if (picard_max_iters < 1) throw InvalidInput("thermal.picard_max_iters must be >= 1");
    if (std::abs(f_front + f_rear - 2.0) > 1e-9) throw InvalidInput("Goldak fractions must satisfy F_f + F_r = 2");
    const double per_readout = dt_readout / dt_solver;
    if (std::abs(per_readout - std::round(per_readout)) > 1e-9) {
        throw InvalidInput("thermal.dt_readout must be an integer multiple of thermal.dt_solver");
    }
    const double readouts = t_end / dt_readout;
    if (std::abs(readouts - std::round(readouts)) > 1e-9) {
        throw InvalidInput("thermal.t_end must be an integer multiple of thermal.dt_readout");
    }
}

double source_center(const ThermalConfig& cfg, double t) { return cfg.x_start + cfg.velocity * t; }

bool source_active(const ThermalConfig& cfg, double t, double block_length) {
    if (cfg.power <= 0.0) return false;
    const double end = cfg.track_end < 0.0 ? block_length : cfg.track_end;
    return source_center(cfg, t) <= end + 1e-12;
}

double goldak_power_density(const std::array<double, 3>& pos, double t, const ThermalConfig& cfg) {
    const double dx = pos[0] - source_center(cfg, t);
    const bool front = dx >= 0.0;
    const double a = front ? cfg.a_front : cfg.a_rear;
    const double f = front ? cfg.f_front : cfg.f_rear;
    const double peak = 6.0 * kSqrt3 * cfg.efficiency * cfg.power * f /
                        (a * cfg.b * cfg.c * std::numbers::pi * std::sqrt(std::numbers::pi));
    const double e = 3.0 * (dx * dx / (a * a) + pos[1] * pos[1] / (cfg.b * cfg.b) + pos[2] * pos[2] / (cfg.c * cfg.c));
    return peak * std::exp(-e);
}

double boundary_flux(double t_surf, const MaterialModel& material, const ThermalConfig& cfg) {
    check_temperature(t_surf);
    double q = -cfg.h_conv * (t_surf - cfg.t_amb);
    if (cfg.radiation) {
        const double eps = material.emissivity()(t_surf);
        const double ta = cfg.t_amb;
        q -= eps * material.constants().stefan_boltzmann * (std::pow(t_surf, 4) - std::pow(ta, 4));
    }
    return q;
}

Eigen::VectorXd control_volumes(const StructuredGrid& grid) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(grid.node_count()));
    for (int k = 0; k < grid.nodes_z(); ++k) {
        const auto ez = StructuredGrid::dual_extent(grid.z(), k);
        for (int j = 0; j < grid.nodes_y(); ++j) {
            const auto ey = StructuredGrid::dual_extent(grid.y(), j);
            for (int i = 0; i < grid.nodes_x(); ++i) {
                const auto ex = StructuredGrid::dual_extent(grid.x(), i);
                v(static_cast<Eigen::Index>(grid.node(i, j, k))) =
                    (ex[1] - ex[0]) * (ey[1] - ey[0]) * (ez[1] - ez[0]);
            }
        }
    }
    return v;
}

ThermalSolver::ThermalSolver(const StructuredGrid& grid, const MaterialModel& material, ThermalConfig cfg)
    : grid_(grid), material_(material), cfg_(cfg), block_length_(grid.spec().lx) {
    cfg_.validate();
    volume_ = control_volumes(grid_);
    const auto n = static_cast<Eigen::Index>(grid_.node_count());
    boundary_area_ = Eigen::VectorXd::Zero(n);

    const int nxn = grid_.nodes_x(), nyn = grid_.nodes_y(), nzn = grid_.nodes_z();
    for (int i = 0; i < nxn; ++i) dual_x_.push_back(StructuredGrid::dual_extent(grid_.x(), i));
    for (int j = 0; j < nyn; ++j) dual_y_.push_back(StructuredGrid::dual_extent(grid_.y(), j));
    for (int k = 0; k < nzn; ++k) dual_z_.push_back(StructuredGrid::dual_extent(grid_.z(), k));
    auto width = [](const std::array<double, 2>& e) { return e[1] - e[0]; };

    const bool symmetric = !grid_.spec().full_width;
    for (int k = 0; k < nzn; ++k) {
        for (int j = 0; j < nyn; ++j) {
            for (int i = 0; i < nxn; ++i) {
                const std::size_t id = grid_.node(i, j, k);
                const double ax = width(dual_y_[j]) * width(dual_z_[k]);
                const double ay = width(dual_x_[i]) * width(dual_z_[k]);
                const double az = width(dual_x_[i]) * width(dual_y_[j]);
                double area = 0.0;
                if (i == 0) area += ax;
                if (i == nxn - 1) area += ax;
                if (j == 0 && !symmetric) area += ay;
                if (j == nyn - 1) area += ay;
                if (k == 0) area += az;
                if (k == nzn - 1) area += az;
                boundary_area_(static_cast<Eigen::Index>(id)) = area;

                if (i + 1 < nxn) {
                    links_.push_back({id, grid_.node(i + 1, j, k), ax / (grid_.x()[i + 1] - grid_.x()[i])});
                }
                if (j + 1 < nyn) {
                    links_.push_back({id, grid_.node(i, j + 1, k), ay / (grid_.y()[j + 1] - grid_.y()[j])});
                }
                if (k + 1 < nzn) {
                    links_.push_back({id, grid_.node(i, j, k + 1), az / (grid_.z()[k + 1] - grid_.z()[k])});
                }
            }
        }
    }
}

Eigen::VectorXd ThermalSolver::ambient_field() const {
    return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(grid_.node_count()), cfg_.t_amb);
}

Eigen::VectorXd ThermalSolver::source_power(double t) const {
    const auto n = static_cast<Eigen::Index>(grid_.node_count());
    Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
    if (!source_active(cfg_, t, block_length_)) return s;
    const double xc = source_center(cfg_, t);
    const double scale =
        6.0 * kSqrt3 * cfg_.efficiency * cfg_.power / (cfg_.b * cfg_.c * std::numbers::pi * std::sqrt(std::numbers::pi));

    std::vector<double> fx(dual_x_.size()), fy(dual_y_.size()), fz(dual_z_.size());
    for (std::size_t i = 0; i < dual_x_.size(); ++i) {
        const double u0 = dual_x_[i][0] - xc, u1 = dual_x_[i][1] - xc;
        double v = 0.0;
        if (u1 > 0.0) v += cfg_.f_front / cfg_.a_front * gauss_segment(std::max(u0, 0.0), u1, cfg_.a_front);
        if (u0 < 0.0) v += cfg_.f_rear / cfg_.a_rear * gauss_segment(u0, std::min(u1, 0.0), cfg_.a_rear);
        fx[i] = v;
    }
    for (std::size_t j = 0; j < dual_y_.size(); ++j) fy[j] = gauss_segment(dual_y_[j][0], dual_y_[j][1], cfg_.b);
    for (std::size_t k = 0; k < dual_z_.size(); ++k) fz[k] = gauss_segment(dual_z_[k][0], dual_z_[k][1], cfg_.c);

    for (int k = 0; k < grid_.nodes_z(); ++k) {
        for (int j = 0; j < grid_.nodes_y(); ++j) {
            const double yz = scale * fy[j] * fz[k];
            if (yz == 0.0) continue;
            for (int i = 0; i < grid_.nodes_x(); ++i) {
                s(static_cast<Eigen::Index>(grid_.node(i, j, k))) = yz * fx[i];
            }
        }
    }
    return s;
}

Eigen::VectorXd ThermalSolver::source_density_at_nodes(double t) const {
    const auto n = static_cast<Eigen::Index>(grid_.node_count());
    Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
    if (!source_active(cfg_, t, block_length_)) return q;
    for (Eigen::Index i = 0; i < n; ++i) q(i) = goldak_power_density(grid_.position(static_cast<std::size_t>(i)), t, cfg_);
    return q;
}

double ThermalSolver::boundary_power(const Eigen::VectorXd& temperature) const {
    double p = 0.0;
    for (Eigen::Index i = 0; i < temperature.size(); ++i) {
        if (boundary_area_(i) > 0.0) p += boundary_area_(i) * boundary_flux(temperature(i), material_, cfg_);
    }
    return p;
}

Eigen::VectorXd ThermalSolver::advance(const Eigen::VectorXd& t_old, double t, double dt, StepStats* stats) const {
    const auto n = static_cast<Eigen::Index>(grid_.node_count());
    if (t_old.size() != n) throw DimensionMismatch("temperature field size does not match the grid");
    if (!(dt > 0.0)) throw InvalidInput("time step must be positive");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(t_old(i)) || t_old(i) <= 0.0) throw InvalidInput("temperature field is not finite/positive");
    }

    const Eigen::VectorXd source = source_power(t + dt);
    const double sigma_sb = material_.constants().stefan_boltzmann;
    const double ta = cfg_.t_amb;

    Eigen::VectorXd guess = t_old;
    Eigen::VectorXd diag(n), rhs(n), k_node(n), next(n);
    std::vector<double> link_coef(links_.size());
    StepStats local;
    double change = 0.0;

    for (int it = 1; it <= cfg_.picard_max_iters; ++it) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double tg = std::max(guess(i), 1.0);
            k_node(i) = material_.conductivity(tg);
            const double cap = volume_(i) * material_.secant_capacity(t_old(i), tg) / dt;
            double h_total = 0.0;
            if (boundary_area_(i) > 0.0) {
                h_total = cfg_.h_conv;
                if (cfg_.radiation) {
                    h_total += material_.emissivity()(tg) * sigma_sb * (tg * tg + ta * ta) * (tg + ta);
                }
                h_total *= boundary_area_(i);
            }
            diag(i) = cap + h_total;
            rhs(i) = cap * t_old(i) + source(i) + h_total * ta;
        }
        for (std::size_t l = 0; l < links_.size(); ++l) {
            const double ka = k_node(static_cast<Eigen::Index>(links_[l].a));
            const double kb = k_node(static_cast<Eigen::Index>(links_[l].b));
            const double g = links_[l].geometric * 2.0 * ka * kb / (ka + kb);
            link_coef[l] = g;
            diag(static_cast<Eigen::Index>(links_[l].a)) += g;
            diag(static_cast<Eigen::Index>(links_[l].b)) += g;
        }

        auto apply = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) {
            y = diag.cwiseProduct(x);
            for (std::size_t l = 0; l < links_.size(); ++l) {
                const auto a = static_cast<Eigen::Index>(links_[l].a);
                const auto b = static_cast<Eigen::Index>(links_[l].b);
                y(a) -= link_coef[l] * x(b);
                y(b) -= link_coef[l] * x(a);
            }
        };
        next = guess;
        const auto cg = conjugate_gradient(apply, diag, rhs, next, cfg_.linear_tol, 5 * static_cast<int>(n) + 100);
        local.linear_iterations += cg.iterations;
        if (!cg.converged) {
            throw LinearSolveError("thermal CG did not converge (relative residual " +
                                   std::to_string(cg.relative_residual) + ")");
        }

        change = (next - guess).cwiseAbs().maxCoeff();
        // Under-relax late iterations; the conductivity jump at the melt temperature can make
        // plain Picard cycle between two states.
        const double omega = it <= 15 ? 1.0 : (it <= 30 ? 0.5 : 0.25);
        guess += omega * (next - guess);
        local.picard_iterations = it;
        local.last_change = change;
        if (!guess.allFinite()) throw StepFailure("thermal Picard iteration produced non-finite values", it, change);
        if (change < cfg_.picard_tol) {
            if (stats) *stats = local;
            return next;
        }
    }
    if (stats) *stats = local;
    throw StepFailure("thermal Picard iteration did not converge at t=" + std::to_string(t + dt),
                      cfg_.picard_max_iters, change);
}

Eigen::VectorXd advance_step(const Eigen::VectorXd& t_old, double t, double dt, const StructuredGrid& grid,
                             const MaterialModel& material, const ThermalConfig& cfg) {
    const ThermalSolver solver(grid, material, cfg);
    return solver.advance(t_old, t, dt);
}

FieldTrajectory simulate_thermal(const StructuredGrid& grid, const MaterialModel& material, const ThermalConfig& cfg,
                                 const ThermalObserver& observer) {
    const ThermalSolver solver(grid, material, cfg);
    const auto readouts = static_cast<std::size_t>(std::llround(cfg.t_end / cfg.dt_readout));
    const auto substeps = static_cast<std::size_t>(std::llround(cfg.dt_readout / cfg.dt_solver));
    const double dt = cfg.dt_readout / static_cast<double>(substeps);

    FieldTrajectory traj;
    traj.kind = FieldKind::temperature;
    traj.grid = grid.spec();
    traj.components = 1;
    traj.data.resize(static_cast<Eigen::Index>(readouts + 1), static_cast<Eigen::Index>(grid.node_count()));

    Eigen::VectorXd field = solver.ambient_field();
    traj.times.push_back(0.0);
    traj.data.row(0) = field.transpose();
    if (observer) observer(0, 0.0, field);
    for (std::size_t r = 1; r <= readouts; ++r) {
        const double t0 = static_cast<double>(r - 1) * cfg.dt_readout;
        for (std::size_t s = 0; s < substeps; ++s) {
            field = solver.advance(field, t0 + static_cast<double>(s) * dt, dt);
        }
        const double tr = static_cast<double>(r) * cfg.dt_readout;
        traj.times.push_back(tr);
        traj.data.row(static_cast<Eigen::Index>(r)) = field.transpose();
        if (observer) observer(r, tr, field);
    }
    return traj;
}

double total_energy(const Eigen::VectorXd& temperature, const StructuredGrid& grid, const MaterialModel& material,
                    double t_amb) {
    const Eigen::VectorXd v = control_volumes(grid);
    if (temperature.size() != v.size()) throw DimensionMismatch("temperature field size does not match the grid");
    double e = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double t = temperature(i);
        e += material.density()(t) * material.heat_capacity()(t) * (t - t_amb) * v(i);
    }
    return e;
}

double total_enthalpy(const Eigen::VectorXd& temperature, const StructuredGrid& grid, const MaterialModel& material) {
    const Eigen::VectorXd v = control_volumes(grid);
    if (temperature.size() != v.size()) throw DimensionMismatch("temperature field size does not match the grid");
    double e = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) e += material.volumetric_enthalpy(temperature(i)) * v(i);
    return e;
}

}  // namespace dedtwin
