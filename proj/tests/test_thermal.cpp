#include <doctest.h>

#include <cmath>
#include <random>

#include "dedtwin/error.hpp"
#include "dedtwin/nn.hpp"
#include "dedtwin/thermal.hpp"

using namespace dedtwin;

namespace {

const MaterialModel& alloy() {
    static const MaterialModel m = MaterialModel::inconel718();
    return m;
}

PropertyTable flat(const char* name, double v) { return PropertyTable(name, {100.0, 6000.0}, {v, v}); }

// Constant properties, melt range far above the test temperatures.
MaterialModel constant_material(double k, double rho, double cp) {
    MaterialConstants c;
    c.k_coeffs = {k, 0.0, 0.0};
    c.solidus = 5000.0;
    c.liquidus = 5100.0;
    return MaterialModel(flat("cp", cp), flat("rho", rho), flat("eps", 0.5), flat("E", 2e11), flat("sy", 1e9),
                         flat("alpha", 1e-5), c);
}

ThermalConfig insulated() {
    ThermalConfig cfg;
    cfg.power = 0.0;
    cfg.h_conv = 0.0;
    cfg.radiation = false;
    return cfg;
}

double goldak_peak() { return 6.0 * std::sqrt(3.0) * 0.4 * 1000.0 * 0.67 / (0.003 * 0.003 * 0.003 * std::pow(M_PI, 1.5)); }

}  // namespace

TEST_SUITE("thermal") {
    TEST_CASE("Goldak peak density at the centre") {
        ThermalConfig cfg;
        CHECK(goldak_peak() == doctest::Approx(1.8526e10).epsilon(1e-4));
        CHECK(goldak_power_density({0.0, 0.0, 0.0}, 0.0, cfg) == doctest::Approx(goldak_peak()).epsilon(1e-12));
        CHECK(goldak_power_density({0.0, 1.0, 0.0}, 0.0, cfg) == 0.0);
        // rear branch behind the centre
        const double rear = 6.0 * std::sqrt(3.0) * 0.4 * 1000.0 * 1.33 / (0.008 * 0.003 * 0.003 * std::pow(M_PI, 1.5)) *
                            std::exp(-3.0 * 0.001 * 0.001 / (0.008 * 0.008));
        CHECK(goldak_power_density({0.0, 0.0, 0.0}, 1.0 / 15.0, cfg) == doctest::Approx(rear).epsilon(1e-12));
        CHECK(source_center(cfg, 2.0) == doctest::Approx(0.03));
        CHECK(source_active(cfg, 3.3, 0.05));
        CHECK_FALSE(source_active(cfg, 3.4, 0.05));
    }

    TEST_CASE("Goldak volume integral over the body half-space is eta P") {
        ThermalConfig cfg;
        const double t = 1.0;
        const double xc = source_center(cfg, t);
        // midpoint rule over x in xc +- 10 a_r, y in +-10 b, z in [0, 10 c]
        const int nx = 400, ny = 120, nz = 60;
        const double x0 = xc - 10 * cfg.a_rear, x1 = xc + 10 * cfg.a_rear;
        const double hx = (x1 - x0) / nx, hy = 20 * cfg.b / ny, hz = 10 * cfg.c / nz;
        double sum = 0.0;
        for (int i = 0; i < nx; ++i)
            for (int j = 0; j < ny; ++j)
                for (int k = 0; k < nz; ++k)
                    sum += goldak_power_density({x0 + (i + 0.5) * hx, -10 * cfg.b + (j + 0.5) * hy, (k + 0.5) * hz}, t,
                                                cfg);
        CHECK(sum * hx * hy * hz == doctest::Approx(400.0).epsilon(1e-2));
    }

    TEST_CASE("control-volume source integrates exactly on the half model") {
        const StructuredGrid grid(GridSpec{});
        ThermalConfig cfg;
        const ThermalSolver solver(grid, alloy(), cfg);
        CHECK(solver.source_power(0.025 / 0.015).sum() == doctest::Approx(200.0).epsilon(1e-6));
        CHECK(solver.source_power(4.0).sum() == 0.0);
        CHECK_THROWS_AS([] { ThermalConfig c; c.f_front = 1.0; c.validate(); }(), InvalidInput);
    }

    TEST_CASE("boundary flux") {
        ThermalConfig cfg;
        CHECK(boundary_flux(cfg.t_amb, alloy(), cfg) == doctest::Approx(0.0).scale(1.0));
        const double t = 1000.0;
        const double eps = alloy().emissivity()(t);
        const double expected = -(10.0 * (t - 293.15) + eps * 5.670374419e-8 * (std::pow(t, 4) - std::pow(293.15, 4)));
        CHECK(boundary_flux(t, alloy(), cfg) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(-expected == doctest::Approx(7068.5 + 3.02e4).epsilon(1e-2));
        CHECK(boundary_flux(250.0, alloy(), cfg) > 0.0);
    }

    TEST_CASE("equilibrium is a fixed point") {
        const StructuredGrid grid(GridSpec{10, 4, 4, 0.01, 0.004, 0.004});
        const ThermalConfig cfg = insulated();
        const Eigen::VectorXd t0 = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(grid.node_count()), cfg.t_amb);
        const Eigen::VectorXd t1 = advance_step(t0, 0.0, 0.02, grid, alloy(), cfg);
        CHECK((t1 - t0).cwiseAbs().maxCoeff() == 0.0);
    }

    TEST_CASE("rod decay matches the analytic cosine mode") {
        const double k = 10.0, rho = 8000.0, cp = 500.0, L = 0.05;
        const MaterialModel mat = constant_material(k, rho, cp);
        const StructuredGrid grid(GridSpec{50, 2, 2, L, 0.002, 0.002});
        ThermalConfig cfg = insulated();
        const ThermalSolver solver(grid, mat, cfg);
        const Eigen::Index n = static_cast<Eigen::Index>(grid.node_count());
        Eigen::VectorXd t(n), mode(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            mode(i) = std::cos(M_PI * grid.position(static_cast<std::size_t>(i))[0] / L);
            t(i) = 400.0 + 50.0 * mode(i);
        }
        const double dt = 0.02;
        const int steps = 1000;
        for (int s = 0; s < steps; ++s) t = solver.advance(t, s * dt, dt);
        const double amp = (t.array() - 400.0).matrix().dot(mode) / mode.squaredNorm();
        const double kappa = k / (rho * cp);
        const double exact = 50.0 * std::exp(-kappa * M_PI * M_PI / (L * L) * steps * dt);
        CHECK(amp == doctest::Approx(exact).epsilon(1e-2));
    }

    TEST_CASE("insulated runs conserve enthalpy and obey the maximum principle") {
        const StructuredGrid grid(GridSpec{12, 4, 4, 0.012, 0.004, 0.004});
        const ThermalConfig cfg = insulated();
        const ThermalSolver solver(grid, alloy(), cfg);
        std::mt19937_64 rng(21);
        Eigen::VectorXd t(static_cast<Eigen::Index>(grid.node_count()));
        for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = 300.0 + 500.0 * uniform01(rng);
        const double h0 = total_enthalpy(t, grid, alloy());
        double lo = t.minCoeff(), hi = t.maxCoeff();
        for (int s = 0; s < 50; ++s) {
            t = solver.advance(t, s * 0.02, 0.02);
            CHECK(t.minCoeff() >= lo - 1e-3);
            CHECK(t.maxCoeff() <= hi + 1e-3);
            lo = t.minCoeff();
            hi = t.maxCoeff();
        }
        CHECK(total_enthalpy(t, grid, alloy()) == doctest::Approx(h0).epsilon(1e-6));
    }

    TEST_CASE("step energy balance with source and boundary exchange") {
        const StructuredGrid grid(GridSpec{});
        ThermalConfig cfg;
        const ThermalSolver solver(grid, alloy(), cfg);
        Eigen::VectorXd t = solver.ambient_field();
        for (int s = 0; s < 10; ++s) t = solver.advance(t, s * 0.02, 0.02);
        const double dt = 0.02, time = 10 * dt;
        const Eigen::VectorXd next = solver.advance(t, time, dt);
        const double change = total_enthalpy(next, grid, alloy()) - total_enthalpy(t, grid, alloy());
        const double input = dt * (solver.source_power(time + dt).sum() + solver.boundary_power(next));
        CHECK(change == doctest::Approx(input).epsilon(5e-3));
    }

    TEST_CASE("half model equals the full-width solution restricted to y >= 0") {
        GridSpec half{8, 3, 3, 0.008, 0.003, 0.003};
        GridSpec full = half;
        full.full_width = true;
        const StructuredGrid gh(half), gf(full);
        ThermalConfig cfg;
        cfg.velocity = 0.004 / 0.5;
        cfg.t_end = 0.5;
        cfg.dt_readout = 0.1;
        cfg.picard_tol = 1e-8;
        const FieldTrajectory th = simulate_thermal(gh, alloy(), cfg);
        const FieldTrajectory tf = simulate_thermal(gf, alloy(), cfg);
        double worst = 0.0;
        for (std::size_t n = 0; n < gh.node_count(); ++n) {
            const std::size_t m = gf.nearest_node(gh.position(n));
            for (std::size_t k = 0; k < th.time_count(); ++k) worst = std::max(worst, std::abs(th.at(k, n) - tf.at(k, m)));
        }
        CHECK(worst < 1e-5);
    }

    TEST_CASE("trajectory read-out arithmetic") {
        const StructuredGrid grid(GridSpec{10, 2, 2});
        ThermalConfig cfg;
        cfg.dt_solver = 0.1;
        const FieldTrajectory tr = simulate_thermal(grid, alloy(), cfg);
        CHECK(tr.time_count() == 201);
        CHECK(tr.times.back() == doctest::Approx(20.0));
        CHECK((tr.data.row(0).array() == 293.15).all());
        for (std::size_t k = 1; k < tr.time_count(); ++k) CHECK(tr.times[k] - tr.times[k - 1] == doctest::Approx(0.1));
        CHECK(tr.data.allFinite());
    }

    TEST_CASE("total energy oracle and monotonicity") {
        const StructuredGrid grid(GridSpec{});
        const auto n = static_cast<Eigen::Index>(grid.node_count());
        CHECK(total_energy(Eigen::VectorXd::Constant(n, 293.15), grid, alloy(), 293.15) == 0.0);
        const double t = 294.15;
        const double expected = alloy().density()(t) * alloy().heat_capacity()(t) * 0.05 * 0.01 * 0.01;
        CHECK(total_energy(Eigen::VectorXd::Constant(n, t), grid, alloy(), 293.15) ==
              doctest::Approx(expected).epsilon(1e-12));
        std::mt19937_64 rng(8);
        Eigen::VectorXd a(n);
        for (Eigen::Index i = 0; i < n; ++i) a(i) = 300.0 + 400.0 * uniform01(rng);
        Eigen::VectorXd b = a;
        b(n / 2) += 5.0;
        CHECK(total_energy(b, grid, alloy(), 293.15) > total_energy(a, grid, alloy(), 293.15));
    }

    TEST_CASE("Picard failure carries diagnostics") {
        const StructuredGrid grid(GridSpec{10, 4, 4, 0.01, 0.004, 0.004});
        ThermalConfig cfg;
        cfg.picard_max_iters = 1;
        cfg.picard_tol = 1e-12;
        const ThermalSolver solver(grid, alloy(), cfg);
        try {
            solver.advance(solver.ambient_field(), 0.0, 0.02);
            FAIL("expected a step failure");
        } catch (const StepFailure& e) {
            CHECK(e.iterations() == 1);
            CHECK(e.last_change() > 0.0);
        }
    }
}
