#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "dedtwin/error.hpp"
#include "dedtwin/material.hpp"
#include "dedtwin/nn.hpp"

using namespace dedtwin;

namespace {

const MaterialModel& alloy() {
    static const MaterialModel m = MaterialModel::inconel718();
    return m;
}

double polynomial_k(double t) { return 0.56 + 2.9e-2 * t - 7e-6 * t * t; }

}  // namespace

TEST_SUITE("material") {
    TEST_CASE("table values are reproduced at the knots") {
        CHECK(alloy().heat_capacity()(298.0) == doctest::Approx(435.0).epsilon(1e-14));
        CHECK(alloy().yield_table()(873.0) == doctest::Approx(965e6).epsilon(1e-14));
        for (const PropertyTable* t : {&alloy().heat_capacity(), &alloy().density(), &alloy().emissivity(),
                                       &alloy().youngs_modulus(), &alloy().yield_table(), &alloy().expansion()}) {
            for (std::size_t i = 0; i < t->breakpoints().size(); ++i) {
                CHECK(std::abs((*t)(t->breakpoints()[i]) - t->values()[i]) <= 1e-12 * std::abs(t->values()[i]));
            }
        }
    }

    TEST_CASE("constant extrapolation outside the table") {
        CHECK(alloy().density()(5000.0) == doctest::Approx(7160.0));
        CHECK(alloy().density()(100.0) == doctest::Approx(8190.0));
        // c_p rows stop at 1609 K
        CHECK(alloy().heat_capacity()(1873.0) == doctest::Approx(720.0));
        CHECK(alloy().heat_capacity().breakpoints().size() == 14);
    }

    TEST_CASE("natural cubic spline matches a hand-solved three-point case") {
        // knots (0,0) (1,1) (2,0): M1 = -3, S(0.5) = 0.75 - 0.0625
        const PropertyTable t("hat", {0.0001, 1.0001, 2.0001}, {0.0, 1.0, 0.0});
        CHECK(t(0.5001) == doctest::Approx(0.6875).epsilon(1e-12));
        CHECK(t(1.5001) == doctest::Approx(0.6875).epsilon(1e-12));
        CHECK(t.derivative(1.0001) == doctest::Approx(0.0).scale(1.0));
    }

    TEST_CASE("spline is C1 at interior knots and C0 at the ends") {
        const auto& t = alloy().heat_capacity();
        const double h = 1e-5;
        for (std::size_t i = 1; i + 1 < t.breakpoints().size(); ++i) {
            const double x = t.breakpoints()[i];
            const double left = (t(x) - t(x - h)) / h;
            const double right = (t(x + h) - t(x)) / h;
            CHECK(std::abs(left - right) < 1e-2 * std::max(1.0, std::abs(left)));
        }
        const double last = t.breakpoints().back();
        CHECK(std::abs(t(last + 1e-9) - t(last)) < 1e-9);
    }

    TEST_CASE("conductivity polynomial and Marangoni jump") {
        CHECK(alloy().conductivity(298.0) == doctest::Approx(8.580372).epsilon(1e-12));
        CHECK(alloy().conductivity(1700.0) == doctest::Approx(2.5 * polynomial_k(1700.0)).epsilon(1e-12));
        CHECK(alloy().conductivity(1700.0) == doctest::Approx(74.075).epsilon(1e-12));
        const double tm = alloy().melting_temperature();
        CHECK(tm == doctest::Approx(1571.0));
        CHECK(alloy().conductivity(tm) == doctest::Approx(polynomial_k(tm)).epsilon(1e-14));
        const double above = alloy().conductivity(std::nextafter(tm, 1e9));
        CHECK(above / alloy().conductivity(tm) == doctest::Approx(2.5).epsilon(1e-9));
    }

    TEST_CASE("latent heat bump: peak, tail, symmetry, integral") {
        const double tm = alloy().melting_temperature();
        const double dT = 76.0;
        const double peak = 230e3 / (std::sqrt(M_PI) * dT);
        CHECK(peak == doctest::Approx(1707.4).epsilon(1e-4));
        CHECK(alloy().effective_heat_capacity(tm) - alloy().heat_capacity()(tm) == doctest::Approx(peak).epsilon(1e-12));
        CHECK(alloy().effective_heat_capacity(298.0) - 435.0 < 1e-6);
        CHECK(alloy().effective_heat_capacity(298.0) - 435.0 >= 0.0);
        std::mt19937_64 rng(11);
        for (int i = 0; i < 50; ++i) {
            const double d = 300.0 * uniform01(rng);
            CHECK(alloy().latent_heat_term(tm + d) == doctest::Approx(alloy().latent_heat_term(tm - d)).epsilon(1e-12));
        }
        // composite Simpson over +-6 dT
        const int n = 2000;
        const double a = tm - 6 * dT, b = tm + 6 * dT, h = (b - a) / n;
        double s = alloy().latent_heat_term(a) + alloy().latent_heat_term(b);
        for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * alloy().latent_heat_term(a + i * h);
        CHECK(s * h / 3.0 == doctest::Approx(230e3).epsilon(1e-3));
    }

    TEST_CASE("printed melt formula is available behind a switch") {
        MaterialConstants c;
        c.melt_rule = MeltTemperatureRule::half_range;
        const MaterialModel m(alloy().heat_capacity(), alloy().density(), alloy().emissivity(), alloy().youngs_modulus(),
                              alloy().yield_table(), alloy().expansion(), c);
        CHECK(m.melting_temperature() == doctest::Approx(38.0));
    }

    TEST_CASE("invalid inputs are rejected") {
        CHECK_THROWS_AS(alloy().heat_capacity()(std::nan("")), InvalidInput);
        CHECK_THROWS_AS(alloy().conductivity(-1.0), InvalidInput);
        CHECK_THROWS_AS(PropertyTable("x", {1.0, 1.0}, {2.0, 3.0}), InvalidInput);
        CHECK_THROWS_AS(PropertyTable("x", {1.0}, {2.0}), InvalidInput);
        MaterialConstants c;
        c.solidus = 1700.0;
        CHECK_THROWS_AS(MaterialModel(alloy().heat_capacity(), alloy().density(), alloy().emissivity(),
                                      alloy().youngs_modulus(), alloy().yield_table(), alloy().expansion(), c),
                        InvalidInput);
    }

    TEST_CASE("shipped material file equals the built-in data") {
        const MaterialModel file = MaterialModel::load(std::filesystem::path(DEDTWIN_DATA_DIR) / "inconel718.mat");
        std::mt19937_64 rng(5);
        for (int i = 0; i < 200; ++i) {
            const double t = 250.0 + 1800.0 * uniform01(rng);
            CHECK(file.effective_heat_capacity(t) == doctest::Approx(alloy().effective_heat_capacity(t)).epsilon(1e-14));
            CHECK(file.young(t) == doctest::Approx(alloy().young(t)).epsilon(1e-14));
            CHECK(file.yield_stress(t) == doctest::Approx(alloy().yield_stress(t)).epsilon(1e-14));
            CHECK(file.alpha(t) == doctest::Approx(alloy().alpha(t)).epsilon(1e-14));
            CHECK(file.emissivity()(t) == doctest::Approx(alloy().emissivity()(t)).epsilon(1e-14));
        }
    }

    TEST_CASE("save and parse round trip") {
        const auto path = std::filesystem::temp_directory_path() / "dedtwin_material_roundtrip.mat";
        alloy().save(path);
        const MaterialModel back = MaterialModel::load(path);
        for (double t : {300.0, 777.0, 1571.0, 1650.0}) CHECK(back.density()(t) == doctest::Approx(alloy().density()(t)));
        std::filesystem::remove(path);
        std::istringstream bad("k0 = 0.5\n[property cp]\n298, 435\n");
        CHECK_THROWS_AS(MaterialModel::parse(bad), FormatError);
    }

    TEST_CASE("yield stress floor and enthalpy secant") {
        CHECK(alloy().yield_stress(1700.0) == doctest::Approx(1e6));
        CHECK(alloy().yield_stress(1533.0) == doctest::Approx(25e6));
        std::mt19937_64 rng(3);
        for (int i = 0; i < 30; ++i) {
            const double a = 300.0 + 1500.0 * uniform01(rng), b = 300.0 + 1500.0 * uniform01(rng);
            const double sec = alloy().secant_capacity(a, b);
            CHECK(sec * (b - a) == doctest::Approx(alloy().volumetric_enthalpy(b) - alloy().volumetric_enthalpy(a))
                                       .epsilon(1e-9));
        }
    }
}
