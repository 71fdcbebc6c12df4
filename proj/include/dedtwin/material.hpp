#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dedtwin {

/// Temperature-dependent property: natural cubic spline through the table rows,
/// held constant beyond the first and last breakpoint.
class PropertyTable {
public:
    PropertyTable() = default;
    PropertyTable(std::string name, std::vector<double> breakpoints, std::vector<double> values);

    double operator()(double temperature) const;
    double derivative(double temperature) const;

    const std::string& name() const noexcept { return name_; }
    const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
    const std::vector<double>& values() const noexcept { return values_; }

private:
    std::size_t segment(double temperature) const;

    std::string name_;
    std::vector<double> breakpoints_;
    std::vector<double> values_;
    std::vector<double> second_derivs_;
};

enum class MeltTemperatureRule {
    midpoint,    // (T_s + T_l) / 2
    half_range,  // (T_l - T_s) / 2, the formula as printed
};

struct MaterialConstants {
    std::array<double, 3> k_coeffs{0.56, 2.9e-2, -7e-6};
    double latent_heat = 230e3;
    double solidus = 1533.0;
    double liquidus = 1609.0;
    double marangoni_factor = 2.5;
    double poisson = 0.28;
    double hardening_modulus = 2e9;
    double stefan_boltzmann = 5.670374419e-8;
    double yield_floor = 1e6;
    MeltTemperatureRule melt_rule = MeltTemperatureRule::midpoint;
};

/// Thermo-mechanical data of the deposited alloy. Immutable after construction.
class MaterialModel {
public:
    MaterialModel(PropertyTable heat_capacity, PropertyTable density, PropertyTable emissivity,
                  PropertyTable youngs_modulus, PropertyTable yield_stress, PropertyTable expansion,
                  MaterialConstants constants);

    /// Built-in Inconel 718 data set.
    static MaterialModel inconel718();
    static MaterialModel load(const std::filesystem::path& path);
    static MaterialModel parse(std::istream& in, const std::string& source = "<stream>");
    void save(const std::filesystem::path& path) const;

    const PropertyTable& heat_capacity() const noexcept { return cp_; }
    const PropertyTable& density() const noexcept { return rho_; }
    const PropertyTable& emissivity() const noexcept { return emissivity_; }
    const PropertyTable& youngs_modulus() const noexcept { return youngs_; }
    const PropertyTable& yield_table() const noexcept { return yield_; }
    const PropertyTable& expansion() const noexcept { return alpha_; }
    const MaterialConstants& constants() const noexcept { return c_; }

    double melting_temperature() const noexcept;
    double melting_range() const noexcept { return c_.liquidus - c_.solidus; }

    double base_conductivity(double temperature) const;
    /// Polynomial conductivity, multiplied by the Marangoni factor strictly above the melt temperature.
    double conductivity(double temperature) const;
    double latent_heat_term(double temperature) const;
    /// c_p plus the Gaussian latent-heat bump centred on the melt temperature.
    double effective_heat_capacity(double temperature) const;
    /// Initial yield stress, floored at constants().yield_floor.
    double yield_stress(double temperature) const;
    double young(double temperature) const;
    double alpha(double temperature) const { return alpha_(temperature); }
    double poisson() const noexcept { return c_.poisson; }
    double hardening_modulus() const noexcept { return c_.hardening_modulus; }

    /// Volumetric enthalpy, the running integral of rho * c_p* from 0 K.
    double volumetric_enthalpy(double temperature) const;
    /// Secant of volumetric_enthalpy between two temperatures (tangent when they coincide).
    double secant_capacity(double t0, double t1) const;

private:
    void build_enthalpy_table();

    PropertyTable cp_;
    PropertyTable rho_;
    PropertyTable emissivity_;
    PropertyTable youngs_;
    PropertyTable yield_;
    PropertyTable alpha_;
    MaterialConstants c_;

    double enthalpy_step_ = 0.25;
    double enthalpy_tmax_ = 6000.0;
    std::vector<double> enthalpy_;
};

double check_temperature(double temperature);

}  // namespace dedtwin
