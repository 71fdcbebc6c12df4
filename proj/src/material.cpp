#include "dedtwin/material.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "dedtwin/error.hpp"
#include "dedtwin/text_util.hpp"

namespace dedtwin {

double check_temperature(double temperature) {
    if (!std::isfinite(temperature) || temperature <= 0.0) {
        throw InvalidInput("temperature must be finite and positive, got " + std::to_string(temperature));
    }
    return temperature;
}

PropertyTable::PropertyTable(std::string name, std::vector<double> breakpoints, std::vector<double> values)
    : name_(std::move(name)), breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
    const std::size_t n = breakpoints_.size();
    if (n < 2 || values_.size() != n) {
        throw InvalidInput("property table '" + name_ + "' needs >= 2 rows with matching value count");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(breakpoints_[i]) || !std::isfinite(values_[i])) {
            throw InvalidInput("property table '" + name_ + "' contains non-finite entries");
        }
        if (i > 0 && breakpoints_[i] <= breakpoints_[i - 1]) {
            throw InvalidInput("property table '" + name_ + "' breakpoints are not strictly increasing");
        }
    }

    // Natural spline: M_0 = M_{n-1} = 0, tridiagonal solve for interior moments.
    second_derivs_.assign(n, 0.0);
    if (n > 2) {
        std::vector<double> diag(n, 0.0), upper(n, 0.0), rhs(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double h0 = breakpoints_[i] - breakpoints_[i - 1];
            const double h1 = breakpoints_[i + 1] - breakpoints_[i];
            diag[i] = 2.0 * (h0 + h1);
            upper[i] = h1;
            rhs[i] = 6.0 * ((values_[i + 1] - values_[i]) / h1 - (values_[i] - values_[i - 1]) / h0);
        }
        // Thomas algorithm on rows 1..n-2; sub-diagonal of row i is h_{i-1}.
        for (std::size_t i = 2; i + 1 < n; ++i) {
            const double lower = breakpoints_[i] - breakpoints_[i - 1];
            const double w = lower / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        for (std::size_t i = n - 2; i >= 1; --i) {
            const double next = (i + 2 < n) ? second_derivs_[i + 1] : 0.0;
            second_derivs_[i] = (rhs[i] - upper[i] * next) / diag[i];
            if (i == 1) break;
        }
    }
}

std::size_t PropertyTable::segment(double temperature) const {
    auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), temperature);
    std::size_t i = static_cast<std::size_t>(it - breakpoints_.begin());
    if (i == 0) return 0;
    return std::min(i - 1, breakpoints_.size() - 2);
}

double PropertyTable::operator()(double temperature) const {
    if (!std::isfinite(temperature)) {
        throw InvalidInput("property '" + name_ + "' evaluated at non-finite temperature");
    }
    if (temperature <= breakpoints_.front()) return values_.front();
    if (temperature >= breakpoints_.back()) return values_.back();
    const std::size_t i = segment(temperature);
    const double h = breakpoints_[i + 1] - breakpoints_[i];
    const double a = (breakpoints_[i + 1] - temperature) / h;
    const double b = (temperature - breakpoints_[i]) / h;
    return a * values_[i] + b * values_[i + 1] +
           ((a * a * a - a) * second_derivs_[i] + (b * b * b - b) * second_derivs_[i + 1]) * h * h / 6.0;
}

double PropertyTable::derivative(double temperature) const {
    if (temperature <= breakpoints_.front() || temperature >= breakpoints_.back()) return 0.0;
    const std::size_t i = segment(temperature);
    const double h = breakpoints_[i + 1] - breakpoints_[i];
    const double a = (breakpoints_[i + 1] - temperature) / h;
    const double b = (temperature - breakpoints_[i]) / h;
    return (values_[i + 1] - values_[i]) / h +
           (-(3.0 * a * a - 1.0) * second_derivs_[i] + (3.0 * b * b - 1.0) * second_derivs_[i + 1]) * h / 6.0;
}

MaterialModel::MaterialModel(PropertyTable heat_capacity, PropertyTable density, PropertyTable emissivity,
                             PropertyTable youngs_modulus, PropertyTable yield_stress, PropertyTable expansion,
                             MaterialConstants constants)
    : cp_(std::move(heat_capacity)),
      rho_(std::move(density)),
      emissivity_(std::move(emissivity)),
      youngs_(std::move(youngs_modulus)),
      yield_(std::move(yield_stress)),
      alpha_(std::move(expansion)),
      c_(constants) {
    if (!(c_.solidus < c_.liquidus)) throw InvalidInput("solidus must be below liquidus");
    if (!(c_.latent_heat > 0.0)) throw InvalidInput("latent heat must be positive");
    if (!(c_.marangoni_factor >= 1.0)) throw InvalidInput("Marangoni factor must be >= 1");
    if (!(c_.poisson > 0.0 && c_.poisson < 0.5)) throw InvalidInput("Poisson ratio must lie in (0, 0.5)");
    if (!(c_.hardening_modulus >= 0.0)) throw InvalidInput("hardening modulus must be non-negative");
    build_enthalpy_table();
}

MaterialModel MaterialModel::inconel718() {
    // Rows with an empty cell for a property are left out of that property's table.
    PropertyTable cp("cp", {298, 373, 473, 573, 673, 773, 873, 973, 1073, 1173, 1273, 1373, 1443, 1609},
                     {435, 455, 479, 497, 515, 427, 558, 568, 680, 640, 620, 640, 650, 720});
    PropertyTable rho("rho",
                      {298, 373, 473, 573, 673, 773, 873, 973, 1073, 1173, 1273, 1373, 1443, 1609, 1673, 1773, 1873},
                      {8190, 8160, 8118, 8079, 8040, 8001, 7962, 7925, 7884, 7845, 7806, 7767, 7727, 7400, 7340,
                       7250, 7160});
    PropertyTable eps("emissivity",
                      {298, 373, 473, 573, 673, 773, 873, 973, 1073, 1173, 1273, 1373, 1443, 1609, 1673, 1773, 1873},
                      {0.539, 0.533, 0.533, 0.534, 0.534, 0.535, 0.535, 0.536, 0.536, 0.537, 0.537, 0.538, 0.538,
                       0.329, 0.332, 0.337, 0.341});
    PropertyTable e("E", {298, 673, 873, 1173, 1373, 1609}, {200e9, 178e9, 163e9, 139e9, 99e9, 1e9});
    PropertyTable sy("sigma_y", {298, 773, 873, 1073, 1533, 1609}, {1125e6, 1020e6, 965e6, 800e6, 25e6, 1e6});
    PropertyTable alpha("alpha", {298, 473, 573, 673, 873, 1073},
                        {12.20e-6, 14.36e-6, 14.90e-6, 15.43e-6, 17.45e-6, 18.34e-6});
    return MaterialModel(std::move(cp), std::move(rho), std::move(eps), std::move(e), std::move(sy), std::move(alpha),
                         MaterialConstants{});
}

double MaterialModel::melting_temperature() const noexcept {
    if (c_.melt_rule == MeltTemperatureRule::half_range) return 0.5 * (c_.liquidus - c_.solidus);
    return 0.5 * (c_.solidus + c_.liquidus);
}

double MaterialModel::base_conductivity(double temperature) const {
    const double t = check_temperature(temperature);
    return c_.k_coeffs[0] + c_.k_coeffs[1] * t + c_.k_coeffs[2] * t * t;
}

double MaterialModel::conductivity(double temperature) const {
    const double k = base_conductivity(temperature);
    return temperature > melting_temperature() ? c_.marangoni_factor * k : k;
}

double MaterialModel::latent_heat_term(double temperature) const {
    const double dt = melting_range();
    const double x = (temperature - melting_temperature()) / dt;
    return c_.latent_heat / (std::sqrt(std::numbers::pi) * dt) * std::exp(-x * x);
}

double MaterialModel::effective_heat_capacity(double temperature) const {
    check_temperature(temperature);
    return cp_(temperature) + latent_heat_term(temperature);
}

double MaterialModel::yield_stress(double temperature) const {
    check_temperature(temperature);
    return std::max(yield_(temperature), c_.yield_floor);
}

double MaterialModel::young(double temperature) const {
    check_temperature(temperature);
    const double e = youngs_(temperature);
    if (!(e > 0.0)) {
        throw MaterialDataError("Young's modulus non-positive at T=" + std::to_string(temperature));
    }
    return e;
}

void MaterialModel::build_enthalpy_table() {
    const std::size_t n = static_cast<std::size_t>(enthalpy_tmax_ / enthalpy_step_) + 1;
    enthalpy_.assign(n, 0.0);
    auto integrand = [this](double t) {
        t = std::max(t, 1e-9);
        return rho_(t) * (cp_(t) + latent_heat_term(t));
    };
    // Simpson rule on each sub-interval.
    for (std::size_t i = 1; i < n; ++i) {
        const double a = static_cast<double>(i - 1) * enthalpy_step_;
        const double b = a + enthalpy_step_;
        enthalpy_[i] = enthalpy_[i - 1] +
                       enthalpy_step_ / 6.0 * (integrand(a) + 4.0 * integrand(0.5 * (a + b)) + integrand(b));
    }
}

double MaterialModel::volumetric_enthalpy(double temperature) const {
    if (!std::isfinite(temperature)) throw InvalidInput("enthalpy evaluated at non-finite temperature");
    if (temperature <= 0.0) return 0.0;
    const double x = temperature / enthalpy_step_;
    const std::size_t last = enthalpy_.size() - 1;
    if (x >= static_cast<double>(last)) {
        const double slope = rho_(enthalpy_tmax_) * effective_heat_capacity(enthalpy_tmax_);
        return enthalpy_[last] + slope * (temperature - enthalpy_tmax_);
    }
    const auto i = static_cast<std::size_t>(x);
    const double f = x - static_cast<double>(i);
    return (1.0 - f) * enthalpy_[i] + f * enthalpy_[i + 1];
}

double MaterialModel::secant_capacity(double t0, double t1) const {
    const double dt = t1 - t0;
    if (std::abs(dt) < 1e-6) {
        const double tm = 0.5 * (t0 + t1);
        const double h = 0.5e-3;
        return (volumetric_enthalpy(tm + h) - volumetric_enthalpy(tm - h)) / (2.0 * h);
    }
    return (volumetric_enthalpy(t1) - volumetric_enthalpy(t0)) / dt;
}

namespace {

struct TableBlock {
    double scale = 1.0;
    std::vector<double> t, v;
};

}  // namespace

MaterialModel MaterialModel::parse(std::istream& in, const std::string& source) {
    MaterialConstants c;
    std::map<std::string, TableBlock> blocks;
    std::string line;
    std::string current;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw FormatError(source + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = text::trim(text::strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s == "[end]") {
                if (current.empty()) fail("[end] without open block");
                current.clear();
                continue;
            }
            const auto words = text::split_ws(s.substr(1, s.size() - 2));
            if (words.size() != 2 || words[0] != "property") fail("expected [property NAME]");
            current = words[1];
            blocks[current] = TableBlock{};
            continue;
        }
        if (!current.empty()) {
            auto& blk = blocks[current];
            if (auto kv = text::split_kv(s)) {
                if (kv->first != "scale") fail("unknown block key '" + kv->first + "'");
                blk.scale = text::to_double(kv->second, source);
                continue;
            }
            const auto cells = text::split(s, ',');
            if (cells.size() != 2) fail("expected 'T, value'");
            blk.t.push_back(text::to_double(cells[0], source));
            blk.v.push_back(text::to_double(cells[1], source));
            continue;
        }
        auto kv = text::split_kv(s);
        if (!kv) fail("expected key = value");
        const auto& [key, val] = *kv;
        if (key == "k0") c.k_coeffs[0] = text::to_double(val, source);
        else if (key == "k1") c.k_coeffs[1] = text::to_double(val, source);
        else if (key == "k2") c.k_coeffs[2] = text::to_double(val, source);
        else if (key == "latent_heat") c.latent_heat = text::to_double(val, source);
        else if (key == "solidus") c.solidus = text::to_double(val, source);
        else if (key == "liquidus") c.liquidus = text::to_double(val, source);
        else if (key == "marangoni_factor") c.marangoni_factor = text::to_double(val, source);
        else if (key == "poisson") c.poisson = text::to_double(val, source);
        else if (key == "hardening_modulus") c.hardening_modulus = text::to_double(val, source);
        else if (key == "stefan_boltzmann") c.stefan_boltzmann = text::to_double(val, source);
        else if (key == "yield_floor") c.yield_floor = text::to_double(val, source);
        else if (key == "melt_rule") {
            if (val == "midpoint") c.melt_rule = MeltTemperatureRule::midpoint;
            else if (val == "half_range") c.melt_rule = MeltTemperatureRule::half_range;
            else fail("melt_rule must be midpoint or half_range");
        } else {
            fail("unknown key '" + key + "'");
        }
    }
    if (!current.empty()) fail("unterminated block [property " + current + "]");

    auto table = [&](const std::string& name) {
        auto it = blocks.find(name);
        if (it == blocks.end()) throw FormatError(source + ": missing [property " + name + "] block");
        auto v = it->second.v;
        for (double& x : v) x *= it->second.scale;
        return PropertyTable(name, it->second.t, std::move(v));
    };
    return MaterialModel(table("cp"), table("rho"), table("emissivity"), table("E"), table("sigma_y"), table("alpha"),
                         c);
}

MaterialModel MaterialModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open material file " + path.string());
    return parse(in, path.string());
}

void MaterialModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write material file " + path.string());
    out << std::setprecision(17);
    out << "k0 = " << c_.k_coeffs[0] << "\nk1 = " << c_.k_coeffs[1] << "\nk2 = " << c_.k_coeffs[2] << '\n';
    out << "latent_heat = " << c_.latent_heat << "\nsolidus = " << c_.solidus << "\nliquidus = " << c_.liquidus
        << "\nmarangoni_factor = " << c_.marangoni_factor << "\npoisson = " << c_.poisson
        << "\nhardening_modulus = " << c_.hardening_modulus << "\nstefan_boltzmann = " << c_.stefan_boltzmann
        << "\nyield_floor = " << c_.yield_floor << "\nmelt_rule = "
        << (c_.melt_rule == MeltTemperatureRule::midpoint ? "midpoint" : "half_range") << '\n';
    for (const PropertyTable* t : {&cp_, &rho_, &emissivity_, &youngs_, &yield_, &alpha_}) {
        out << "\n[property " << t->name() << "]\n";
        for (std::size_t i = 0; i < t->breakpoints().size(); ++i) {
            out << t->breakpoints()[i] << ", " << t->values()[i] << '\n';
        }
        out << "[end]\n";
    }
}

}  // namespace dedtwin
