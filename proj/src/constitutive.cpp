#include "dedtwin/constitutive.hpp"

#include <cmath>

#include "dedtwin/error.hpp"

namespace dedtwin {

Voigt6 to_voigt_stress(const Tensor2& s) {
    Voigt6 v;
    v << s(0, 0), s(1, 1), s(2, 2), s(1, 2), s(0, 2), s(0, 1);
    return v;
}

Tensor2 from_voigt_stress(const Voigt6& v) {
    Tensor2 s;
    s << v(0), v(5), v(4), v(5), v(1), v(3), v(4), v(3), v(2);
    return s;
}

Voigt6 to_voigt_strain(const Tensor2& e) {
    Voigt6 v;
    v << e(0, 0), e(1, 1), e(2, 2), 2.0 * e(1, 2), 2.0 * e(0, 2), 2.0 * e(0, 1);
    return v;
}

Tensor2 from_voigt_strain(const Voigt6& v) {
    Tensor2 e;
    e << v(0), 0.5 * v(5), 0.5 * v(4), 0.5 * v(5), v(1), 0.5 * v(3), 0.5 * v(4), 0.5 * v(3), v(2);
    return e;
}

ElasticModuli elastic_moduli(double young, double poisson) {
    ElasticModuli m;
    m.young = young;
    m.poisson = poisson;
    m.lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    m.mu = young / (2.0 * (1.0 + poisson));
    m.bulk = young / (3.0 * (1.0 - 2.0 * poisson));
    return m;
}

ElasticModuli elastic_moduli(double temperature, const MaterialModel& material) {
    return elastic_moduli(material.young(temperature), material.poisson());
}

Tensor2 thermal_strain(double temperature, const MaterialModel& material, double t_ref) {
    check_temperature(temperature);
    return material.alpha(temperature) * (temperature - t_ref) * Tensor2::Identity();
}

Tensor2 elastic_stress(const Tensor2& eps_el, const ElasticModuli& m) {
    return m.lambda * eps_el.trace() * Tensor2::Identity() + 2.0 * m.mu * eps_el;
}

Tensor2 elastic_stress(const Tensor2& eps_el, double temperature, const MaterialModel& material) {
    return elastic_stress(eps_el, elastic_moduli(temperature, material));
}

Tensor2 elastic_strain(const Tensor2& sigma, const ElasticModuli& m) {
    return (1.0 + m.poisson) / m.young * sigma - m.poisson / m.young * sigma.trace() * Tensor2::Identity();
}

Tangent6 elastic_tangent(const ElasticModuli& m) {
    Tangent6 d = Tangent6::Zero();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) d(i, j) = m.lambda;
        d(i, i) += 2.0 * m.mu;
        d(i + 3, i + 3) = m.mu;
    }
    return d;
}

Tensor2 deviator(const Tensor2& s) { return s - s.trace() / 3.0 * Tensor2::Identity(); }

double von_mises(const Tensor2& sigma) {
    const Tensor2 s = deviator(sigma);
    return std::sqrt(1.5 * s.cwiseProduct(s).sum());
}

ReturnResult radial_return(const Tensor2& eps_trial_el, const ElasticModuli& m, double yield0, double hardening,
                           double eps_pe_prev) {
    if (!(yield0 > 0.0)) throw MaterialDataError("non-positive initial yield stress");
    if (eps_pe_prev < 0.0) throw InvalidInput("equivalent plastic strain must be non-negative");

    ReturnResult r;
    const Tensor2 trial = elastic_stress(eps_trial_el, m);
    const Tensor2 s_trial = deviator(trial);
    const double q_trial = std::sqrt(1.5 * s_trial.cwiseProduct(s_trial).sum());
    const double radius = yield0 + hardening * eps_pe_prev;
    r.eps_pe = eps_pe_prev;
    r.yield_stress = radius;
    r.tangent = elastic_tangent(m);

    if (q_trial <= radius) {
        r.sigma = trial;
        r.plastic_increment = Tensor2::Zero();
        return r;
    }

    const double delta = (q_trial - radius) / (3.0 * m.mu + hardening);
    const Tensor2 flow = 1.5 / q_trial * s_trial;  // d q / d sigma at the trial state
    r.plastic = true;
    r.eps_pe = eps_pe_prev + delta;
    r.yield_stress = yield0 + hardening * r.eps_pe;
    r.plastic_increment = delta * flow;
    r.sigma = trial - 2.0 * m.mu * r.plastic_increment;

    // C_ep = K 1(x)1 + 2 mu theta I_dev - 2 mu (theta - theta_bar) n(x)n, with n the unit deviator.
    const double theta = 1.0 - 3.0 * m.mu * delta / q_trial;
    const double theta_bar = 3.0 * m.mu / (3.0 * m.mu + hardening) - (1.0 - theta);
    const Voigt6 n = to_voigt_stress(s_trial / s_trial.norm());
    Tangent6 d = Tangent6::Zero();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) d(i, j) = m.bulk - 2.0 * m.mu * theta / 3.0;
        d(i, i) += 2.0 * m.mu * theta;
        d(i + 3, i + 3) = m.mu * theta;
    }
    d -= 2.0 * m.mu * theta_bar * n * n.transpose();
    r.tangent = d;
    return r;
}

ReturnResult radial_return(const Tensor2& eps_trial_el, double temperature, double eps_pe_prev,
                           const MaterialModel& material) {
    return radial_return(eps_trial_el, elastic_moduli(temperature, material), material.yield_stress(temperature),
                         material.hardening_modulus(), eps_pe_prev);
}

}  // namespace dedtwin
