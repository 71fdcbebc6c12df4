#pragma once

#include <Eigen/Dense>

#include "dedtwin/material.hpp"

namespace dedtwin {

using Tensor2 = Eigen::Matrix3d;
using Voigt6 = Eigen::Matrix<double, 6, 1>;
using Tangent6 = Eigen::Matrix<double, 6, 6>;

/// Stress-like Voigt order 11, 22, 33, 23, 13, 12 (tensor components, no factor 2).
Voigt6 to_voigt_stress(const Tensor2& s);
Tensor2 from_voigt_stress(const Voigt6& v);
/// Strain-like Voigt with engineering shears (2 * eps_ij).
Voigt6 to_voigt_strain(const Tensor2& e);
Tensor2 from_voigt_strain(const Voigt6& v);

struct ElasticModuli {
    double young;
    double poisson;
    double lambda;
    double mu;
    double bulk;
};

ElasticModuli elastic_moduli(double young, double poisson);
ElasticModuli elastic_moduli(double temperature, const MaterialModel& material);

/// alpha(T) (T - T_ref) I.
Tensor2 thermal_strain(double temperature, const MaterialModel& material, double t_ref);
Tensor2 elastic_stress(const Tensor2& eps_el, double temperature, const MaterialModel& material);
Tensor2 elastic_stress(const Tensor2& eps_el, const ElasticModuli& m);
/// Compliance form (1 + nu)/E sigma - nu/E tr(sigma) I.
Tensor2 elastic_strain(const Tensor2& sigma, const ElasticModuli& m);
Tangent6 elastic_tangent(const ElasticModuli& m);

Tensor2 deviator(const Tensor2& s);
double von_mises(const Tensor2& sigma);

struct ReturnResult {
    Tensor2 sigma;
    Tensor2 plastic_increment;
    double eps_pe = 0.0;
    double yield_stress = 0.0;  // current radius sigma_y0(T) + H eps_pe
    bool plastic = false;
    Tangent6 tangent;           // consistent elastoplastic tangent, engineering-strain Voigt
};

/// Closed-form radial return for von Mises plasticity with linear isotropic hardening.
ReturnResult radial_return(const Tensor2& eps_trial_el, double temperature, double eps_pe_prev,
                           const MaterialModel& material);
ReturnResult radial_return(const Tensor2& eps_trial_el, const ElasticModuli& m, double yield0, double hardening,
                           double eps_pe_prev);

}  // namespace dedtwin
