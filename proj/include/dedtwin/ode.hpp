#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <vector>

#include "dedtwin/nn.hpp"

namespace dedtwin {

struct ButcherTableau {
    int stages = 0;
    std::vector<double> a;      // stages x stages, row-major, strictly lower
    std::vector<double> b;      // solution weights
    std::vector<double> b_err;  // embedded-minus-solution weights, empty without an error estimate
    std::vector<double> c;

    double at(int i, int j) const { return a[static_cast<std::size_t>(i * stages + j)]; }
};

const ButcherTableau& rk4_tableau();
/// Dormand-Prince 5(4); the 5th-order solution is propagated.
const ButcherTableau& dopri5_tableau();

using OdeRhs = std::function<void(double t, const Eigen::VectorXd& z, Eigen::VectorXd& dz)>;

/// Fixed-step classic RK4 from t0 to t1.
Eigen::VectorXd rk4_integrate(const OdeRhs& f, const Eigen::VectorXd& z0, double t0, double t1, int steps);

struct Dopri5Options {
    double rtol = 1e-6;
    double atol = 1e-9;
    double h_initial = 0.0;  // 0 selects a starting step automatically
    double h_min = 1e-12;    // relative to the integration span
    long max_steps = 1'000'000;
    /// false keeps h_initial for every step and accepts unconditionally (order studies).
    bool adaptive = true;
    /// Times the integrator must step onto exactly (input discontinuities, kinks).
    std::vector<double> stops;
};

struct Dopri5Stats {
    long accepted = 0;
    long rejected = 0;
    long evaluations = 0;
};

struct Dopri5Step {
    double t;
    double h;
};

struct Dopri5Result {
    Eigen::MatrixXd states;  // one row per requested output time
    Dopri5Stats stats;
    std::vector<Dopri5Step> steps;
};

/// Adaptive Dormand-Prince with PI step control; outputs come from the 4th-order
/// continuous extension, or exactly when an output coincides with a step end.
Dopri5Result dopri5(const OdeRhs& f, const Eigen::VectorXd& z0, double t0, const std::vector<double>& output_times,
                    const Dopri5Options& opt = {});

// ---- latent NODE: dz/dt = f([z; v(t)]) with v sampled at uniform read-out times ----

enum class InputHold { zero_order, linear };

/// Row k of `z` is the state at t0 + k dt; row 0 is z0.
Eigen::MatrixXd rk4_rollout(const Mlp& f, const Eigen::VectorXd& z0, const Eigen::MatrixXd& v, double dt,
                            InputHold hold = InputHold::zero_order, int substeps = 1);

struct RolloutGradient {
    Mlp params;
    Eigen::VectorXd z0;
    Eigen::MatrixXd v;
};

/// Gradients of sum(dz .* rk4_rollout(...)) by reverse mode through the unrolled steps.
RolloutGradient rk4_rollout_backward(const Mlp& f, const Eigen::MatrixXd& z, const Eigen::MatrixXd& v, double dt,
                                     InputHold hold, int substeps, const Eigen::MatrixXd& dz);

struct NodeIntegration {
    Eigen::MatrixXd z;
    Dopri5Stats stats;
    /// Accepted steps as (interval, start fraction, step fraction) of the read-out spacing.
    std::vector<std::array<double, 3>> steps;
    std::vector<Eigen::VectorXd> step_start;
};

/// Adaptive integration stopping on every read-out time.
NodeIntegration dopri5_integrate(const Mlp& f, const Eigen::VectorXd& z0, const Eigen::MatrixXd& v, double dt,
                                 InputHold hold = InputHold::linear, double rtol = 1e-6, double atol = 1e-8);

/// Gradients through the accepted steps of a recorded integration (step sizes held fixed).
RolloutGradient dopri5_backward(const Mlp& f, const NodeIntegration& run, const Eigen::MatrixXd& v, double dt,
                                InputHold hold, const Eigen::MatrixXd& dz);

}  // namespace dedtwin
