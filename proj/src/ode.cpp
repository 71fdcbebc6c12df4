#include "dedtwin/ode.hpp"

#include <algorithm>
#include <cmath>

#include "dedtwin/error.hpp"

namespace dedtwin {

namespace {

ButcherTableau make_rk4() {
    ButcherTableau t;
    t.stages = 4;
    t.a.assign(16, 0.0);
    t.a[1 * 4 + 0] = 0.5;
    t.a[2 * 4 + 1] = 0.5;
    t.a[3 * 4 + 2] = 1.0;
    t.b = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};
    t.c = {0.0, 0.5, 0.5, 1.0};
    return t;
}

ButcherTableau make_dopri5() {
    ButcherTableau t;
    t.stages = 7;
    t.a.assign(49, 0.0);
    auto set = [&t](int i, std::initializer_list<double> row) {
        int j = 0;
        for (double v : row) t.a[static_cast<std::size_t>(i * 7 + j++)] = v;
    };
    set(1, {1.0 / 5.0});
    set(2, {3.0 / 40.0, 9.0 / 40.0});
    set(3, {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0});
    set(4, {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0});
    set(5, {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0});
    set(6, {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0});
    t.b = {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0};
    t.b_err = {71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0};
    t.c = {0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0};
    return t;
}

// Dense-output weights of the Dormand-Prince continuous extension.
constexpr double kD[7] = {-12715105075.0 / 11282082432.0, 0.0, 87487479700.0 / 32700410799.0,
                          -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
                          -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0};

/// Stage i evaluates rhs(i, Y_i, K_i); K[0] may be supplied (FSAL) when `first_known`.
template <typename StageRhs>
void rk_stages(const ButcherTableau& tab, const Eigen::VectorXd& z, double h, StageRhs&& rhs,
               std::vector<Eigen::VectorXd>& k, bool first_known = false) {
    k.resize(static_cast<std::size_t>(tab.stages));
    Eigen::VectorXd y(z.size());
    for (int i = first_known ? 1 : 0; i < tab.stages; ++i) {
        y = z;
        for (int j = 0; j < i; ++j) {
            const double a = tab.at(i, j);
            if (a != 0.0) y.noalias() += (h * a) * k[static_cast<std::size_t>(j)];
        }
        rhs(i, y, k[static_cast<std::size_t>(i)]);
    }
}

Eigen::VectorXd combine(const Eigen::VectorXd& z, double h, const std::vector<double>& w,
                        const std::vector<Eigen::VectorXd>& k) {
    Eigen::VectorXd out = z;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] != 0.0) out.noalias() += (h * w[i]) * k[i];
    }
    return out;
}

double error_norm(const ButcherTableau& tab, const std::vector<Eigen::VectorXd>& k, double h,
                  const Eigen::VectorXd& z0, const Eigen::VectorXd& z1, double rtol, double atol) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(z0.size());
    for (std::size_t i = 0; i < tab.b_err.size(); ++i) {
        if (tab.b_err[i] != 0.0) e.noalias() += (h * tab.b_err[i]) * k[i];
    }
    const Eigen::ArrayXd sc = atol + rtol * z0.array().abs().max(z1.array().abs());
    return std::sqrt((e.array() / sc).square().mean());
}

struct StepController {
    double facold = 1e-4;
    static constexpr double beta = 0.04;
    static constexpr double expo1 = 0.2 - beta * 0.75;
    static constexpr double safe = 0.9;
    static constexpr double facc1 = 5.0;   // largest shrink is 1/5
    static constexpr double facc2 = 0.1;   // largest growth is 10x

    double accepted(double h, double err) {
        const double fac11 = std::pow(err, expo1);
        double fac = fac11 / std::pow(facold, beta);
        fac = std::max(facc2, std::min(facc1, fac / safe));
        facold = std::max(err, 1e-4);
        return h / fac;
    }
    double rejected(double h, double err) const {
        const double fac11 = std::pow(err, expo1);
        return h / std::min(facc1, fac11 / safe);
    }
};

double initial_step(const OdeRhs& f, double t0, const Eigen::VectorXd& z0, const Eigen::VectorXd& f0, double span,
                    double rtol, double atol, Dopri5Stats& stats) {
    const Eigen::ArrayXd sk = atol + rtol * z0.array().abs();
    const double dnf = (f0.array() / sk).square().mean();
    const double dny = (z0.array() / sk).square().mean();
    double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
    h = std::min(h, span);
    const Eigen::VectorXd z1 = z0 + h * f0;
    Eigen::VectorXd f1(z0.size());
    f(t0 + h, z1, f1);
    ++stats.evaluations;
    const double der2 = std::sqrt(((f1 - f0).array() / sk).square().mean()) / h;
    const double der12 = std::max(der2, std::sqrt(dnf));
    // A state at rest gives no scale to resolve; the error control takes over from a full step.
    if (der12 <= 1e-15) return span;
    return std::min({100.0 * h, std::pow(0.01 / der12, 0.2), span});
}

void check_finite(const Eigen::VectorXd& z, long index) {
    if (!z.allFinite()) throw DivergenceError("latent state became non-finite", index);
}

// Input value at fraction theta of read-out interval k.
Eigen::VectorXd input_at(const Eigen::MatrixXd& v, Eigen::Index k, double theta, InputHold hold) {
    if (hold == InputHold::zero_order || theta <= 0.0 || k + 1 >= v.rows()) return v.row(k).transpose();
    return ((1.0 - theta) * v.row(k) + theta * v.row(k + 1)).transpose();
}

void scatter_input(Eigen::MatrixXd& dv, Eigen::Index k, double theta, InputHold hold, const Eigen::VectorXd& g) {
    if (hold == InputHold::zero_order || theta <= 0.0 || k + 1 >= dv.rows()) {
        dv.row(k) += g.transpose();
        return;
    }
    dv.row(k) += (1.0 - theta) * g.transpose();
    dv.row(k + 1) += theta * g.transpose();
}

struct NodeStep {
    Eigen::Index interval;
    double theta0;  // start, as a fraction of dt
    double frac;    // step length, as a fraction of dt
};

Eigen::VectorXd node_eval(const Mlp& f, const Eigen::VectorXd& y, const Eigen::VectorXd& vin) {
    Eigen::VectorXd x(y.size() + vin.size());
    x << y, vin;
    return f.forward(x);
}

/// Reverse pass through one recorded step; updates lambda in place.
void node_step_backward(const ButcherTableau& tab, const Mlp& f, const Eigen::VectorXd& z, double dt,
                        const NodeStep& s, InputHold hold, const Eigen::MatrixXd& v, Eigen::VectorXd& lambda,
                        Mlp& grad, Eigen::MatrixXd& dv) {
    const double h = s.frac * dt;
    const auto n = z.size();
    const auto m = v.cols();
    std::vector<Eigen::VectorXd> k;
    std::vector<Eigen::VectorXd> x(static_cast<std::size_t>(tab.stages));
    rk_stages(tab, z, h,
              [&](int i, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
                  auto& xi = x[static_cast<std::size_t>(i)];
                  xi.resize(n + m);
                  xi << y, input_at(v, s.interval, s.theta0 + tab.c[static_cast<std::size_t>(i)] * s.frac, hold);
                  out = f.forward(xi);
              },
              k);
    std::vector<Eigen::VectorXd> dk(static_cast<std::size_t>(tab.stages), Eigen::VectorXd::Zero(n));
    for (int i = 0; i < tab.stages; ++i) dk[static_cast<std::size_t>(i)] = (h * tab.b[static_cast<std::size_t>(i)]) * lambda;
    Mlp::Tape tape;
    for (int i = tab.stages - 1; i >= 0; --i) {
        const auto& dki = dk[static_cast<std::size_t>(i)];
        if (dki.isZero(0.0)) continue;
        f.forward_batch(x[static_cast<std::size_t>(i)], tape);
        const Eigen::VectorXd gx = f.backward(tape, dki, grad);
        const Eigen::VectorXd dy = gx.head(n);
        scatter_input(dv, s.interval, s.theta0 + tab.c[static_cast<std::size_t>(i)] * s.frac, hold, gx.tail(m));
        lambda += dy;
        for (int j = 0; j < i; ++j) {
            const double a = tab.at(i, j);
            if (a != 0.0) dk[static_cast<std::size_t>(j)] += (h * a) * dy;
        }
    }
}

void check_node_shapes(const Mlp& f, const Eigen::VectorXd& z0, const Eigen::MatrixXd& v) {
    if (z0.size() + v.cols() != f.input_size() || f.output_size() != z0.size()) {
        throw DimensionMismatch("latent state and input widths do not match the NODE network");
    }
    if (v.rows() < 1) throw InvalidInput("input series is empty");
}

}  // namespace

const ButcherTableau& rk4_tableau() {
    static const ButcherTableau t = make_rk4();
    return t;
}

const ButcherTableau& dopri5_tableau() {
    static const ButcherTableau t = make_dopri5();
    return t;
}

Eigen::VectorXd rk4_integrate(const OdeRhs& f, const Eigen::VectorXd& z0, double t0, double t1, int steps) {
    if (steps < 1) throw InvalidInput("rk4 needs at least one step");
    const auto& tab = rk4_tableau();
    const double h = (t1 - t0) / steps;
    Eigen::VectorXd z = z0;
    std::vector<Eigen::VectorXd> k;
    for (int s = 0; s < steps; ++s) {
        const double t = t0 + s * h;
        rk_stages(tab, z, h,
                  [&](int i, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
                      out.resize(y.size());
                      f(t + tab.c[static_cast<std::size_t>(i)] * h, y, out);
                  },
                  k);
        z = combine(z, h, tab.b, k);
        check_finite(z, s);
    }
    return z;
}

Dopri5Result dopri5(const OdeRhs& f, const Eigen::VectorXd& z0, double t0, const std::vector<double>& output_times,
                    const Dopri5Options& opt) {
    if (!(opt.rtol > 0.0) || !(opt.atol > 0.0)) throw InvalidInput("dopri5 tolerances must be positive");
    if (!opt.adaptive && !(opt.h_initial > 0.0)) throw InvalidInput("fixed-step dopri5 needs h_initial");
    if (!std::is_sorted(output_times.begin(), output_times.end()) ||
        (!output_times.empty() && output_times.front() < t0)) {
        throw InvalidInput("output times must be sorted and not before t0");
    }
    const auto& tab = dopri5_tableau();
    Dopri5Result res;
    res.states.resize(static_cast<Eigen::Index>(output_times.size()), z0.size());
    std::size_t next_out = 0;
    while (next_out < output_times.size() && output_times[next_out] == t0) res.states.row(next_out++) = z0.transpose();
    if (next_out == output_times.size()) return res;

    const double tend = output_times.back();
    const double span = tend - t0;
    std::vector<double> stops;
    for (double s : opt.stops) {
        if (s > t0 && s < tend) stops.push_back(s);
    }
    std::sort(stops.begin(), stops.end());
    stops.push_back(tend);
    std::size_t next_stop = 0;

    double t = t0;
    Eigen::VectorXd z = z0;
    std::vector<Eigen::VectorXd> k(7, Eigen::VectorXd(z0.size()));
    f(t, z, k[0]);
    ++res.stats.evaluations;
    double h = opt.h_initial > 0.0 ? opt.h_initial : initial_step(f, t, z, k[0], span, opt.rtol, opt.atol, res.stats);
    StepController ctl;
    bool reject_last = false;
    while (next_stop < stops.size()) {
        if (res.stats.accepted + res.stats.rejected >= opt.max_steps) throw StiffnessError("dopri5 step budget exhausted");
        if (h < opt.h_min * span) throw StiffnessError("dopri5 step size underflow");
        const double target = stops[next_stop];
        bool hit = false;
        if (t + h >= target - 1e-12 * span) {
            h = target - t;
            hit = true;
        }
        rk_stages(tab, z, h,
                  [&](int i, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
                      f(t + tab.c[static_cast<std::size_t>(i)] * h, y, out);
                  },
                  k, true);
        res.stats.evaluations += 6;
        const Eigen::VectorXd z1 = combine(z, h, tab.b, k);
        const double err = error_norm(tab, k, h, z, z1, opt.rtol, opt.atol);
        if (!std::isfinite(err)) throw DivergenceError("dopri5 state became non-finite", res.stats.accepted);
        if (err <= 1.0 || !opt.adaptive) {
            ++res.stats.accepted;
            res.steps.push_back({t, h});
            const double t1 = hit ? target : t + h;
            while (next_out < output_times.size() && output_times[next_out] <= t1 + 1e-12 * span) {
                const double to = output_times[next_out];
                if (std::abs(to - t1) <= 1e-12 * span) {
                    res.states.row(next_out) = z1.transpose();
                } else {
                    const double th = (to - t) / h;
                    const Eigen::VectorXd r2 = z1 - z;
                    const Eigen::VectorXd r3 = h * k[0] - r2;
                    const Eigen::VectorXd r4 = r2 - h * k[6] - r3;
                    Eigen::VectorXd r5 = Eigen::VectorXd::Zero(z.size());
                    for (int i = 0; i < 7; ++i) {
                        if (kD[i] != 0.0) r5.noalias() += (h * kD[i]) * k[static_cast<std::size_t>(i)];
                    }
                    res.states.row(next_out) =
                        (z + th * (r2 + (1.0 - th) * (r3 + th * (r4 + (1.0 - th) * r5)))).transpose();
                }
                ++next_out;
            }
            double h_new = opt.adaptive ? ctl.accepted(h, err) : opt.h_initial;
            if (reject_last) h_new = std::min(h_new, h);
            reject_last = false;
            t = t1;
            z = z1;
            if (hit) {
                // The right-hand side may jump at a stop; re-evaluate instead of reusing the last stage.
                ++next_stop;
                if (next_stop < stops.size()) {
                    f(t, z, k[0]);
                    ++res.stats.evaluations;
                }
            } else {
                k[0] = k[6];  // first-same-as-last
            }
            h = h_new;
        } else {
            ++res.stats.rejected;
            reject_last = true;
            h = ctl.rejected(h, err);
        }
    }
    return res;
}

Eigen::MatrixXd rk4_rollout(const Mlp& f, const Eigen::VectorXd& z0, const Eigen::MatrixXd& v, double dt,
                            InputHold hold, int substeps) {
    check_node_shapes(f, z0, v);
    if (substeps < 1) throw InvalidInput("substeps must be at least 1");
    const auto& tab = rk4_tableau();
    Eigen::MatrixXd z(v.rows(), z0.size());
    z.row(0) = z0.transpose();
    Eigen::VectorXd cur = z0;
    std::vector<Eigen::VectorXd> k;
    const double frac = 1.0 / substeps;
    for (Eigen::Index interval = 0; interval + 1 < v.rows(); ++interval) {
        for (int s = 0; s < substeps; ++s) {
            const double theta0 = s * frac;
            rk_stages(tab, cur, frac * dt,
                      [&](int i, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
                          out = node_eval(f, y, input_at(v, interval, theta0 + tab.c[static_cast<std::size_t>(i)] * frac, hold));
                      },
                      k);
            cur = combine(cur, frac * dt, tab.b, k);
        }
        check_finite(cur, interval + 1);
        z.row(interval + 1) = cur.transpose();
    }
    return z;
}

RolloutGradient rk4_rollout_backward(const Mlp& f, const Eigen::MatrixXd& z, const Eigen::MatrixXd& v, double dt,
                                     InputHold hold, int substeps, const Eigen::MatrixXd& dz) {
    if (dz.rows() != z.rows() || dz.cols() != z.cols() || z.rows() != v.rows()) {
        throw DimensionMismatch("rollout cotangent shape mismatch");
    }
    const auto& tab = rk4_tableau();
    RolloutGradient g{f.zeros_like(), Eigen::VectorXd::Zero(z.cols()), Eigen::MatrixXd::Zero(v.rows(), v.cols())};
    Eigen::VectorXd lambda = dz.row(z.rows() - 1).transpose();
    const double frac = 1.0 / substeps;
    std::vector<Eigen::VectorXd> starts(static_cast<std::size_t>(substeps));
    std::vector<Eigen::VectorXd> k;
    for (Eigen::Index interval = z.rows() - 2; interval >= 0; --interval) {
        // Re-run the substeps of this interval to recover their start states.
        starts[0] = z.row(interval).transpose();
        for (int s = 1; s < substeps; ++s) {
            const double theta0 = (s - 1) * frac;
            rk_stages(tab, starts[static_cast<std::size_t>(s - 1)], frac * dt,
                      [&](int i, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
                          out = node_eval(f, y, input_at(v, interval, theta0 + tab.c[static_cast<std::size_t>(i)] * frac, hold));
                      },
                      k);
            starts[static_cast<std::size_t>(s)] = combine(starts[static_cast<std::size_t>(s - 1)], frac * dt, tab.b, k);
        }
        for (int s = substeps - 1; s >= 0; --s) {
            node_step_backward(tab, f, starts[static_cast<std::size_t>(s)], dt, {interval, s * frac, frac}, hold, v,
                               lambda, g.params, g.v);
        }
        lambda += dz.row(interval).transpose();
    }
    g.z0 = lambda;
    return g;
}

NodeIntegration dopri5_integrate(const Mlp& f, const Eigen::VectorXd& z0, const Eigen::MatrixXd& v, double dt,
                                 InputHold hold, double rtol, double atol) {
    check_node_shapes(f, z0, v);
    if (!(rtol > 0.0) || !(atol > 0.0)) throw InvalidInput("dopri5 tolerances must be positive");
    const auto& tab = dopri5_tableau();
    NodeIntegration run;
    run.z.resize(v.rows(), z0.size());
    run.z.row(0) = z0.transpose();
    Eigen::VectorXd z = z0;
    std::vector<Eigen::VectorXd> k;
    StepController ctl;
    double frac = 1.0;  // step length as a fraction of dt
    bool reject_last = false;
    for (Eigen::Index interval = 0; interval + 1 < v.rows(); ++interval) {
        double theta = 0.0;
        while (theta < 1.0) {
            if (frac < 1e-10) throw StiffnessError("dopri5 step size underflow in latent integration");
            if (run.stats.accepted + run.stats.rejected > 10'000'000) throw StiffnessError("dopri5 step budget exhausted");
            bool hit = false;
            double step = frac;
            if (theta + step >= 1.0 - 1e-12) {
                step = 1.0 - theta;
                hit = true;
            }
            const double h = step * dt;
            rk_stages(tab, z, h,
                      [&](int i, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
                          out = node_eval(f, y, input_at(v, interval, theta + tab.c[static_cast<std::size_t>(i)] * step, hold));
                      },
                      k);
            run.stats.evaluations += 7;
            const Eigen::VectorXd z1 = combine(z, h, tab.b, k);
            const double err = error_norm(tab, k, h, z, z1, rtol, atol);
            if (!std::isfinite(err)) throw DivergenceError("latent state became non-finite", interval);
            if (err <= 1.0) {
                ++run.stats.accepted;
                run.steps.push_back({static_cast<double>(interval), theta, step});
                run.step_start.push_back(z);
                double next = ctl.accepted(step, err);
                if (reject_last) next = std::min(next, step);
                reject_last = false;
                // Keep the untruncated proposal when the step was shortened to land on the read-out.
                frac = hit ? std::max(next, frac) : next;
                theta = hit ? 1.0 : theta + step;
                z = z1;
            } else {
                ++run.stats.rejected;
                reject_last = true;
                frac = ctl.rejected(step, err);
            }
        }
        run.z.row(interval + 1) = z.transpose();
    }
    return run;
}

RolloutGradient dopri5_backward(const Mlp& f, const NodeIntegration& run, const Eigen::MatrixXd& v, double dt,
                                InputHold hold, const Eigen::MatrixXd& dz) {
    const auto& z = run.z;
    if (dz.rows() != z.rows() || dz.cols() != z.cols() || z.rows() != v.rows()) {
        throw DimensionMismatch("integration cotangent shape mismatch");
    }
    const auto& tab = dopri5_tableau();
    RolloutGradient g{f.zeros_like(), Eigen::VectorXd::Zero(z.cols()), Eigen::MatrixXd::Zero(v.rows(), v.cols())};
    Eigen::VectorXd lambda = dz.row(z.rows() - 1).transpose();
    Eigen::Index current = z.rows() - 2;
    for (std::size_t s = run.steps.size(); s-- > 0;) {
        const auto interval = static_cast<Eigen::Index>(run.steps[s][0]);
        while (interval < current) {
            lambda += dz.row(current).transpose();
            --current;
        }
        node_step_backward(tab, f, run.step_start[s], dt, {interval, run.steps[s][1], run.steps[s][2]}, hold, v,
                           lambda, g.params, g.v);
    }
    while (current >= 0) {
        lambda += dz.row(current).transpose();
        --current;
    }
    g.z0 = lambda;
    return g;
}

}  // namespace dedtwin
