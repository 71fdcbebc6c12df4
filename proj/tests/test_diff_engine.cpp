#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "dedtwin/error.hpp"
#include "dedtwin/nn.hpp"
#include "dedtwin/ode.hpp"
#include "dedtwin/optim.hpp"
#include "fd.hpp"

using namespace dedtwin;

namespace {

Mlp random_net(std::vector<int> sizes, std::uint64_t seed, bool zero_out = false) {
    std::mt19937_64 rng(seed);
    Mlp net = Mlp::initialized(std::move(sizes), rng, zero_out);
    // Non-zero biases so every code path carries signal.
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        for (Eigen::Index i = 0; i < net.layer(l).b.size(); ++i) net.layer(l).b(i) = 0.3 * (2.0 * uniform01(rng) - 1.0);
    }
    return net;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * (2.0 * uniform01(rng) - 1.0);
    }
    return m;
}

// Single linear layer with dz/dt = lambda z (input v ignored).
Mlp linear_decay_net(double lambda) {
    Mlp f({2, 1});
    f.layer(0).w(0, 0) = lambda;
    return f;
}

double rk4_error_at_one(int steps) {
    const Mlp f = linear_decay_net(-1.0);
    const Eigen::MatrixXd v = Eigen::MatrixXd::Zero(steps + 1, 1);
    const Eigen::MatrixXd z = rk4_rollout(f, Eigen::VectorXd::Ones(1), v, 1.0 / steps);
    return std::abs(z(steps, 0) - std::exp(-1.0));
}

}  // namespace

TEST_SUITE("mlp") {
    TEST_CASE("softplus is overflow safe and matches ln(1+e^a)") {
        CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
        CHECK(std::abs(softplus(50.0) - 50.0) < 1e-12);
        CHECK(std::isfinite(softplus(1000.0)));
        CHECK(softplus(-800.0) >= 0.0);
        for (double a : {-3.0, -0.5, 0.7, 4.0}) CHECK(softplus(a) == doctest::Approx(std::log1p(std::exp(a))).epsilon(1e-14));
    }

    TEST_CASE("zero network gives zero output") {
        const Mlp net({3, 5, 2});
        CHECK(net.forward(Eigen::Vector3d(1, -2, 3)).isZero(0.0));
    }

    TEST_CASE("1-1-1 network with unit weights evaluates to ln 2 at zero") {
        Mlp net({1, 1, 1});
        net.layer(0).w(0, 0) = 1.0;
        net.layer(1).w(0, 0) = 1.0;
        CHECK(net.forward(Eigen::VectorXd::Zero(1))(0) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
    }

    TEST_CASE("batched forward matches per-sample forward") {
        const Mlp net = random_net({4, 7, 6, 3}, 11);
        std::mt19937_64 rng(3);
        const Eigen::MatrixXd x = random_matrix(4, 5, rng);
        const Eigen::MatrixXd y = net.forward_batch(x);
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            CHECK((y.col(c) - net.forward(x.col(c))).norm() < 1e-14);
        }
        CHECK_THROWS_AS(net.forward(Eigen::VectorXd::Zero(3)), DimensionMismatch);
    }

    TEST_CASE("linear single-layer vjp is W^T c") {
        const Mlp net = random_net({4, 3}, 5);
        const Eigen::Vector3d c(0.5, -1.0, 2.0);
        const auto r = vjp(net, Eigen::Vector4d(1, 2, 3, 4), c);
        CHECK((r.grad_x - net.layer(0).w.transpose() * c).norm() < 1e-15);
        CHECK((r.grad_params.layer(0).b - c).norm() < 1e-15);
    }

    TEST_CASE("zero cotangent gives zero gradients") {
        const Mlp net = random_net({3, 4, 2}, 9);
        const auto r = vjp(net, Eigen::Vector3d(0.1, 0.2, 0.3), Eigen::Vector2d::Zero());
        CHECK(r.grad_x.isZero(0.0));
        for (std::size_t l = 0; l < r.grad_params.layer_count(); ++l) {
            CHECK(r.grad_params.layer(l).w.isZero(0.0));
            CHECK(r.grad_params.layer(l).b.isZero(0.0));
        }
    }

    TEST_CASE("vjp agrees with central differences on random nets") {
        std::mt19937_64 rng(2024);
        for (int trial = 0; trial < 5; ++trial) {
            Mlp net = random_net({3, 6, 5, 2}, 100 + trial);
            const Eigen::VectorXd x = random_matrix(3, 1, rng);
            const Eigen::VectorXd c = random_matrix(2, 1, rng);
            auto r = vjp(net, x, c);
            auto loss = [&] { return c.dot(net.forward(x)); };
            double worst = 0.0;
            auto ps = net.spans();
            auto gs = r.grad_params.spans();
            for (std::size_t b = 0; b < ps.size(); ++b) {
                worst = std::max(worst, fd::coordinate_mismatch(ps[b].data, gs[b].data, ps[b].size, loss));
            }
            CHECK(worst < 1e-5);
            Eigen::VectorXd xv = x;
            auto loss_x = [&] { return c.dot(net.forward(xv)); };
            CHECK(fd::coordinate_mismatch(xv.data(), r.grad_x.data(), xv.size(), loss_x) < 1e-5);
        }
    }

    TEST_CASE("batched backward accumulates over samples") {
        Mlp net = random_net({3, 4, 2}, 21);
        std::mt19937_64 rng(8);
        const Eigen::MatrixXd x = random_matrix(3, 4, rng);
        const Eigen::MatrixXd c = random_matrix(2, 4, rng);
        Mlp::Tape tape;
        net.forward_batch(x, tape);
        Mlp g = net.zeros_like();
        const Eigen::MatrixXd gx = net.backward(tape, c, g);
        Mlp sum = net.zeros_like();
        for (Eigen::Index k = 0; k < 4; ++k) {
            const auto r = vjp(net, x.col(k), c.col(k));
            CHECK((gx.col(k) - r.grad_x).norm() < 1e-13);
            for (std::size_t l = 0; l < sum.layer_count(); ++l) {
                sum.layer(l).w += r.grad_params.layer(l).w;
                sum.layer(l).b += r.grad_params.layer(l).b;
            }
        }
        for (std::size_t l = 0; l < sum.layer_count(); ++l) CHECK((sum.layer(l).w - g.layer(l).w).norm() < 1e-12);
    }

    TEST_CASE("initialisation is seeded and zero output layer is honoured") {
        std::mt19937_64 a(42), b(42);
        const Mlp n1 = Mlp::initialized({5, 8, 3}, a, true);
        const Mlp n2 = Mlp::initialized({5, 8, 3}, b, true);
        CHECK(n1.layer(0).w == n2.layer(0).w);
        CHECK(n1.layer(1).w.isZero(0.0));
        CHECK(n1.layer(0).w.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 5.0));
        CHECK(n1.layer(0).w.cwiseAbs().maxCoeff() > 0.0);
    }

    TEST_CASE("DMLP round trip is exact and rejects bad magic") {
        const Mlp net = random_net({3, 4, 2}, 77);
        std::stringstream ss;
        write_dmlp(ss, net);
        const std::string bytes = ss.str();
        CHECK(bytes.substr(0, 4) == "DMLP");
        const Mlp back = read_dmlp(ss);
        CHECK(back.sizes() == net.sizes());
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            CHECK(back.layer(l).w == net.layer(l).w);
            CHECK(back.layer(l).b == net.layer(l).b);
        }
        // Row-major weights directly after the header: magic, version, count, 3 sizes.
        double first;
        std::memcpy(&first, bytes.data() + 4 + 4 + 4 + 3 * 4, sizeof(double));
        CHECK(first == net.layer(0).w(0, 0));
        double second;
        std::memcpy(&second, bytes.data() + 4 + 4 + 4 + 3 * 4 + 8, sizeof(double));
        CHECK(second == net.layer(0).w(0, 1));
        std::stringstream bad("XXXX");
        CHECK_THROWS_AS(read_dmlp(bad), FormatError);
    }
}

TEST_SUITE("integrators") {
    TEST_CASE("zero dynamics keep the state constant") {
        const Mlp f({4, 5, 2});
        const Eigen::Vector2d z0(0.3, -1.2);
        std::mt19937_64 rng(1);
        const Eigen::MatrixXd v = random_matrix(6, 2, rng);
        const Eigen::MatrixXd z = rk4_rollout(f, z0, v, 0.1);
        for (Eigen::Index k = 0; k < z.rows(); ++k) CHECK((z.row(k).transpose() - z0).norm() == 0.0);
        const auto run = dopri5_integrate(f, z0, v, 0.1);
        CHECK((run.z.row(5).transpose() - z0).norm() == 0.0);
    }

    TEST_CASE("rk4 on dz/dt = -z reaches exp(-1)") {
        CHECK(rk4_error_at_one(100) < 1e-6);
    }

    TEST_CASE("rk4 observed order is at least 3.8") {
        const double e1 = rk4_error_at_one(10), e2 = rk4_error_at_one(20), e3 = rk4_error_at_one(40);
        CHECK(std::log2(e1 / e2) >= 3.8);
        CHECK(std::log2(e2 / e3) >= 3.8);
    }

    TEST_CASE("generic rk4 integrate agrees with the rollout") {
        const OdeRhs rhs = [](double, const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = -z; };
        const Eigen::VectorXd z = rk4_integrate(rhs, Eigen::VectorXd::Ones(1), 0.0, 1.0, 100);
        CHECK(std::abs(z(0) - std::exp(-1.0)) < 1e-6);
    }

    TEST_CASE("dopri5 with zero dynamics takes one step") {
        const OdeRhs rhs = [](double, const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = Eigen::VectorXd::Zero(z.size()); };
        std::vector<double> out;
        for (int k = 0; k <= 10; ++k) out.push_back(0.1 * k);
        const auto r = dopri5(rhs, Eigen::Vector2d(1.5, -2.0), 0.0, out);
        CHECK(r.stats.accepted == 1);
        CHECK(r.stats.rejected == 0);
        for (Eigen::Index k = 0; k < r.states.rows(); ++k) CHECK((r.states.row(k) - Eigen::RowVector2d(1.5, -2.0)).norm() == 0.0);
    }

    TEST_CASE("dopri5 meets the linear oracle and tighter tolerances reduce error") {
        const OdeRhs rhs = [](double, const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = -z; };
        Dopri5Options o;
        o.rtol = 1e-8;
        o.atol = 1e-12;
        const auto tight = dopri5(rhs, Eigen::VectorXd::Ones(1), 0.0, {1.0}, o);
        const double err_tight = std::abs(tight.states(0, 0) - std::exp(-1.0));
        CHECK(err_tight < 1e-7);
        o.rtol = 1e-4;
        o.atol = 1e-8;
        const auto loose = dopri5(rhs, Eigen::VectorXd::Ones(1), 0.0, {1.0}, o);
        CHECK(std::abs(loose.states(0, 0) - std::exp(-1.0)) > err_tight);
    }

    TEST_CASE("dopri5 dense output tracks the exact solution between steps") {
        const OdeRhs rhs = [](double t, const Eigen::VectorXd& z, Eigen::VectorXd& dz) {
            dz.resize(2);
            dz << z(1), -z(0) + 0.0 * t;
        };
        std::vector<double> out;
        for (int k = 0; k <= 600; ++k) out.push_back(0.01 * k);
        Dopri5Options o;
        o.rtol = 1e-9;
        o.atol = 1e-12;
        const auto r = dopri5(rhs, Eigen::Vector2d(0.0, 1.0), 0.0, out, o);
        CHECK(r.stats.accepted < 300);  // outputs are interpolated, not stepped onto
        double worst = 0.0;
        for (std::size_t k = 0; k < out.size(); ++k) worst = std::max(worst, std::abs(r.states(static_cast<Eigen::Index>(k), 0) - std::sin(out[k])));
        CHECK(worst < 1e-7);
    }

    TEST_CASE("dopri5 fixed-step order is at least 4.5") {
        const OdeRhs rhs = [](double, const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = -z; };
        auto err = [&](double h) {
            Dopri5Options o;
            o.adaptive = false;
            o.h_initial = h;
            const auto r = dopri5(rhs, Eigen::VectorXd::Ones(1), 0.0, {2.0}, o);
            return std::abs(r.states(0, 0) - std::exp(-2.0));
        };
        const double e1 = err(0.5), e2 = err(0.25), e3 = err(0.125);
        CHECK(std::log2(e1 / e2) >= 4.5);
        CHECK(std::log2(e2 / e3) >= 4.5);
    }

    TEST_CASE("dopri5 honours stop times and rejects bad arguments") {
        const OdeRhs rhs = [](double t, const Eigen::VectorXd&, Eigen::VectorXd& dz) { dz = Eigen::VectorXd::Constant(1, t < 0.5 ? t : 1.0 - t); };
        Dopri5Options o;
        o.stops = {0.5};
        const auto r = dopri5(rhs, Eigen::VectorXd::Zero(1), 0.0, {1.0}, o);
        // Piecewise-linear forcing is integrated exactly when no step straddles the kink.
        CHECK(std::abs(r.states(0, 0) - 0.25) < 1e-13);
        bool landed = false;
        for (const auto& s : r.steps) landed = landed || std::abs(s.t + s.h - 0.5) < 1e-14;
        CHECK(landed);
        o.rtol = 0.0;
        CHECK_THROWS_AS(dopri5(rhs, Eigen::VectorXd::Zero(1), 0.0, {1.0}, o), InvalidInput);
    }

    TEST_CASE("stiff blow-up is reported as a stiffness error") {
        const OdeRhs rhs = [](double, const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = z.array().square().matrix(); };
        Dopri5Options o;
        CHECK_THROWS_AS(dopri5(rhs, Eigen::VectorXd::Ones(1), 0.0, {2.0}, o), NumericalError);
    }

    TEST_CASE("non-finite rollout reports the step index") {
        Mlp f = linear_decay_net(1e200);
        const Eigen::MatrixXd v = Eigen::MatrixXd::Zero(5, 1);
        try {
            rk4_rollout(f, Eigen::VectorXd::Ones(1), v, 1.0);
            FAIL("expected divergence");
        } catch (const DivergenceError& e) {
            CHECK(e.index() >= 1);
        }
    }

    TEST_CASE("latent dopri5 matches rk4 on smooth dynamics") {
        const Mlp f = random_net({4, 6, 2}, 5);
        std::mt19937_64 rng(2);
        const Eigen::MatrixXd v = random_matrix(11, 2, rng, 0.5);
        const Eigen::VectorXd z0 = random_matrix(2, 1, rng);
        const Eigen::MatrixXd zr = rk4_rollout(f, z0, v, 0.1, InputHold::linear, 8);
        const auto run = dopri5_integrate(f, z0, v, 0.1, InputHold::linear, 1e-10, 1e-12);
        CHECK((zr - run.z).cwiseAbs().maxCoeff() < 1e-7);
        const Eigen::MatrixXd zh = rk4_rollout(f, z0, v, 0.1, InputHold::zero_order, 8);
        const auto runh = dopri5_integrate(f, z0, v, 0.1, InputHold::zero_order, 1e-10, 1e-12);
        CHECK((zh - runh.z).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_SUITE("rollout gradients") {
    void check_rollout_gradient(InputHold hold, int substeps, bool adaptive) {
        Mlp f = random_net({4, 5, 5, 2}, 31);
        std::mt19937_64 rng(17);
        Eigen::VectorXd z0 = random_matrix(2, 1, rng);
        Eigen::MatrixXd v = random_matrix(6, 2, rng);
        const Eigen::MatrixXd w = random_matrix(6, 2, rng);
        const double dt = 0.2;
        auto forward = [&] {
            if (adaptive) return dopri5_integrate(f, z0, v, dt, hold, 1e-3, 1e-6).z;
            return rk4_rollout(f, z0, v, dt, hold, substeps);
        };
        const auto loss = [&] { return (w.array() * forward().array()).sum(); };
        RolloutGradient g;
        NodeIntegration run;
        if (adaptive) {
            run = dopri5_integrate(f, z0, v, dt, hold, 1e-3, 1e-6);
            g = dopri5_backward(f, run, v, dt, hold, w);
        } else {
            g = rk4_rollout_backward(f, forward(), v, dt, hold, substeps, w);
        }
        // FD through an adaptive integrator is valid while the step pattern is unchanged.
        double worst = 0.0;
        auto ps = f.spans();
        auto gs = g.params.spans();
        for (std::size_t b = 0; b < ps.size(); ++b) worst = std::max(worst, fd::coordinate_mismatch(ps[b].data, gs[b].data, ps[b].size, loss));
        CHECK(worst < 1e-5);
        CHECK(fd::coordinate_mismatch(z0.data(), g.z0.data(), z0.size(), loss) < 1e-5);
        CHECK(fd::coordinate_mismatch(v.data(), g.v.data(), v.size(), loss) < 1e-5);
        if (adaptive) {
            const auto again = dopri5_integrate(f, z0, v, dt, hold, 1e-3, 1e-6);
            CHECK(again.steps.size() == run.steps.size());
        }
    }

    TEST_CASE("rk4 rollout gradient, zero-order hold") { check_rollout_gradient(InputHold::zero_order, 1, false); }
    TEST_CASE("rk4 rollout gradient, linear input, two substeps") { check_rollout_gradient(InputHold::linear, 2, false); }
    TEST_CASE("dopri5 gradient through accepted steps") { check_rollout_gradient(InputHold::linear, 1, true); }
}

TEST_SUITE("optimizer") {
    TEST_CASE("zero gradients leave parameters unchanged") {
        Eigen::VectorXd p = Eigen::Vector3d(1, 2, 3), g = Eigen::Vector3d::Zero();
        AdaBelief opt;
        for (int i = 0; i < 10; ++i) opt.step({{p.data(), 3}}, {{g.data(), 3}});
        CHECK(p == Eigen::Vector3d(1, 2, 3));
    }

    TEST_CASE("constant gradient follows the closed-form recursion") {
        // Independent scalar oracle of the same recursions.
        const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-16, gv = 0.37;
        double m = 0.0, s = 0.0, x = 0.0;
        std::vector<double> expected_steps;
        for (int t = 1; t <= 50; ++t) {
            m = b1 * m + (1 - b1) * gv;
            s = b2 * s + (1 - b2) * (gv - m) * (gv - m) + eps;
            const double mh = m / (1 - std::pow(b1, t)), sh = s / (1 - std::pow(b2, t));
            const double step = lr * mh / (std::sqrt(sh) + eps);
            x -= step;
            expected_steps.push_back(step);
        }
        Eigen::VectorXd p = Eigen::VectorXd::Zero(1), g = Eigen::VectorXd::Constant(1, gv);
        AdaBelief opt;
        double prev = 0.0;
        for (int t = 1; t <= 50; ++t) {
            opt.step({{p.data(), 1}}, {{g.data(), 1}});
            const double step = prev - p(0);
            prev = p(0);
            CHECK(step == doctest::Approx(expected_steps[static_cast<std::size_t>(t - 1)]).epsilon(1e-12));
        }
        CHECK(p(0) == doctest::Approx(x).epsilon(1e-12));
        // Hand value of the first step: m_hat = g, s_hat = 0.81 g^2 (+eps terms), so lr / 0.9.
        CHECK(expected_steps[0] == doctest::Approx(lr / 0.9).epsilon(1e-9));
        // The residual g - m shrinks geometrically, so the belief collapses and steps grow past lr.
        for (std::size_t t = 1; t < expected_steps.size(); ++t) CHECK(expected_steps[t] > expected_steps[t - 1]);
    }

    TEST_CASE("identical runs are bit-identical") {
        auto run = [] {
            Mlp net = random_net({3, 4, 1}, 5);
            AdaBelief opt;
            std::mt19937_64 rng(9);
            for (int i = 0; i < 20; ++i) {
                const Eigen::VectorXd x = random_matrix(3, 1, rng);
                auto r = vjp(net, x, Eigen::VectorXd::Ones(1));
                auto gs = r.grad_params.spans();
                clip_gradients(net.spans(), gs, 0.01);
                opt.step(net.spans(), gs);
            }
            return net;
        };
        const Mlp a = run(), b = run();
        for (std::size_t l = 0; l < a.layer_count(); ++l) CHECK(a.layer(l).w == b.layer(l).w);
    }

    TEST_CASE("clipping bounds the block norm and keeps direction") {
        Eigen::VectorXd p = Eigen::Vector2d(0.6, 0.8);  // unit norm
        Eigen::VectorXd g = Eigen::Vector2d(300.0, -400.0);
        const Eigen::VectorXd g0 = g;
        CHECK(clip_gradients({{p.data(), 2}}, {{g.data(), 2}}, 0.01) == 1);
        CHECK(g.norm() == doctest::Approx(0.01).epsilon(1e-14));
        CHECK(std::abs(g.normalized().dot(g0.normalized()) - 1.0) < 1e-14);
        Eigen::VectorXd small = Eigen::Vector2d(1e-5, 2e-5);
        const Eigen::VectorXd small0 = small;
        CHECK(clip_gradients({{p.data(), 2}}, {{small.data(), 2}}, 0.01) == 0);
        CHECK(small == small0);
        // Zero-initialised block: the floor keeps a usable limit.
        Eigen::VectorXd zp = Eigen::Vector2d::Zero(), zg = Eigen::Vector2d(3.0, 4.0);
        clip_gradients({{zp.data(), 2}}, {{zg.data(), 2}}, 0.01, 1e-3);
        CHECK(zg.norm() == doctest::Approx(1e-5).epsilon(1e-12));
        CHECK_THROWS_AS(clip_gradients({{p.data(), 2}}, {{g.data(), 2}}, 0.0), InvalidInput);
    }
}
