#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "dedtwin/error.hpp"
#include "dedtwin/surrogate.hpp"

using namespace dedtwin;

namespace {

SurrogateConfig tiny_config(InputHold hold = InputHold::linear) {
    SurrogateConfig c;
    c.n_l = 2;
    c.encoder_hidden = {6};
    c.node_hidden = {5};
    c.train_hold = hold;
    c.infer_hold = hold;
    return c;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 2.0 * uniform01(rng) - 1.0;
    return m;
}

// Perturb the zero-initialised output layer so the latent dynamics are non-trivial.
void randomize_node(SurrogateModel& m, std::mt19937_64& rng) {
    auto& last = m.node.layer(m.node.layer_count() - 1);
    last.w = 0.5 * random_matrix(rng, last.w.rows(), last.w.cols());
    last.b = 0.1 * random_matrix(rng, last.b.rows(), 1);
}

std::vector<Mlp*> networks(SurrogateModel& m) { return {&m.phi_y, &m.psi_u, &m.decoder, &m.node}; }

}  // namespace

TEST_SUITE("surrogate") {
    TEST_CASE("read-out sublattice") {
        const StructuredGrid grid(GridSpec{});
        const PointSet p = PointSet::sublattice(grid);
        CHECK(p.size() == 306);
        // x index round(8 * 50 / 16) = 25 sits under the probe
        CHECK(std::find(p.nodes.begin(), p.nodes.end(), static_cast<std::int64_t>(grid.node(25, 0, 0))) != p.nodes.end());
        CHECK(std::find(p.nodes.begin(), p.nodes.end(), static_cast<std::int64_t>(grid.node(50, 10, 10))) !=
              p.nodes.end());
        PointSet q = p;
        std::swap(q.nodes[0], q.nodes[1]);
        CHECK(q.hash() != p.hash());
        CHECK(PointSet::sublattice(grid).hash() == p.hash());
    }

    TEST_CASE("normaliser uses the pooled mean and deviation") {
        Eigen::MatrixXd a(1, 2), b(1, 2);
        a << 1.0, 2.0;
        b << 3.0, 6.0;
        const Normalizer n = Normalizer::fit({&a, &b});
        CHECK(n.mean == doctest::Approx(3.0));
        CHECK(n.stddev == doctest::Approx(std::sqrt((4.0 + 1.0 + 0.0 + 9.0) / 4.0)));
        CHECK((n.invert(n.apply(b)) - b).norm() < 1e-14);
    }

    TEST_CASE("prediction shapes and dimension checks") {
        std::mt19937_64 rng(3);
        SurrogateModel m = SurrogateModel::create(7, tiny_config(), rng);
        CHECK(m.n_s() == 7);
        CHECK(m.encode_state(Eigen::VectorXd::Zero(7)).size() == 2);
        const Eigen::MatrixXd u = random_matrix(rng, 11, 7);
        CHECK(m.encode_input(u).rows() == 11);
        CHECK(m.encode_input(u).cols() == 2);
        const Eigen::MatrixXd y = m.predict(Eigen::VectorXd::Ones(7), u);
        CHECK(y.rows() == 11);
        CHECK(y.cols() == 7);
        CHECK_THROWS_AS(m.predict(Eigen::VectorXd::Ones(6), u), DimensionMismatch);
        CHECK_THROWS_AS(m.encode_input(random_matrix(rng, 4, 5)), DimensionMismatch);
        CHECK_THROWS_AS(m.decode(Eigen::MatrixXd::Zero(3, 3)), DimensionMismatch);
    }

    TEST_CASE("zero dynamics hold the decoded initial state") {
        std::mt19937_64 rng(4);
        SurrogateModel m = SurrogateModel::create(5, tiny_config(), rng);
        auto& last = m.node.layer(m.node.layer_count() - 1);
        last.w.setZero();
        last.b.setZero();
        const Eigen::VectorXd y0 = random_matrix(rng, 5, 1);
        const Eigen::MatrixXd u = random_matrix(rng, 9, 5);
        for (Integrator i : {Integrator::rk4, Integrator::dopri5}) {
            m.cfg.infer_integrator = i;
            const Eigen::MatrixXd y = m.predict(y0, u);
            const Eigen::MatrixXd rec = m.decode(m.encode_state(y0).transpose());
            for (Eigen::Index k = 0; k < y.rows(); ++k) CHECK((y.row(k) - rec.row(0)).norm() < 1e-12);
        }
    }

    TEST_CASE("integrators agree on smooth latent dynamics") {
        std::mt19937_64 rng(5);
        SurrogateModel m = SurrogateModel::create(4, tiny_config(), rng);
        randomize_node(m, rng);
        const Eigen::VectorXd z0 = random_matrix(rng, 2, 1);
        Eigen::MatrixXd v(21, 2);
        for (Eigen::Index k = 0; k < v.rows(); ++k) v.row(k) << std::sin(0.3 * k), std::cos(0.2 * k);
        m.cfg.rk4_substeps = 20;
        const Eigen::MatrixXd a = m.integrate(z0, v, Integrator::rk4);
        const Eigen::MatrixXd b = m.integrate(z0, v, Integrator::dopri5);
        CHECK((a.row(0) - z0.transpose()).norm() == 0.0);
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5);
    }

    TEST_CASE("training loss gradient matches central differences") {
        for (InputHold hold : {InputHold::zero_order, InputHold::linear}) {
            std::mt19937_64 rng(6);
            SurrogateModel m = SurrogateModel::create(3, tiny_config(hold), rng);
            randomize_node(m, rng);
            m.dt = 0.1;
            const std::vector<TrainingPair> data{{random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)},
                                                 {random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)}};
            ModelGradient g{m.phi_y.zeros_like(), m.psi_u.zeros_like(), m.decoder.zeros_like(), m.node.zeros_like()};
            surrogate_loss(m, data, 0.7, &g);
            std::vector<Mlp*> grads{&g.phi_y, &g.psi_u, &g.decoder, &g.node};
            const auto nets = networks(m);
            for (std::size_t n = 0; n < nets.size(); ++n) {
                auto params = nets[n]->spans();
                auto gspans = grads[n]->spans();
                for (std::size_t s = 0; s < params.size(); ++s) {
                    for (int pick = 0; pick < 2; ++pick) {
                        const auto idx = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(params[s].size));
                        double& p = params[s].data[idx];
                        const double p0 = p, h = 1e-4;
                        auto at = [&](double x) {
                            p = x;
                            return surrogate_loss(m, data, 0.7, nullptr).total;
                        };
                        const double fd = (-at(p0 + 2 * h) + 8 * at(p0 + h) - 8 * at(p0 - h) + at(p0 - 2 * h)) / (12 * h);
                        p = p0;
                        const double an = gspans[s].data[idx];
                        CHECK(std::abs(fd - an) <= 1e-6 * std::max(1.0, std::abs(an)));
                    }
                }
            }
        }
    }

    TEST_CASE("training is deterministic for a fixed seed") {
        std::mt19937_64 rng(7);
        const std::vector<TrainingPair> data{{random_matrix(rng, 6, 4), random_matrix(rng, 6, 4)}};
        TrainConfig t;
        t.epochs = 15;
        const TrainResult a = train_surrogate(data, 1, 0.1, tiny_config(), t);
        const TrainResult b = train_surrogate(data, 1, 0.1, tiny_config(), t);
        CHECK(a.loss_history == b.loss_history);
        CHECK(a.best_loss <= a.loss_history.front());
        t.seed = 99;
        const TrainResult c = train_surrogate(data, 1, 0.1, tiny_config(), t);
        CHECK(c.loss_history != a.loss_history);
        t.epochs = 0;
        CHECK_THROWS_AS(train_surrogate(data, 1, 0.1, tiny_config(), t), InvalidInput);
    }

    TEST_CASE("bundle round trip and point-set check") {
        std::mt19937_64 rng(8);
        SurrogateModel m = SurrogateModel::create(4, tiny_config(), rng);
        randomize_node(m, rng);
        m.point_hash = 0xabcdef;
        m.y_norm = {300.0, 20.0};
        const auto path = std::filesystem::temp_directory_path() / "dedtwin_bundle_test.dsrg";
        save_bundle(path, m);
        const SurrogateModel back = load_bundle(path);
        std::filesystem::remove(path);
        const Eigen::MatrixXd u = random_matrix(rng, 5, 4);
        const Eigen::VectorXd y0 = random_matrix(rng, 4, 1);
        CHECK((back.predict(y0, u) - m.predict(y0, u)).norm() == 0.0);
        CHECK_NOTHROW(back.check_points(0xabcdef));
        CHECK_THROWS_AS(back.check_points(0xabcdee), StaleArtifactError);
        CHECK_THROWS(load_bundle("/nonexistent/model.dsrg"));
    }

    TEST_CASE("chained prediction starts the stress model from zero") {
        std::mt19937_64 rng(9);
        SurrogateModel mt = SurrogateModel::create(4, tiny_config(), rng);
        SurrogateModel ms = SurrogateModel::create(4, tiny_config(), rng);
        const Eigen::MatrixXd q = random_matrix(rng, 6, 4);
        const Eigen::VectorXd t0 = Eigen::VectorXd::Constant(4, 293.15);
        const ChainPrediction c = chain_predict(mt, ms, q, t0);
        CHECK((c.temperature - mt.predict(t0, q)).norm() == 0.0);
        CHECK((c.stress - ms.predict(Eigen::VectorXd::Zero(4), c.temperature)).norm() == 0.0);
        ms.point_hash = 5;
        CHECK_THROWS_AS(chain_predict(mt, ms, q, t0), StaleArtifactError);
    }
}
