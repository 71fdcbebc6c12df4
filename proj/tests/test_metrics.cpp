#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dedtwin/error.hpp"
#include "dedtwin/metrics.hpp"

using namespace dedtwin;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 2.0 * uniform01(rng) - 1.0;
    return m;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
    const auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

}  // namespace

TEST_SUITE("metrics") {
    TEST_CASE("NRMSE hand cases") {
        // truth mean 1, sum of squares 4, per-time share 2
        Eigen::MatrixXd truth(2, 2);
        truth << 0, 0, 2, 2;
        CHECK(nrmse_at_time(truth, truth, 0) == 0.0);
        Eigen::MatrixXd a = truth;
        a.row(0) << 1, 1;
        CHECK(nrmse_at_time(a, truth, 0) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(nrmse_at_time(a, truth, 1) == 0.0);
        CHECK(nrmse_total(a, truth) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
        Eigen::MatrixXd b = truth;
        b.row(1) << 4, 2;
        CHECK(nrmse_at_time(b, truth, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
        b.row(1) << 4, 4;
        CHECK(nrmse_series(b, truth)[1] == doctest::Approx(2.0).epsilon(1e-15));
        Eigen::MatrixXd y(2, 1);
        y << 0, 2;
        CHECK(nrmse_at_time(Eigen::MatrixXd::Zero(2, 1), y, 1) == doctest::Approx(2.0).epsilon(1e-15));
        CHECK(nrmse_total(Eigen::MatrixXd::Zero(2, 1), y) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
        // predicting the mean everywhere scores exactly one
        CHECK(nrmse_total(Eigen::MatrixXd::Constant(2, 2, 1.0), truth) == doctest::Approx(1.0).epsilon(1e-15));
    }

    TEST_CASE("NRMSE invariants on random data") {
        std::mt19937_64 rng(12);
        for (int trial = 0; trial < 25; ++trial) {
            const Eigen::Index nt = 2 + static_cast<Eigen::Index>(uniform01(rng) * 10);
            const Eigen::Index ns = 1 + static_cast<Eigen::Index>(uniform01(rng) * 10);
            const Eigen::MatrixXd y = random_matrix(rng, nt, ns);
            const Eigen::MatrixXd p = y + 0.1 * random_matrix(rng, nt, ns);
            const double a = 0.1 + 10.0 * uniform01(rng), s = 500.0 * (uniform01(rng) - 0.5);
            const Eigen::MatrixXd pa = (a * p.array() + s).matrix(), ya = (a * y.array() + s).matrix();
            CHECK(nrmse_total(pa, ya) == doctest::Approx(nrmse_total(p, y)).epsilon(1e-9));
            CHECK(nrmse_at_time(-p, -y, 0) == doctest::Approx(nrmse_at_time(p, y, 0)).epsilon(1e-12));
            CHECK(nrmse_total(y, y) == 0.0);
            double sq = 0.0;
            for (double v : nrmse_series(p, y)) sq += v * v;
            CHECK(sq / static_cast<double>(nt) == doctest::Approx(std::pow(nrmse_total(p, y), 2)).epsilon(1e-10));
        }
    }

    TEST_CASE("NRMSE rejects bad shapes and degenerate truth") {
        const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(3, 2, 7.0);
        CHECK_THROWS_AS(nrmse_total(flat, flat), DegenerateData);
        CHECK_THROWS_AS(nrmse_total(Eigen::MatrixXd(0, 0), Eigen::MatrixXd(0, 0)), DegenerateData);
        CHECK_THROWS_AS(nrmse_total(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(3, 2)), DimensionMismatch);
        Eigen::MatrixXd t(2, 1);
        t << 0, 1;
        CHECK_THROWS_AS(nrmse_at_time(t, t, 2), InvalidInput);
    }

    TEST_CASE("Richardson recovers the order of a power law") {
        for (double p : {1.0, 2.0, 4.0}) {
            auto f = [p](double h) { return 3.0 + 0.7 * std::pow(h, p); };
            const RichardsonResult r = richardson_error(f(0.4), f(0.2), f(0.1));
            CHECK(r.order == doctest::Approx(p).epsilon(1e-9));
            CHECK(r.extrapolated == doctest::Approx(3.0).epsilon(1e-12));
            CHECK(r.relative_error == doctest::Approx(0.7 * std::pow(0.1, p) / 3.0).epsilon(1e-6));
        }
        // refinement ratio 3
        auto g = [](double h) { return -1.0 + h * h; };
        CHECK(richardson_error(g(0.9), g(0.3), g(0.1), 3.0).order == doctest::Approx(2.0).epsilon(1e-9));
    }

    TEST_CASE("Richardson refuses non-monotone triplets") {
        CHECK_THROWS_AS(richardson_error(1.0, 1.0, 1.0), ConvergenceRegimeError);
        CHECK_THROWS_AS(richardson_error(1.0, 2.0, 1.5), ConvergenceRegimeError);
        CHECK_THROWS_AS(richardson_error(1.0, 0.5, 0.5), ConvergenceRegimeError);
        CHECK_THROWS_AS(richardson_error(3.0, 2.0, 1.0, 1.0), InvalidInput);
    }

    TEST_CASE("timing statistics") {
        int calls = 0;
        const TimingStats s = time_repeats([&] { ++calls; }, 7);
        CHECK(calls == 7);
        CHECK(s.repeats == 7);
        CHECK(s.mean >= 0.0);
        CHECK(s.stddev >= 0.0);
        CHECK_THROWS_AS(time_repeats([] {}, 4), InvalidInput);
        volatile double sink = 0.0;
        const BenchmarkReport b = benchmark_inference(
            [&] { sink = sink + 1.0; },
            [&] {
                for (int i = 0; i < 200000; ++i) sink = sink + std::sqrt(static_cast<double>(i));
            },
            5);
        CHECK(b.speedup == doctest::Approx(b.simulator.mean / b.surrogate.mean));
        CHECK(b.speedup > 1.0);
    }

    TEST_CASE("latent sweep trains each cell and records failures") {
        std::mt19937_64 rng(13);
        SweepData d;
        d.q = random_matrix(rng, 6, 3);
        d.t = random_matrix(rng, 6, 3);
        d.sigma = random_matrix(rng, 6, 3);
        d.point_hash = 42;
        SurrogateConfig c;
        c.encoder_hidden = {4};
        c.node_hidden = {4};
        TrainConfig t;
        t.epochs = 3;
        std::vector<int> seen;
        const auto rows = latent_sweep(d, {0, 1, 2}, {5}, c, t, [&](const SweepRow& r) { seen.push_back(r.n_l); });
        REQUIRE(rows.size() == 3);
        CHECK(seen == std::vector<int>{0, 1, 2});
        CHECK_FALSE(rows[0].failure.empty());
        CHECK(rows[1].failure.empty());
        CHECK(rows[2].failure.empty());
        CHECK(rows[1].errors.q_to_sigma > 0.0);
        const int best = best_latent(rows);
        CHECK((best == 1 || best == 2));
        CHECK(best_latent({rows[0]}) == 0);
        CHECK_THROWS_AS(latent_sweep(d, {1, 2, 3}, {1, 2}, c, t), InvalidInput);

        const auto dir = scratch_dir("dedtwin_sweep_test");
        write_sweep_csv(dir / "sweep.csv", rows);
        write_sweep_svg(dir / "sweep.svg", rows);
        const std::string csv = slurp(dir / "sweep.csv");
        CHECK(csv.rfind("n_l,q_to_t,t_to_sigma,q_to_sigma,failure\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
        CHECK(slurp(dir / "sweep.svg").find("<svg") != std::string::npos);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("report writers") {
        const auto dir = scratch_dir("dedtwin_writer_test");
        write_csv(dir / "a.csv", {"t", "v"}, {{0.0, 0.1}, {1.5, 2.5}});
        CHECK(slurp(dir / "a.csv") == "t,v\n0,1.5\n0.1,2.5\n");
        CHECK_THROWS_AS(write_csv(dir / "b.csv", {"t"}, {{0.0}, {1.0}}), DimensionMismatch);
        CHECK_THROWS_AS(write_csv(dir / "b.csv", {"t", "v"}, {{0.0}, {1.0, 2.0}}), DimensionMismatch);

        write_svg_plot(dir / "p.svg", {{"a<b", {0.0, 1.0, 2.0}, {1.0, 10.0, 100.0}}}, {"title", "x", "y", true});
        const std::string svg = slurp(dir / "p.svg");
        CHECK(svg.find("<svg") != std::string::npos);
        CHECK(svg.find("a&lt;b") != std::string::npos);
        CHECK(svg.find("</svg>") != std::string::npos);

        const std::map<std::string, std::string> v{{"b", "2"}, {"a", "x y"}};
        write_summary(dir / "s.txt", v);
        CHECK(read_summary(dir / "s.txt") == v);
        CHECK(slurp(dir / "s.txt").find("a = x y") < slurp(dir / "s.txt").find("b = 2"));
        std::filesystem::remove_all(dir);
    }
}
