#include "dedtwin/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "dedtwin/error.hpp"
#include "dedtwin/hash.hpp"
#include "dedtwin/metrics.hpp"
#include "dedtwin/text_util.hpp"

namespace dedtwin {

namespace fs = std::filesystem;

namespace {

const char* const kManifest = "manifest.txt";
const char* const kLock = ".dedtwin.lock";

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Stage> upstream(Stage s) {
    switch (s) {
        case Stage::simulate: return {};
        case Stage::mechanics: return {Stage::simulate};
        case Stage::sample: return {Stage::mechanics};
        case Stage::train: return {Stage::sample};
        case Stage::evaluate: return {Stage::train};
        case Stage::report: return {Stage::evaluate};
        case Stage::predict: return {Stage::train};
        case Stage::bench: return {Stage::train};
        case Stage::sweep: return {Stage::sample};
        case Stage::richardson: return {};
    }
    return {};
}

// Config sections each stage reads directly.
std::vector<std::string> own_keys(Stage s) {
    switch (s) {
        case Stage::simulate:
            return {"material.", "grid.", "thermal.", "eval.heldout_power", "eval.no_laser"};
        case Stage::mechanics: return {"mech."};
        case Stage::sample: return {"points."};
        case Stage::train: return {"surrogate.", "train."};
        case Stage::evaluate: return {"eval.probe_"};
        case Stage::report: return {};
        case Stage::predict: return {};
        case Stage::bench: return {"eval.bench_"};
        case Stage::sweep: return {"surrogate.", "train.", "eval.sweep_"};
        case Stage::richardson:
            return {"material.", "grid.lx", "grid.ly", "grid.lz", "grid.full_width", "thermal.", "eval.probe_",
                    "eval.richardson_"};
    }
    return {};
}

void collect_keys(Stage s, std::set<std::string>& prefixes) {
    for (const auto& k : own_keys(s)) prefixes.insert(k);
    for (Stage u : upstream(s)) collect_keys(u, prefixes);
}

struct Context {
    const RunConfig& cfg;
    const PipelineOptions& opt;
    fs::path dir;
    Manifest manifest;
    StructuredGrid grid;
    MaterialModel material;
    PointSet points;

    Context(const RunConfig& c, const PipelineOptions& o)
        : cfg(c), opt(o), dir(c.out), manifest(Manifest::load(c.out)), grid(c.grid), material(load_material(c)),
          points(PointSet::sublattice(grid, c.points.mx, c.points.my, c.points.mz)) {}

    void log(const std::string& s) const {
        if (opt.log) opt.log(s);
    }
    fs::path path(const std::string& name) const { return dir / name; }

    void record(Stage s, const std::string& name, StageOutcome& out) {
        manifest.artifacts[name] = {stage_name(s), fnv1a_file(path(name))};
        out.written.push_back(name);
    }

    bool complete(Stage s) const {
        const auto it = manifest.stage_hash.find(stage_name(s));
        if (it == manifest.stage_hash.end() || it->second != hex64(stage_fingerprint(cfg, s))) return false;
        bool any = false;
        for (const auto& [name, a] : manifest.artifacts) {
            if (a.stage != stage_name(s)) continue;
            any = true;
            if (!fs::exists(path(name)) || fnv1a_file(path(name)) != a.hash) return false;
        }
        return any;
    }

    void require(Stage s) const {
        const std::string name = stage_name(s);
        const auto it = manifest.stage_hash.find(name);
        if (it == manifest.stage_hash.end()) {
            throw DependencyError("artifacts of stage '" + name + "' are missing in " + dir.string() +
                                  "; run the '" + name + "' stage first");
        }
        if (it->second != hex64(stage_fingerprint(cfg, s))) {
            throw StaleArtifactError("artifacts of stage '" + name + "' were made with a different config; rerun '" +
                                     name + "'");
        }
        for (const auto& [file, a] : manifest.artifacts) {
            if (a.stage == name && !fs::exists(path(file))) {
                throw DependencyError("artifact " + file + " of stage '" + name + "' is missing; rerun '" + name + "'");
            }
        }
    }
};

ThermalConfig scenario_thermal(const RunConfig& cfg, const std::string& tag) {
    ThermalConfig t = cfg.thermal;
    if (tag == "heldout") t.power = cfg.eval.heldout_power;
    if (tag == "nolaser") t.power = 0.0;
    return t;
}

FieldTrajectory read_required(const Context& ctx, const std::string& name) {
    if (!fs::exists(ctx.path(name))) throw DependencyError("missing artifact " + ctx.path(name).string());
    return read_dtrj(ctx.path(name));
}

FieldTrajectory sampled_trajectory(FieldKind kind, const GridSpec& grid, const std::vector<double>& times,
                                   const PointSet& points, const Eigen::MatrixXd& values) {
    FieldTrajectory t;
    t.kind = kind;
    t.grid = grid;
    t.times = times;
    t.components = 1;
    t.points = points.nodes;
    t.data = values;
    return t;
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

// Index of the stored point closest to a physical location.
std::size_t nearest_point(const FieldTrajectory& traj, const std::array<double, 3>& p) {
    const StructuredGrid grid(traj.grid);
    std::size_t best = 0;
    double dmin = std::numeric_limits<double>::infinity();
    const std::size_t n = traj.point_count();
    for (std::size_t i = 0; i < n; ++i) {
        const auto node = traj.points.empty() ? i : static_cast<std::size_t>(traj.points[i]);
        const auto x = grid.position(node);
        const double d = (x[0] - p[0]) * (x[0] - p[0]) + (x[1] - p[1]) * (x[1] - p[1]) + (x[2] - p[2]) * (x[2] - p[2]);
        if (d < dmin) {
            dmin = d;
            best = i;
        }
    }
    return best;
}

struct Loaded {
    Eigen::MatrixXd q, t, s;
    std::vector<double> times;
    bool has_stress = false;
};

Loaded load_scenario(const Context& ctx, const std::string& tag) {
    Loaded out;
    const FieldTrajectory q = read_required(ctx, "q_" + tag + ".dtrj");
    const FieldTrajectory t = read_required(ctx, "t_" + tag + ".dtrj");
    out.q = as_matrix(q);
    out.t = as_matrix(t);
    out.times = t.times;
    if (ctx.cfg.mechanics) {
        out.s = as_matrix(read_required(ctx, "s11_" + tag + ".dtrj"));
        out.has_stress = true;
    }
    return out;
}

void run_simulate(Context& ctx, StageOutcome& out) {
    for (const auto& tag : scenarios(ctx.cfg)) {
        ctx.log("simulate: thermal run '" + tag + "'");
        const auto t0 = std::chrono::steady_clock::now();
        const FieldTrajectory traj = simulate_thermal(ctx.grid, ctx.material, scenario_thermal(ctx.cfg, tag));
        ctx.manifest.values["timing.thermal." + tag] = num(seconds_since(t0));
        write_dtrj(ctx.path("temperature_" + tag + ".dtrj"), traj);
        ctx.record(Stage::simulate, "temperature_" + tag + ".dtrj", out);
    }
}

void run_mechanics(Context& ctx, StageOutcome& out) {
    if (!ctx.cfg.mechanics) {
        std::ofstream(ctx.path("mechanics_disabled.txt")) << "mech.enabled = false\n";
        ctx.record(Stage::mechanics, "mechanics_disabled.txt", out);
        return;
    }
    const MechBoundary bc = make_boundary(ctx.cfg, ctx.grid);
    for (const auto& tag : scenarios(ctx.cfg)) {
        ctx.log("mechanics: run '" + tag + "'");
        const FieldTrajectory temp = read_required(ctx, "temperature_" + tag + ".dtrj");
        const auto t0 = std::chrono::steady_clock::now();
        const MechanicalRun run = run_mechanical(temp, ctx.grid, ctx.material, ctx.cfg.mech, bc);
        ctx.manifest.values["timing.mechanics." + tag] = num(seconds_since(t0));
        if (!run.eps_pe_monotone) throw NumericalError("equivalent plastic strain decreased during the run");
        write_dtrj(ctx.path("stress_" + tag + ".dtrj"), run.stress);
        ctx.record(Stage::mechanics, "stress_" + tag + ".dtrj", out);
    }
}

void run_sample(Context& ctx, StageOutcome& out) {
    for (const auto& tag : scenarios(ctx.cfg)) {
        const FieldTrajectory temp = read_required(ctx, "temperature_" + tag + ".dtrj");
        const Eigen::MatrixXd q = sample_heat_source(ctx.grid, scenario_thermal(ctx.cfg, tag), ctx.points, temp.times);
        write_dtrj(ctx.path("q_" + tag + ".dtrj"),
                   sampled_trajectory(FieldKind::heat_source, ctx.cfg.grid, temp.times, ctx.points, q));
        ctx.record(Stage::sample, "q_" + tag + ".dtrj", out);
        write_dtrj(ctx.path("t_" + tag + ".dtrj"), temp.sample(ctx.points.nodes));
        ctx.record(Stage::sample, "t_" + tag + ".dtrj", out);
        if (ctx.cfg.mechanics) {
            const FieldTrajectory stress = read_required(ctx, "stress_" + tag + ".dtrj");
            FieldTrajectory s11 = stress.component(0).sample(ctx.points.nodes);
            s11.kind = FieldKind::sampled;
            write_dtrj(ctx.path("s11_" + tag + ".dtrj"), s11);
            ctx.record(Stage::sample, "s11_" + tag + ".dtrj", out);
        }
    }
}

void write_loss(const fs::path& path, const std::vector<double>& loss) {
    std::vector<double> epoch(loss.size());
    for (std::size_t i = 0; i < loss.size(); ++i) epoch[i] = static_cast<double>(i);
    write_csv(path, {"epoch", "loss"}, {epoch, loss});
}

struct TrainingSets {
    std::vector<TrainingPair> thermal, stress;
};

TrainingSets training_sets(const Context& ctx) {
    TrainingSets sets;
    const Loaded main = load_scenario(ctx, "main");
    sets.thermal.push_back({main.q, main.t});
    if (main.has_stress) sets.stress.push_back({main.t, main.s});
    if (ctx.cfg.eval.no_laser) {
        const Loaded zero = load_scenario(ctx, "nolaser");
        sets.thermal.push_back({zero.q, zero.t});
        if (zero.has_stress) sets.stress.push_back({zero.t, zero.s});
    }
    return sets;
}

void run_train(Context& ctx, StageOutcome& out) {
    const TrainingSets sets = training_sets(ctx);
    const double dt = ctx.cfg.thermal.dt_readout;
    auto progress = [&](const std::string& what) {
        return [&ctx, what, epochs = ctx.cfg.train.epochs](int e, const LossBreakdown& l) {
            if ((e + 1) % 500 == 0 || e + 1 == epochs) {
                ctx.log("train " + what + ": epoch " + std::to_string(e + 1) + " loss " + num(l.total));
            }
        };
    };
    auto t0 = std::chrono::steady_clock::now();
    const TrainResult rt = train_surrogate(sets.thermal, ctx.points.hash(), dt, ctx.cfg.surrogate, ctx.cfg.train,
                                           progress("Q->T"));
    ctx.manifest.values["timing.train.thermal"] = num(seconds_since(t0));
    ctx.manifest.values["train.thermal.best_loss"] = num(rt.best_loss);
    ctx.manifest.values["train.thermal.best_epoch"] = std::to_string(rt.best_epoch);
    save_bundle(ctx.path("model_t.dsrg"), rt.model);
    ctx.record(Stage::train, "model_t.dsrg", out);
    write_loss(ctx.path("loss_t.csv"), rt.loss_history);
    ctx.record(Stage::train, "loss_t.csv", out);
    if (sets.stress.empty()) return;
    t0 = std::chrono::steady_clock::now();
    const TrainResult rs = train_surrogate(sets.stress, ctx.points.hash(), dt, ctx.cfg.surrogate, ctx.cfg.train,
                                           progress("T->sigma"));
    ctx.manifest.values["timing.train.stress"] = num(seconds_since(t0));
    ctx.manifest.values["train.stress.best_loss"] = num(rs.best_loss);
    ctx.manifest.values["train.stress.best_epoch"] = std::to_string(rs.best_epoch);
    save_bundle(ctx.path("model_s.dsrg"), rs.model);
    ctx.record(Stage::train, "model_s.dsrg", out);
    write_loss(ctx.path("loss_s.csv"), rs.loss_history);
    ctx.record(Stage::train, "loss_s.csv", out);
}

SurrogateModel load_model(const Context& ctx, const std::string& name) {
    SurrogateModel m = load_bundle(ctx.path(name));
    m.check_points(ctx.points.hash());
    return m;
}

double max_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

// Root-mean-square deviation over a reference standard deviation (for trajectories without variance).
double relative_rms(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, double reference_std) {
    return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(truth.size())) / reference_std;
}

double field_std(const Eigen::MatrixXd& y) {
    return std::sqrt((y.array() - y.mean()).square().sum() / static_cast<double>(y.size()));
}

void run_evaluate(Context& ctx, StageOutcome& out) {
    const Loaded main = load_scenario(ctx, "main");
    const SurrogateModel mt = load_model(ctx, "model_t.dsrg");
    std::map<std::string, std::string> summary;
    const Eigen::VectorXd t0 = main.t.row(0).transpose();
    const Eigen::MatrixXd t_pred = mt.predict(t0, main.q);
    const auto qt = nrmse_series(t_pred, main.t);
    summary["nrmse.q_t.total"] = num(nrmse_total(t_pred, main.t));
    summary["nrmse.q_t.max_time"] = num(max_of(qt));
    {
        const Eigen::MatrixXd yn = mt.y_norm.apply(main.t);
        const Eigen::MatrixXd rec = mt.decode(mt.phi_y.forward_batch(yn.transpose()).transpose());
        summary["nrmse.t_recon.total"] = num(nrmse_total(rec, main.t));
        SurrogateModel frozen = mt;
        auto& last = frozen.node.layer(frozen.node.layer_count() - 1);
        last.w.setZero();
        last.b.setZero();
        const double base = nrmse_total(frozen.predict(t0, main.q), main.t);
        summary["baseline.q_t.total"] = num(base);
        summary["baseline.q_t.ratio"] = num(base / nrmse_total(t_pred, main.t));
    }
    std::vector<std::string> header{"time", "nrmse_q_t"};
    std::vector<std::vector<double>> columns{main.times, qt};

    const std::size_t probe = nearest_point(read_required(ctx, "t_main.dtrj"), ctx.cfg.eval.probe);
    std::vector<std::string> probe_header{"time", "t_true", "t_pred"};
    std::vector<std::vector<double>> probe_cols{main.times, to_vector(main.t.col(static_cast<Eigen::Index>(probe))),
                                                to_vector(t_pred.col(static_cast<Eigen::Index>(probe)))};

    std::optional<SurrogateModel> ms;
    if (main.has_stress && fs::exists(ctx.path("model_s.dsrg"))) ms = load_model(ctx, "model_s.dsrg");
    if (ms) {
        const ChainPrediction chain = chain_predict(mt, *ms, main.q, t0);
        const Eigen::VectorXd zero = Eigen::VectorXd::Zero(main.s.cols());
        const Eigen::MatrixXd s_true_t = ms->predict(zero, main.t);
        const auto ts = nrmse_series(s_true_t, main.s);
        const auto qs = nrmse_series(chain.stress, main.s);
        summary["nrmse.t_s.total"] = num(nrmse_total(s_true_t, main.s));
        summary["nrmse.t_s.max_time"] = num(max_of(ts));
        summary["nrmse.q_s.total"] = num(nrmse_total(chain.stress, main.s));
        summary["nrmse.q_s.max_time"] = num(max_of(qs));
        header.insert(header.end(), {"nrmse_t_s", "nrmse_q_s"});
        columns.push_back(ts);
        columns.push_back(qs);
        probe_header.insert(probe_header.end(), {"s11_true", "s11_pred_true_t", "s11_pred_chain"});
        probe_cols.push_back(to_vector(main.s.col(static_cast<Eigen::Index>(probe))));
        probe_cols.push_back(to_vector(s_true_t.col(static_cast<Eigen::Index>(probe))));
        probe_cols.push_back(to_vector(chain.stress.col(static_cast<Eigen::Index>(probe))));
    }
    // Generalisation and consistency runs are reported, not judged.
    for (const auto& tag : scenarios(ctx.cfg)) {
        if (tag == "main") continue;
        const Loaded sc = load_scenario(ctx, tag);
        const Eigen::VectorXd st0 = sc.t.row(0).transpose();
        if (tag == "heldout") {
            summary["heldout.q_t.total"] = num(nrmse_total(mt.predict(st0, sc.q), sc.t));
            if (ms) summary["heldout.q_s.total"] = num(nrmse_total(chain_predict(mt, *ms, sc.q, st0).stress, sc.s));
        } else {
            const Eigen::MatrixXd tp = mt.predict(st0, sc.q);
            summary["nolaser.t.relative_rms"] = num(relative_rms(tp, sc.t, field_std(main.t)));
            if (ms) {
                summary["nolaser.s.relative_rms"] =
                    num(relative_rms(chain_predict(mt, *ms, sc.q, st0).stress, sc.s, field_std(main.s)));
            }
        }
    }
    const auto probe_pos = StructuredGrid(ctx.cfg.grid).position(ctx.points.nodes[probe]);
    summary["probe.x"] = num(probe_pos[0]);
    summary["probe.y"] = num(probe_pos[1]);
    summary["probe.z"] = num(probe_pos[2]);

    write_csv(ctx.path("eval_time.csv"), header, columns);
    ctx.record(Stage::evaluate, "eval_time.csv", out);
    write_csv(ctx.path("probe.csv"), probe_header, probe_cols);
    ctx.record(Stage::evaluate, "probe.csv", out);
    write_summary(ctx.path("eval.txt"), summary);
    ctx.record(Stage::evaluate, "eval.txt", out);
}

// Columns of a CSV written by write_csv.
std::map<std::string, std::vector<double>> read_csv_columns(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    const auto header = text::split(line, ',');
    std::map<std::string, std::vector<double>> out;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        const auto cells = text::split(line, ',');
        for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) {
            if (!cells[i].empty()) out[header[i]].push_back(text::to_double(cells[i], path.string()));
        }
    }
    return out;
}

void run_report(Context& ctx, StageOutcome& out) {
    auto summary = read_summary(ctx.path("eval.txt"));
    for (const auto& [k, v] : ctx.manifest.values) summary[k] = v;
    if (fs::exists(ctx.path("bench.txt"))) {
        for (const auto& [k, v] : read_summary(ctx.path("bench.txt"))) summary[k] = v;
    }
    summary["config.hash"] = hex64(stage_fingerprint(ctx.cfg, Stage::report));

    const auto et = read_csv_columns(ctx.path("eval_time.csv"));
    std::vector<PlotSeries> err{{"Q->T", et.at("time"), et.at("nrmse_q_t")}};
    if (et.count("nrmse_q_s")) {
        err.push_back({"T->sigma", et.at("time"), et.at("nrmse_t_s")});
        err.push_back({"Q->sigma (chain)", et.at("time"), et.at("nrmse_q_s")});
    }
    write_svg_plot(ctx.path("nrmse_time.svg"), err, {"NRMSE over time", "time [s]", "NRMSE", true});
    ctx.record(Stage::report, "nrmse_time.svg", out);

    const auto pr = read_csv_columns(ctx.path("probe.csv"));
    write_svg_plot(ctx.path("probe_temperature.svg"),
                   {{"simulation", pr.at("time"), pr.at("t_true")}, {"surrogate", pr.at("time"), pr.at("t_pred")}},
                   {"Temperature at the probe point", "time [s]", "T [K]", false});
    ctx.record(Stage::report, "probe_temperature.svg", out);
    if (pr.count("s11_true")) {
        auto mpa = [](std::vector<double> v) {
            for (double& x : v) x *= 1e-6;
            return v;
        };
        write_svg_plot(ctx.path("probe_stress.svg"),
                       {{"simulation", pr.at("time"), mpa(pr.at("s11_true"))},
                        {"surrogate (true T)", pr.at("time"), mpa(pr.at("s11_pred_true_t"))},
                        {"surrogate (chain)", pr.at("time"), mpa(pr.at("s11_pred_chain"))}},
                       {"sigma_11 at the probe point", "time [s]", "sigma_11 [MPa]", false});
        ctx.record(Stage::report, "probe_stress.svg", out);
    }
    std::vector<PlotSeries> loss;
    for (const auto& [file, label] : {std::pair{"loss_t.csv", "Q->T"}, std::pair{"loss_s.csv", "T->sigma"}}) {
        if (!fs::exists(ctx.path(file))) continue;
        const auto c = read_csv_columns(ctx.path(file));
        loss.push_back({label, c.at("epoch"), c.at("loss")});
    }
    write_svg_plot(ctx.path("loss.svg"), loss, {"Training loss", "epoch", "loss", true});
    ctx.record(Stage::report, "loss.svg", out);
    write_summary(ctx.path("summary.txt"), summary);
    ctx.record(Stage::report, "summary.txt", out);
}

void run_predict(Context& ctx, StageOutcome& out) {
    const SurrogateModel mt = load_model(ctx, "model_t.dsrg");
    FieldTrajectory q;
    if (ctx.opt.predict_input.empty()) {
        ctx.require(Stage::sample);
        q = read_required(ctx, "q_main.dtrj");
    } else {
        if (!fs::exists(ctx.opt.predict_input)) throw DependencyError("missing input " + ctx.opt.predict_input.string());
        q = read_dtrj(ctx.opt.predict_input);
    }
    if (q.points != ctx.points.nodes) throw StaleArtifactError("input uses a different point set");
    const Eigen::MatrixXd qm = as_matrix(q);
    const Eigen::VectorXd t0 = Eigen::VectorXd::Constant(qm.cols(), ctx.cfg.thermal.t_amb);
    const Eigen::MatrixXd tp = mt.predict(t0, qm);
    write_dtrj(ctx.path("predicted_t.dtrj"), sampled_trajectory(FieldKind::temperature, ctx.cfg.grid, q.times,
                                                                ctx.points, tp));
    ctx.record(Stage::predict, "predicted_t.dtrj", out);
    if (fs::exists(ctx.path("model_s.dsrg"))) {
        const SurrogateModel ms = load_model(ctx, "model_s.dsrg");
        const Eigen::MatrixXd sp = chain_predict(mt, ms, qm, t0).stress;
        write_dtrj(ctx.path("predicted_s11.dtrj"),
                   sampled_trajectory(FieldKind::sampled, ctx.cfg.grid, q.times, ctx.points, sp));
        ctx.record(Stage::predict, "predicted_s11.dtrj", out);
    }
}

void run_bench(Context& ctx, StageOutcome& out) {
    ctx.require(Stage::sample);
    const SurrogateModel mt = load_model(ctx, "model_t.dsrg");
    const bool chain = fs::exists(ctx.path("model_s.dsrg"));
    const SurrogateModel ms = chain ? load_model(ctx, "model_s.dsrg") : mt;
    const Loaded main = load_scenario(ctx, "main");
    const Eigen::VectorXd t0 = main.t.row(0).transpose();
    double sink = 0.0;
    auto surrogate = [&] {
        if (chain) sink += chain_predict(mt, ms, main.q, t0).stress(0, 0);
        else sink += mt.predict(t0, main.q)(0, 0);
    };
    const MechBoundary bc = make_boundary(ctx.cfg, ctx.grid);
    auto simulator = [&] {
        const FieldTrajectory temp = simulate_thermal(ctx.grid, ctx.material, ctx.cfg.thermal);
        if (ctx.cfg.mechanics) sink += run_mechanical(temp, ctx.grid, ctx.material, ctx.cfg.mech, bc).stress.data(0, 0);
    };
    ctx.log("bench: timing surrogate and simulator");
    const BenchmarkReport r =
        benchmark_inference(surrogate, simulator, ctx.cfg.eval.bench_repeats, ctx.cfg.eval.bench_simulator_repeats);
    std::map<std::string, std::string> s;
    s["bench.chained"] = chain ? "true" : "false";
    s["bench.surrogate.mean_s"] = num(r.surrogate.mean);
    s["bench.surrogate.std_s"] = num(r.surrogate.stddev);
    s["bench.surrogate.repeats"] = std::to_string(r.surrogate.repeats);
    s["bench.simulator.mean_s"] = num(r.simulator.mean);
    s["bench.simulator.std_s"] = num(r.simulator.stddev);
    s["bench.simulator.repeats"] = std::to_string(r.simulator.repeats);
    s["bench.speedup"] = num(r.speedup);
    write_summary(ctx.path("bench.txt"), s);
    ctx.record(Stage::bench, "bench.txt", out);
}

void run_sweep(Context& ctx, StageOutcome& out) {
    const TrainingSets sets = training_sets(ctx);
    if (sets.stress.empty()) throw InvalidInput("the latent sweep needs the mechanics stage enabled");
    SweepData data;
    data.q = sets.thermal[0].u;
    data.t = sets.thermal[0].y;
    data.sigma = sets.stress[0].y;
    data.point_hash = ctx.points.hash();
    data.dt = ctx.cfg.thermal.dt_readout;
    data.extra_thermal.assign(sets.thermal.begin() + 1, sets.thermal.end());
    data.extra_stress.assign(sets.stress.begin() + 1, sets.stress.end());
    TrainConfig tc = ctx.cfg.train;
    if (ctx.cfg.eval.sweep_epochs > 0) tc.epochs = ctx.cfg.eval.sweep_epochs;
    const auto rows = latent_sweep(data, ctx.cfg.eval.sweep_latents, {ctx.cfg.train.seed}, ctx.cfg.surrogate, tc,
                                   [&](const SweepRow& r) {
                                       ctx.log("sweep: n_l=" + std::to_string(r.n_l) +
                                               (r.failure.empty() ? " chain NRMSE " + num(r.errors.q_to_sigma)
                                                                  : " failed: " + r.failure));
                                   });
    write_sweep_csv(ctx.path("sweep.csv"), rows);
    ctx.record(Stage::sweep, "sweep.csv", out);
    write_sweep_svg(ctx.path("sweep.svg"), rows);
    ctx.record(Stage::sweep, "sweep.svg", out);
    ctx.manifest.values["sweep.best_n_l"] = std::to_string(best_latent(rows));
}

void run_richardson(Context& ctx, StageOutcome& out) {
    const auto& e = ctx.cfg.eval;
    ThermalConfig tc = ctx.cfg.thermal;
    tc.t_end = e.richardson_t_end;
    tc.dt_solver = e.richardson_dt;
    tc.dt_readout = e.richardson_t_end;
    std::vector<double> h, value;
    for (int level = 0; level < 3; ++level) {
        GridSpec gs = ctx.cfg.grid;
        gs.nx = e.richardson_coarse[0] << level;
        gs.ny = e.richardson_coarse[1] << level;
        gs.nz = e.richardson_coarse[2] << level;
        const StructuredGrid g(gs);
        ctx.log("richardson: mesh " + std::to_string(gs.nx) + "x" + std::to_string(gs.ny) + "x" +
                std::to_string(gs.nz));
        const FieldTrajectory traj = simulate_thermal(g, ctx.material, tc);
        const std::size_t node = g.nearest_node(e.probe);
        h.push_back(gs.lx / gs.nx);
        value.push_back(traj.data(traj.data.rows() - 1, static_cast<Eigen::Index>(node)));
    }
    std::map<std::string, std::string> s;
    std::vector<double> err(3, std::numeric_limits<double>::quiet_NaN());
    try {
        const RichardsonResult r = richardson_error(value[0], value[1], value[2], 2.0);
        s["richardson.order"] = num(r.order);
        s["richardson.extrapolated"] = num(r.extrapolated);
        s["richardson.relative_error_fine"] = num(r.relative_error);
        for (int i = 0; i < 3; ++i) err[i] = std::abs(value[i] - r.extrapolated) / std::abs(r.extrapolated);
        s["richardson.monotone"] = (err[0] > err[1] && err[1] > err[2]) ? "true" : "false";
    } catch (const ConvergenceRegimeError& ex) {
        s["richardson.monotone"] = "false";
        s["richardson.failure"] = ex.what();
    }
    write_csv(ctx.path("richardson.csv"), {"h", "probe_temperature", "relative_error"}, {h, value, err});
    ctx.record(Stage::richardson, "richardson.csv", out);
    write_summary(ctx.path("richardson.txt"), s);
    ctx.record(Stage::richardson, "richardson.txt", out);
}

}  // namespace

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::simulate: return "simulate";
        case Stage::mechanics: return "mechanics";
        case Stage::sample: return "sample";
        case Stage::train: return "train";
        case Stage::evaluate: return "evaluate";
        case Stage::report: return "report";
        case Stage::predict: return "predict";
        case Stage::bench: return "bench";
        case Stage::sweep: return "sweep";
        case Stage::richardson: return "richardson";
    }
    return "?";
}

Stage parse_stage(const std::string& name) {
    for (Stage s : {Stage::simulate, Stage::mechanics, Stage::sample, Stage::train, Stage::evaluate, Stage::report,
                    Stage::predict, Stage::bench, Stage::sweep, Stage::richardson}) {
        if (stage_name(s) == name) return s;
    }
    throw InvalidInput("unknown stage '" + name + "'");
}

std::vector<Stage> default_stages() {
    return {Stage::simulate, Stage::mechanics, Stage::sample, Stage::train, Stage::evaluate, Stage::report};
}

std::vector<std::string> scenarios(const RunConfig& cfg) {
    std::vector<std::string> out{"main"};
    if (cfg.eval.heldout_power > 0.0) out.push_back("heldout");
    if (cfg.eval.no_laser) out.push_back("nolaser");
    return out;
}

Manifest Manifest::load(const fs::path& dir) {
    Manifest m;
    const fs::path p = dir / kManifest;
    if (!fs::exists(p)) return m;
    for (const auto& [k, v] : read_summary(p)) {
        if (k.rfind("stage.", 0) == 0) {
            m.stage_hash[k.substr(6)] = v;
        } else if (k.rfind("artifact.", 0) == 0) {
            const auto words = text::split_ws(v);
            if (words.size() != 2) throw FormatError("bad manifest entry " + k);
            m.artifacts[k.substr(9)] = {words[0], std::stoull(words[1], nullptr, 16)};
        } else {
            m.values[k] = v;
        }
    }
    return m;
}

void Manifest::save(const fs::path& dir) const {
    std::map<std::string, std::string> all = values;
    for (const auto& [s, h] : stage_hash) all["stage." + s] = h;
    for (const auto& [f, a] : artifacts) all["artifact." + f] = a.stage + " " + hex64(a.hash);
    write_summary(dir / kManifest, all);
}

std::uint64_t stage_fingerprint(const RunConfig& cfg, Stage s) {
    std::set<std::string> prefixes;
    collect_keys(s, prefixes);
    std::uint64_t h = fnv1a(stage_name(s));
    for (const auto& [k, v] : cfg.to_map()) {
        const bool used =
            std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) { return k.rfind(p, 0) == 0; });
        if (!used) continue;
        if (k == "material.file") {
            // Content, not location, identifies the material.
            h = fnv1a(k, h);
            h = fnv1a(v.empty() ? std::string("builtin") : hex64(fnv1a_file(v)), h);
            continue;
        }
        h = fnv1a(k + "=" + v + "\n", h);
    }
    return h;
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / kLock) {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST) {
            throw DependencyError("output directory " + dir.string() + " is locked by another pipeline (" +
                                  path_.string() + ")");
        }
        throw DependencyError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

DirectoryLock::~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

std::vector<StageOutcome> run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages,
                                       const PipelineOptions& opt) {
    cfg.validate();
    const DirectoryLock lock(cfg.out);
    Context ctx(cfg, opt);
    std::vector<StageOutcome> outcomes;
    for (Stage s : stages) {
        StageOutcome out{s, false, {}};
        const std::string name = stage_name(s);
        if (!opt.force && ctx.complete(s)) {
            ctx.log(name + ": up to date");
            out.skipped = true;
            outcomes.push_back(out);
            continue;
        }
        for (Stage u : upstream(s)) ctx.require(u);
        for (auto it = ctx.manifest.artifacts.begin(); it != ctx.manifest.artifacts.end();) {
            it = it->second.stage == name ? ctx.manifest.artifacts.erase(it) : std::next(it);
        }
        ctx.manifest.stage_hash.erase(name);
        const auto t0 = std::chrono::steady_clock::now();
        switch (s) {
            case Stage::simulate: run_simulate(ctx, out); break;
            case Stage::mechanics: run_mechanics(ctx, out); break;
            case Stage::sample: run_sample(ctx, out); break;
            case Stage::train: run_train(ctx, out); break;
            case Stage::evaluate: run_evaluate(ctx, out); break;
            case Stage::report: run_report(ctx, out); break;
            case Stage::predict: run_predict(ctx, out); break;
            case Stage::bench: run_bench(ctx, out); break;
            case Stage::sweep: run_sweep(ctx, out); break;
            case Stage::richardson: run_richardson(ctx, out); break;
        }
        ctx.manifest.values["timing.stage." + name] = num(seconds_since(t0));
        ctx.manifest.stage_hash[name] = hex64(stage_fingerprint(cfg, s));
        ctx.manifest.save(ctx.dir);
        ctx.log(name + ": wrote " + std::to_string(out.written.size()) + " artifact(s)");
        outcomes.push_back(std::move(out));
    }
    return outcomes;
}

VerifyResult verify_outputs(const fs::path& dir) {
    if (!fs::exists(dir / kManifest)) throw DependencyError("no manifest in " + dir.string());
    const Manifest m = Manifest::load(dir);
    VerifyResult r;
    for (const auto& [name, a] : m.artifacts) {
        if (!fs::exists(dir / name)) r.missing.push_back(name);
        else if (fnv1a_file(dir / name) != a.hash) r.corrupted.push_back(name);
        else r.ok.push_back(name);
    }
    return r;
}

Eigen::MatrixXd sample_heat_source(const StructuredGrid& grid, const ThermalConfig& cfg, const PointSet& points,
                                   const std::vector<double>& times) {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(times.size()),
                                              static_cast<Eigen::Index>(points.size()));
    if (cfg.power == 0.0) return q;
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (!source_active(cfg, times[k], grid.spec().lx)) continue;
        for (std::size_t j = 0; j < points.size(); ++j) {
            q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
                goldak_power_density(grid.position(static_cast<std::size_t>(points.nodes[j])), times[k], cfg);
        }
    }
    return q;
}

namespace {

struct Selector {
    std::optional<long> time_index;
    std::optional<double> time_seconds;
    int component = 0;
    std::optional<std::array<double, 3>> probe;
    bool table = false;
};

Selector parse_selector(const std::string& text) {
    Selector s;
    for (const auto& part : text::split(text, ';')) {
        if (part.empty()) continue;
        if (part == "table") {
            s.table = true;
            continue;
        }
        const auto kv = text::split_kv(part);
        if (!kv) throw InvalidInput("unknown selector '" + part + "'");
        const auto& [k, v] = *kv;
        if (k == "time") {
            if (!v.empty() && v.back() == 's') s.time_seconds = text::to_double(v.substr(0, v.size() - 1), k);
            else s.time_index = text::to_int(v, k);
        } else if (k == "component") {
            s.component = static_cast<int>(text::to_int(v, k));
        } else if (k == "probe") {
            const auto xyz = text::split(v, ',');
            if (xyz.size() != 3) throw InvalidInput("probe selector needs x,y,z");
            s.probe = std::array<double, 3>{text::to_double(xyz[0], k), text::to_double(xyz[1], k),
                                            text::to_double(xyz[2], k)};
        } else {
            throw InvalidInput("unknown selector '" + k + "'");
        }
    }
    return s;
}

}  // namespace

void export_artifact(const fs::path& artifact, const std::string& format, const std::string& selector,
                     const fs::path& target) {
    if (format != "csv" && format != "svg-plot") throw InvalidInput("unknown export format '" + format + "'");
    if (!fs::exists(artifact)) throw DependencyError("missing artifact " + artifact.string());
    const Selector sel = parse_selector(selector);
    if (artifact.extension() == ".csv") {
        if (!sel.table) throw InvalidInput("CSV tables take the 'table' selector");
        const auto cols = read_csv_columns(artifact);
        if (cols.count("n_l") && cols.count("q_to_sigma")) {
            std::vector<SweepRow> rows;
            for (std::size_t i = 0; i < cols.at("q_to_sigma").size(); ++i) {
                SweepRow r;
                r.n_l = static_cast<int>(cols.at("n_l")[i]);
                r.errors = {cols.at("q_to_t")[i], cols.at("t_to_sigma")[i], cols.at("q_to_sigma")[i]};
                rows.push_back(r);
            }
            if (format == "csv") write_sweep_csv(target, rows);
            else write_sweep_svg(target, rows);
            return;
        }
        throw InvalidInput("CSV export supports the latent-sweep table");
    }
    if (sel.table) throw InvalidInput("trajectories take time, component or probe selectors");
    const FieldTrajectory traj = read_dtrj(artifact);
    const FieldTrajectory comp = traj.component(sel.component);
    const StructuredGrid grid(traj.grid);
    if (sel.probe) {
        const std::size_t p = nearest_point(comp, *sel.probe);
        std::vector<double> v(comp.time_count());
        for (std::size_t t = 0; t < comp.time_count(); ++t) v[t] = comp.at(t, p);
        if (format == "csv") write_csv(target, {"time", "value"}, {comp.times, v});
        else write_svg_plot(target, {{"component " + std::to_string(sel.component), comp.times, v}},
                            {"Probe trace", "time [s]", "value", false});
        return;
    }
    if (!sel.time_index && !sel.time_seconds) throw InvalidInput("select a time or a probe");
    if (format != "csv") throw InvalidInput("snapshots export as CSV only");
    long k = -1;
    if (sel.time_index) k = *sel.time_index;
    else {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < comp.time_count(); ++t) {
            if (std::abs(comp.times[t] - *sel.time_seconds) < best) {
                best = std::abs(comp.times[t] - *sel.time_seconds);
                k = static_cast<long>(t);
            }
        }
    }
    if (k < 0 || k >= static_cast<long>(comp.time_count())) throw InvalidInput("time index out of range");
    std::vector<double> id, x, y, z, v;
    for (std::size_t i = 0; i < comp.point_count(); ++i) {
        const auto node = comp.points.empty() ? i : static_cast<std::size_t>(comp.points[i]);
        const auto pos = grid.position(node);
        id.push_back(static_cast<double>(node));
        x.push_back(pos[0]);
        y.push_back(pos[1]);
        z.push_back(pos[2]);
        v.push_back(comp.at(static_cast<std::size_t>(k), i));
    }
    write_csv(target, {"node", "x", "y", "z", "value"}, {id, x, y, z, v});
}

}  // namespace dedtwin
