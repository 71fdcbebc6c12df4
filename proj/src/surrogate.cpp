#include "dedtwin/surrogate.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "dedtwin/binary_io.hpp"
#include "dedtwin/error.hpp"
#include "dedtwin/hash.hpp"

namespace dedtwin {

namespace {

std::vector<int> sublattice_axis(int nodes, int m) {
    if (m < 1 || m > nodes) throw InvalidInput("sub-lattice count must be between 1 and the node count");
    std::vector<int> idx(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        idx[static_cast<std::size_t>(i)] = m == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(i) * (nodes - 1) / (m - 1)));
    }
    return idx;
}

std::vector<int> widths(int first, const std::vector<int>& hidden, int last) {
    std::vector<int> w{first};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(last);
    return w;
}

void add_into(Mlp& dst, Mlp& src) {
    auto d = dst.spans();
    auto s = src.spans();
    for (std::size_t b = 0; b < d.size(); ++b) d[b].vec() += s[b].vec();
}

std::vector<Span> all_spans(SurrogateModel& m) {
    std::vector<Span> out;
    for (Mlp* net : {&m.phi_y, &m.psi_u, &m.decoder, &m.node}) {
        auto s = net->spans();
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

std::vector<Span> all_spans(ModelGradient& g) {
    std::vector<Span> out;
    for (Mlp* net : {&g.phi_y, &g.psi_u, &g.decoder, &g.node}) {
        auto s = net->spans();
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

void check_series(const Eigen::MatrixXd& m, std::size_t n_s, const char* what) {
    if (static_cast<std::size_t>(m.cols()) != n_s) throw DimensionMismatch(std::string(what) + " column count must equal n_s");
    if (m.rows() < 1) throw InvalidInput(std::string(what) + " is empty");
}

}  // namespace

PointSet PointSet::sublattice(const StructuredGrid& grid, int mx, int my, int mz) {
    PointSet ps;
    for (int k : sublattice_axis(grid.nodes_z(), mz)) {
        for (int j : sublattice_axis(grid.nodes_y(), my)) {
            for (int i : sublattice_axis(grid.nodes_x(), mx)) ps.nodes.push_back(static_cast<std::int64_t>(grid.node(i, j, k)));
        }
    }
    return ps;
}

std::uint64_t PointSet::hash() const {
    std::uint64_t h = kFnvOffset;
    for (std::int64_t n : nodes) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xff);
        h = fnv1a(b, 8, h);
    }
    return h;
}

Normalizer Normalizer::fit(const std::vector<const Eigen::MatrixXd*>& data) {
    double sum = 0.0, count = 0.0;
    for (const auto* m : data) {
        sum += m->sum();
        count += static_cast<double>(m->size());
    }
    if (count == 0.0) throw DegenerateData("cannot normalise an empty data set");
    Normalizer n;
    n.mean = sum / count;
    double ss = 0.0;
    for (const auto* m : data) ss += (m->array() - n.mean).square().sum();
    n.stddev = std::sqrt(ss / count);
    // A constant field (e.g. zero stress everywhere) keeps unit scale.
    if (!(n.stddev > 0.0)) n.stddev = 1.0;
    return n;
}

SurrogateModel SurrogateModel::create(int n_s, const SurrogateConfig& cfg, std::mt19937_64& rng) {
    if (cfg.n_l < 1) throw InvalidInput("latent dimension must be at least 1");
    if (n_s < 1) throw InvalidInput("need at least one read-out point");
    SurrogateModel m;
    m.cfg = cfg;
    m.n_l = cfg.n_l;
    const auto enc = widths(n_s, cfg.encoder_hidden, cfg.n_l);
    std::vector<int> dec(enc.rbegin(), enc.rend());
    m.phi_y = Mlp::initialized(enc, rng);
    m.psi_u = Mlp::initialized(enc, rng);
    m.decoder = Mlp::initialized(dec, rng);
    m.node = Mlp::initialized(widths(2 * cfg.n_l, cfg.node_hidden, cfg.n_l), rng, true);
    return m;
}

Eigen::VectorXd SurrogateModel::encode_state(const Eigen::VectorXd& y0) const {
    if (static_cast<std::size_t>(y0.size()) != n_s()) throw DimensionMismatch("initial field length must equal n_s");
    return phi_y.forward(y_norm.apply(y0));
}

Eigen::MatrixXd SurrogateModel::encode_input(const Eigen::MatrixXd& u_series) const {
    check_series(u_series, n_s(), "input series");
    return psi_u.forward_batch(u_norm.apply(u_series).transpose()).transpose();
}

Eigen::MatrixXd SurrogateModel::decode(const Eigen::MatrixXd& z_series) const {
    if (z_series.cols() != n_l) throw DimensionMismatch("latent series width must equal n_l");
    return y_norm.invert(decoder.forward_batch(z_series.transpose()).transpose());
}

Eigen::MatrixXd SurrogateModel::integrate(const Eigen::VectorXd& z0, const Eigen::MatrixXd& v, Integrator integrator) const {
    if (integrator == Integrator::dopri5) return dopri5_integrate(node, z0, v, dt, cfg.infer_hold, cfg.rtol, cfg.atol).z;
    return rk4_rollout(node, z0, v, dt, cfg.infer_hold, cfg.rk4_substeps);
}

Eigen::MatrixXd SurrogateModel::predict(const Eigen::VectorXd& y0, const Eigen::MatrixXd& u_series) const {
    const Eigen::VectorXd z0 = encode_state(y0);
    const Eigen::MatrixXd v = encode_input(u_series);
    return decode(integrate(z0, v, cfg.infer_integrator));
}

void SurrogateModel::check_points(std::uint64_t dataset_hash) const {
    if (dataset_hash != point_hash) {
        throw StaleArtifactError("model was trained on point set " + hex64(point_hash) + " but the data uses " +
                                 hex64(dataset_hash));
    }
}

LossBreakdown surrogate_loss(const SurrogateModel& model, const std::vector<TrainingPair>& normalized,
                             double recon_weight, ModelGradient* grad) {
    LossBreakdown out;
    if (normalized.empty()) throw InvalidInput("training needs at least one trajectory");
    const double scale = 1.0 / static_cast<double>(normalized.size());
    const auto& cfg = model.cfg;
    for (const auto& pair : normalized) {
        check_series(pair.y, model.n_s(), "output series");
        check_series(pair.u, model.n_s(), "input series");
        if (pair.u.rows() != pair.y.rows()) throw DimensionMismatch("input and output series differ in length");
        const double n = static_cast<double>(pair.y.size());
        const Eigen::MatrixXd yt = pair.y.transpose();
        const Eigen::MatrixXd ut = pair.u.transpose();

        Mlp::Tape t_z0, t_v, t_dec, t_enc_r, t_dec_r;
        const Eigen::VectorXd z0 = model.phi_y.forward_batch(yt.col(0), t_z0);
        const Eigen::MatrixXd v = model.psi_u.forward_batch(ut, t_v).transpose();
        NodeIntegration run;
        Eigen::MatrixXd z;
        if (cfg.train_integrator == Integrator::dopri5) {
            run = dopri5_integrate(model.node, z0, v, model.dt, cfg.train_hold, cfg.rtol, cfg.atol);
            z = run.z;
        } else {
            z = rk4_rollout(model.node, z0, v, model.dt, cfg.train_hold, cfg.rk4_substeps);
        }
        const Eigen::MatrixXd err_p = model.decoder.forward_batch(z.transpose(), t_dec) - yt;
        const Eigen::MatrixXd zr = model.phi_y.forward_batch(yt, t_enc_r);
        const Eigen::MatrixXd err_r = model.decoder.forward_batch(zr, t_dec_r) - yt;
        const double lp = err_p.squaredNorm() / n;
        const double lr = err_r.squaredNorm() / n;
        out.prediction += scale * lp;
        out.reconstruction += scale * lr;
        if (!grad) continue;

        const Eigen::MatrixXd dz = model.decoder.backward(t_dec, (2.0 * scale / n) * err_p, grad->decoder).transpose();
        RolloutGradient rg = cfg.train_integrator == Integrator::dopri5
                                 ? dopri5_backward(model.node, run, v, model.dt, cfg.train_hold, dz)
                                 : rk4_rollout_backward(model.node, z, v, model.dt, cfg.train_hold, cfg.rk4_substeps, dz);
        add_into(grad->node, rg.params);
        model.phi_y.backward(t_z0, rg.z0, grad->phi_y);
        model.psi_u.backward(t_v, rg.v.transpose(), grad->psi_u);
        const Eigen::MatrixXd dzr = model.decoder.backward(t_dec_r, (2.0 * scale * recon_weight / n) * err_r, grad->decoder);
        model.phi_y.backward(t_enc_r, dzr, grad->phi_y);
    }
    out.total = out.prediction + recon_weight * out.reconstruction;
    return out;
}

TrainResult train_surrogate(const std::vector<TrainingPair>& data, std::uint64_t point_hash, double dt,
                            const SurrogateConfig& cfg, const TrainConfig& tcfg, const TrainObserver& observer) {
    if (data.empty()) throw InvalidInput("training needs at least one trajectory");
    if (tcfg.epochs < 1) throw InvalidInput("epoch budget must be positive");
    if (!(dt > 0.0)) throw InvalidInput("read-out spacing must be positive");
    const auto n_s = static_cast<int>(data.front().y.cols());
    std::mt19937_64 rng(tcfg.seed);
    SurrogateModel model = SurrogateModel::create(n_s, cfg, rng);
    model.dt = dt;
    model.point_hash = point_hash;
    std::vector<const Eigen::MatrixXd*> ys, us;
    for (const auto& p : data) {
        ys.push_back(&p.y);
        us.push_back(&p.u);
    }
    model.y_norm = Normalizer::fit(ys);
    model.u_norm = Normalizer::fit(us);
    std::vector<TrainingPair> normalized;
    for (const auto& p : data) normalized.push_back({model.u_norm.apply(p.u), model.y_norm.apply(p.y)});

    ModelGradient grad{model.phi_y.zeros_like(), model.psi_u.zeros_like(), model.decoder.zeros_like(),
                       model.node.zeros_like()};
    AdaBelief opt(tcfg.optimizer);
    TrainResult result;
    result.loss_history.reserve(static_cast<std::size_t>(tcfg.epochs));
    const double lr0 = tcfg.optimizer.lr;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        for (Mlp* g : {&grad.phi_y, &grad.psi_u, &grad.decoder, &grad.node}) g->set_zero();
        const LossBreakdown loss = surrogate_loss(model, normalized, tcfg.recon_weight, &grad);
        if (!std::isfinite(loss.total)) throw DivergenceError("training loss became non-finite", epoch);
        result.loss_history.push_back(loss.total);
        if (result.best_epoch < 0 || loss.total < result.best_loss) {
            result.best_loss = loss.total;
            result.best_epoch = epoch;
            result.model = model;
        }
        if (observer) observer(epoch, loss);
        const double progress = tcfg.epochs > 1 ? static_cast<double>(epoch) / (tcfg.epochs - 1) : 1.0;
        opt.set_learning_rate(tcfg.lr_final + 0.5 * (lr0 - tcfg.lr_final) * (1.0 + std::cos(std::numbers::pi * progress)));
        for (auto [p, g] : {std::pair{&model.phi_y, &grad.phi_y}, std::pair{&model.psi_u, &grad.psi_u},
                            std::pair{&model.decoder, &grad.decoder}, std::pair{&model.node, &grad.node}}) {
            clip_gradients(p->spans(), g->spans(), tcfg.clip_factor, tcfg.clip_floor);
        }
        opt.step(all_spans(model), all_spans(grad));
    }
    // The parameters after the last update have not been scored yet.
    const LossBreakdown last = surrogate_loss(model, normalized, tcfg.recon_weight, nullptr);
    if (std::isfinite(last.total) && last.total < result.best_loss) {
        result.best_loss = last.total;
        result.best_epoch = tcfg.epochs;
        result.model = model;
    }
    return result;
}

ChainPrediction chain_predict(const SurrogateModel& model_t, const SurrogateModel& model_s,
                              const Eigen::MatrixXd& q_series, const Eigen::VectorXd& t0) {
    if (model_t.point_hash != model_s.point_hash || model_t.n_s() != model_s.n_s()) {
        throw StaleArtifactError("temperature and stress models use different point sets");
    }
    ChainPrediction out;
    out.temperature = model_t.predict(t0, q_series);
    out.stress = model_s.predict(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model_s.n_s())), out.temperature);
    return out;
}

void save_bundle(const std::filesystem::path& path, const SurrogateModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidInput("cannot write " + path.string());
    bin::put_magic(os, "DSRG");
    bin::put<std::uint32_t>(os, 1);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.n_l));
    bin::put<double>(os, m.dt);
    bin::put<std::uint64_t>(os, m.point_hash);
    bin::put<double>(os, m.y_norm.mean);
    bin::put<double>(os, m.y_norm.stddev);
    bin::put<double>(os, m.u_norm.mean);
    bin::put<double>(os, m.u_norm.stddev);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cfg.train_hold));
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cfg.infer_hold));
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cfg.train_integrator));
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cfg.infer_integrator));
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cfg.rk4_substeps));
    bin::put<double>(os, m.cfg.rtol);
    bin::put<double>(os, m.cfg.atol);
    for (const Mlp* net : {&m.phi_y, &m.psi_u, &m.decoder, &m.node}) write_dmlp(os, *net);
    if (!os) throw InvalidInput("failed writing " + path.string());
}

SurrogateModel load_bundle(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DependencyError("missing model bundle " + path.string() + "; run the train stage");
    bin::expect_magic(is, "DSRG");
    if (bin::get<std::uint32_t>(is) != 1) throw FormatError("unsupported model bundle version");
    SurrogateModel m;
    m.n_l = static_cast<int>(bin::get<std::uint32_t>(is));
    m.dt = bin::get<double>(is);
    m.point_hash = bin::get<std::uint64_t>(is);
    m.y_norm.mean = bin::get<double>(is);
    m.y_norm.stddev = bin::get<double>(is);
    m.u_norm.mean = bin::get<double>(is);
    m.u_norm.stddev = bin::get<double>(is);
    auto enum_field = [&is](std::uint32_t limit) {
        const auto v = bin::get<std::uint32_t>(is);
        if (v > limit) throw FormatError("bad enumerator in model bundle");
        return v;
    };
    m.cfg.train_hold = static_cast<InputHold>(enum_field(1));
    m.cfg.infer_hold = static_cast<InputHold>(enum_field(1));
    m.cfg.train_integrator = static_cast<Integrator>(enum_field(1));
    m.cfg.infer_integrator = static_cast<Integrator>(enum_field(1));
    m.cfg.rk4_substeps = static_cast<int>(bin::get<std::uint32_t>(is));
    m.cfg.rtol = bin::get<double>(is);
    m.cfg.atol = bin::get<double>(is);
    m.phi_y = read_dmlp(is);
    m.psi_u = read_dmlp(is);
    m.decoder = read_dmlp(is);
    m.node = read_dmlp(is);
    m.cfg.n_l = m.n_l;
    const auto& s = m.phi_y.sizes();
    m.cfg.encoder_hidden.assign(s.begin() + 1, s.end() - 1);
    const auto& ns = m.node.sizes();
    m.cfg.node_hidden.assign(ns.begin() + 1, ns.end() - 1);
    if (m.phi_y.output_size() != m.n_l || m.node.input_size() != 2 * m.n_l || m.decoder.input_size() != m.n_l ||
        m.psi_u.input_size() != m.phi_y.input_size() || m.decoder.output_size() != m.phi_y.input_size()) {
        throw FormatError("model bundle networks are inconsistent");
    }
    return m;
}

Eigen::MatrixXd as_matrix(const FieldTrajectory& sampled) {
    if (sampled.components != 1) throw DimensionMismatch("expected a single-component trajectory");
    return Eigen::MatrixXd(sampled.data);
}

}  // namespace dedtwin
